#include "prefopt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prefopt::objectives {

namespace {

using graph::Tape;
using graph::Var;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

void check_nonempty(std::span<const RewardPack> packs) {
  if (packs.empty()) throw std::invalid_argument("objective: empty batch");
}

// Arithmetic mean of per-pair scalars, accumulated in pair order so every
// objective reduces identically.
Var mean_of(const std::vector<Var>& terms, Tape&) {
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

// -log sigmoid(u) as a graph term.
Var nls(Var u) { return softplus(neg(u)); }

}  // namespace

LossBreakdown dpo_loss(std::span<const RewardPack> packs, Tape& tape) {
  check_nonempty(packs);
  LossBreakdown out;
  std::vector<Var> terms;
  terms.reserve(packs.size());
  for (const RewardPack& p : packs) {
    Var u = sub(p.r_w, p.r_l);
    out.margins.push_back(u.scalar());
    terms.push_back(nls(u));
  }
  out.loss = mean_of(terms, tape);
  return out;
}

LossBreakdown ipo_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                       Tape& tape) {
  check_nonempty(packs);
  // Squared distance of the raw log-ratio margin from 1/(2 beta).
  const double target = 1.0 / (2.0 * cfg.beta);
  LossBreakdown out;
  std::vector<Var> terms;
  terms.reserve(packs.size());
  for (const RewardPack& p : packs) {
    Var delta = scale(sub(p.r_w, p.r_l), 1.0 / cfg.beta);
    Var dist = sub(delta, tape.constant(target));
    out.margins.push_back(dist.scalar());
    terms.push_back(mul(dist, dist));
  }
  out.loss = mean_of(terms, tape);
  return out;
}

LossBreakdown simpo_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                         Tape& tape) {
  check_nonempty(packs);
  // Reference-free: length-normalized policy log-probs with a fixed margin.
  LossBreakdown out;
  std::vector<Var> terms;
  terms.reserve(packs.size());
  for (const RewardPack& p : packs) {
    Var w = scale(p.logp_w, cfg.simpo_beta / static_cast<double>(p.len_w));
    Var l = scale(p.logp_l, cfg.simpo_beta / static_cast<double>(p.len_l));
    Var u = sub(sub(w, l), tape.constant(cfg.simpo_gamma));
    out.margins.push_back(u.scalar());
    terms.push_back(nls(u));
  }
  out.loss = mean_of(terms, tape);
  return out;
}

LossBreakdown beta_dpo_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                            BetaDpoState& state, Tape& tape) {
  check_nonempty(packs);
  // Batch-adaptive KL coefficient: beta_t tracks how far the current batch's
  // mean raw margin sits from its running mean, clamped to [beta/2, 2 beta].
  double margin_mean = 0.0;
  for (const RewardPack& p : packs) {
    margin_mean += (p.r_w.scalar() - p.r_l.scalar()) / cfg.beta;
  }
  margin_mean /= static_cast<double>(packs.size());
  if (!state.initialized) {
    state.margin_ema = margin_mean;
    state.initialized = true;
  }
  const double raw = cfg.beta * (1.0 + cfg.beta_dpo_c * (margin_mean - state.margin_ema));
  const double beta_t = std::clamp(raw, 0.5 * cfg.beta, 2.0 * cfg.beta);
  state.margin_ema =
      cfg.beta_dpo_ema_decay * state.margin_ema + (1.0 - cfg.beta_dpo_ema_decay) * margin_mean;

  LossBreakdown out;
  out.effective_beta = beta_t;
  std::vector<Var> terms;
  terms.reserve(packs.size());
  const double rescale = beta_t / cfg.beta;  // rewards are linear in beta
  for (const RewardPack& p : packs) {
    Var u = scale(sub(p.r_w, p.r_l), rescale);
    out.margins.push_back(u.scalar());
    terms.push_back(nls(u));
  }
  out.loss = mean_of(terms, tape);
  return out;
}

LossBreakdown dpo_shift_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                             Tape& tape) {
  check_nonempty(packs);
  if (!(cfg.lambda > 0.0 && cfg.lambda <= 1.0)) {
    throw std::invalid_argument("dpo-shift: lambda must be in (0, 1]");
  }
  LossBreakdown out;
  std::vector<Var> terms;
  terms.reserve(packs.size());
  for (const RewardPack& p : packs) {
    Var u = cfg.shift_additive ? sub(sub(p.r_w, p.r_l), tape.constant(cfg.lambda))
                               : sub(p.r_w, scale(p.r_l, cfg.lambda));
    out.margins.push_back(u.scalar());
    terms.push_back(nls(u));
  }
  out.loss = mean_of(terms, tape);
  return out;
}

AlphaRecord acpo_alpha(double r_w, double r_l, double tau, const ObjectiveConfig& cfg) {
  AlphaRecord rec;
  const double mag = std::abs(r_l);
  rec.denom_floored = mag < cfg.epsilon;
  // sign(0) := -1: at initialization r_l == 0 and the rejected reward spends
  // training below zero, so the floor resolves toward that regime.
  const double sign = r_l > 0.0 ? 1.0 : -1.0;
  const double denom = sign * std::max(mag, cfg.epsilon);
  rec.alpha_raw = (r_w - tau) / denom;
  rec.clamped_lo = rec.alpha_raw < cfg.alpha_lo;
  rec.clamped_hi = rec.alpha_raw > cfg.alpha_hi;
  rec.alpha_hat = std::clamp(rec.alpha_raw, cfg.alpha_lo, cfg.alpha_hi);
  return rec;
}

std::vector<AlphaRecord> acpo_alphas(std::span<const RewardPack> packs,
                                     const ObjectiveConfig& cfg) {
  check_nonempty(packs);
  std::vector<AlphaRecord> recs;
  recs.reserve(packs.size());
  if (cfg.tau_mode == TauMode::BatchMean) {
    double rw = 0.0, rl = 0.0, tau = 0.0;
    for (const RewardPack& p : packs) {
      rw += p.r_w.scalar();
      rl += p.r_l.scalar();
      tau += p.tau;
    }
    const double n = static_cast<double>(packs.size());
    const AlphaRecord rec = acpo_alpha(rw / n, rl / n, tau / n, cfg);
    recs.assign(packs.size(), rec);
  } else {
    for (const RewardPack& p : packs) {
      recs.push_back(acpo_alpha(p.r_w.scalar(), p.r_l.scalar(), p.tau, cfg));
    }
  }
  return recs;
}

LossBreakdown acpo_loss_fixed_alphas(std::span<const RewardPack> packs,
                                     std::span<const AlphaRecord> recs, Tape& tape) {
  check_nonempty(packs);
  if (recs.size() != packs.size()) {
    throw std::invalid_argument("acpo_loss: one alpha record per pair required");
  }
  LossBreakdown out;
  out.alphas.assign(recs.begin(), recs.end());
  std::vector<Var> terms;
  terms.reserve(packs.size());
  for (std::size_t i = 0; i < packs.size(); ++i) {
    // alpha_hat enters as a plain constant: the stop-gradient.
    Var u = sub(packs[i].r_w, scale(packs[i].r_l, recs[i].alpha_hat));
    out.margins.push_back(u.scalar());
    terms.push_back(nls(u));
  }
  out.loss = mean_of(terms, tape);
  return out;
}

LossBreakdown acpo_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                        Tape& tape, StopGradMode sg) {
  check_nonempty(packs);
  const std::vector<AlphaRecord> recs = acpo_alphas(packs, cfg);
  if (sg == StopGradMode::Enforced) return acpo_loss_fixed_alphas(packs, recs, tape);

  // Faulty variant for the stop-gradient oracle.
  LossBreakdown out;
  out.alphas = recs;
  std::vector<Var> terms;
  terms.reserve(packs.size());
  for (std::size_t i = 0; i < packs.size(); ++i) {
    const RewardPack& p = packs[i];
    const AlphaRecord& rec = recs[i];
    Var u;
    const bool ratio_active = !rec.clamped_lo && !rec.clamped_hi && !rec.denom_floored;
    if (ratio_active && cfg.tau_mode == TauMode::PerPair) {
      // With the ratio active, alpha * r_l == r_w - tau, so differentiating
      // through alpha collapses the margin to the constant tau. Build exactly
      // that, letting gradient leak through the ratio.
      u = sub(p.r_w, sub(p.r_w, tape.constant(p.tau)));
    } else {
      // Where the clamp or the floor is active the ratio's local derivative
      // is zero anyway; the coefficient stays a constant.
      u = sub(p.r_w, scale(p.r_l, rec.alpha_hat));
    }
    out.margins.push_back(u.scalar());
    terms.push_back(nls(u));
  }
  out.loss = mean_of(terms, tape);
  return out;
}

LossBreakdown objective_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                             BetaDpoState& state, Tape& tape, StopGradMode sg) {
  switch (cfg.kind) {
    case Objective::Dpo: return dpo_loss(packs, tape);
    case Objective::Ipo: return ipo_loss(packs, cfg, tape);
    case Objective::Simpo: return simpo_loss(packs, cfg, tape);
    case Objective::BetaDpo: return beta_dpo_loss(packs, cfg, state, tape);
    case Objective::DpoShift: return dpo_shift_loss(packs, cfg, tape);
    case Objective::Acpo: return acpo_loss(packs, cfg, tape, sg);
  }
  throw std::invalid_argument("objective_loss: unknown objective");
}

std::vector<double> acpo_analytic_gradient(const policy::PolicyModel& model,
                                           const policy::PolicyModel& ref,
                                           std::span<const synthdata::PreferencePair> batch,
                                           const ObjectiveConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("acpo_analytic_gradient: empty batch");

  // Per-pair reward values and parameter gradients, each from its own tape.
  struct PairEval {
    double r_w, r_l, tau;
    std::vector<double> grad_w, grad_l;
  };
  std::vector<PairEval> evals;
  evals.reserve(batch.size());
  for (const synthdata::PreferencePair& pair : batch) {
    PairEval ev;
    ev.grad_w.assign(model.param_count(), 0.0);
    ev.grad_l.assign(model.param_count(), 0.0);
    const rewards::RefLogProbs refs = rewards::reference_log_probs(ref, pair);
    {
      graph::Tape tape;
      policy::PolicyVars pv = policy::make_policy_vars(tape, model);
      Var r_w = rewards::implicit_reward(policy::seq_log_prob(model, pv, tape, pair.x, pair.y_w),
                                         refs.w, cfg.beta, tape);
      ev.r_w = r_w.scalar();
      tape.backward(r_w);
      policy::read_grads(model, pv, ev.grad_w);
    }
    {
      graph::Tape tape;
      policy::PolicyVars pv = policy::make_policy_vars(tape, model);
      Var r_l = rewards::implicit_reward(policy::seq_log_prob(model, pv, tape, pair.x, pair.y_l),
                                         refs.l, cfg.beta, tape);
      ev.r_l = r_l.scalar();
      tape.backward(r_l);
      policy::read_grads(model, pv, ev.grad_l);
    }
    ev.tau = rewards::advantage_target(static_cast<int>(pair.y_w.size()),
                                       static_cast<int>(pair.y_l.size()), cfg.delta);
    evals.push_back(std::move(ev));
  }

  // Calibration coefficients from the same values the loss would see.
  std::vector<AlphaRecord> recs;
  recs.reserve(evals.size());
  if (cfg.tau_mode == TauMode::BatchMean) {
    double rw = 0.0, rl = 0.0, tau = 0.0;
    for (const PairEval& ev : evals) {
      rw += ev.r_w;
      rl += ev.r_l;
      tau += ev.tau;
    }
    const double n = static_cast<double>(evals.size());
    recs.assign(evals.size(), acpo_alpha(rw / n, rl / n, tau / n, cfg));
  } else {
    for (const PairEval& ev : evals) recs.push_back(acpo_alpha(ev.r_w, ev.r_l, ev.tau, cfg));
  }

  std::vector<double> grad(model.param_count(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(evals.size());
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const PairEval& ev = evals[i];
    const double alpha = recs[i].alpha_hat;
    const double u = ev.r_w - alpha * ev.r_l;
    const double coeff = -(1.0 - stable_sigmoid(u)) * inv_n;
    for (std::size_t j = 0; j < grad.size(); ++j) {
      grad[j] += coeff * (ev.grad_w[j] - alpha * ev.grad_l[j]);
    }
  }
  return grad;
}

const char* objective_name(Objective kind) {
  switch (kind) {
    case Objective::Dpo: return "dpo";
    case Objective::Ipo: return "ipo";
    case Objective::Simpo: return "simpo";
    case Objective::BetaDpo: return "beta-dpo";
    case Objective::DpoShift: return "dpo-shift";
    case Objective::Acpo: return "acpo";
  }
  return "?";
}

Objective parse_objective(std::string_view name) {
  if (name == "dpo") return Objective::Dpo;
  if (name == "ipo") return Objective::Ipo;
  if (name == "simpo") return Objective::Simpo;
  if (name == "beta-dpo") return Objective::BetaDpo;
  if (name == "dpo-shift") return Objective::DpoShift;
  if (name == "acpo") return Objective::Acpo;
  throw std::invalid_argument("unknown objective '" + std::string(name) +
                              "' (expected dpo|ipo|simpo|beta-dpo|dpo-shift|acpo)");
}

}  // namespace prefopt::objectives
