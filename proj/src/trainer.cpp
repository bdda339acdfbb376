#include "prefopt/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "prefopt/rng.hpp"

namespace prefopt::trainer {

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state,
                 double lr) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_update: params/grads size mismatch");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  state.t += 1;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

NumericalError::NumericalError(int step_, int batch_id_)
    : std::runtime_error("non-finite loss at step " + std::to_string(step_) + " (batch " +
                         std::to_string(batch_id_) + ")"),
      step(step_),
      batch_id(batch_id_) {}

const char* const kTelemetryHeader =
    "step,loss,mean_r_w,mean_r_l,mean_margin,mean_logp_w,mean_logp_l,mean_alpha,min_alpha,"
    "max_alpha,frac_alpha_lo,frac_alpha_hi,effective_beta";

namespace {

void append_field(std::string& out, double v) {
  out.push_back(',');
  if (std::isnan(v)) return;  // absent column
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  out += buf;
}

}  // namespace

std::string format_row(const TelemetryRow& r) {
  std::string out = std::to_string(r.step);
  append_field(out, r.loss);
  append_field(out, r.mean_r_w);
  append_field(out, r.mean_r_l);
  append_field(out, r.mean_margin);
  append_field(out, r.mean_logp_w);
  append_field(out, r.mean_logp_l);
  append_field(out, r.mean_alpha);
  append_field(out, r.min_alpha);
  append_field(out, r.max_alpha);
  append_field(out, r.frac_alpha_lo);
  append_field(out, r.frac_alpha_hi);
  append_field(out, r.effective_beta);
  return out;
}

void export_csv(std::span<const TelemetryRow> rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_csv: cannot open " + path);
  out << kTelemetryHeader << "\n";
  for (const TelemetryRow& r : rows) out << format_row(r) << "\n";
  if (!out) throw std::runtime_error("export_csv: write failed for " + path);
}

TrainResult train(policy::PolicyModel model, const policy::PolicyModel& ref,
                  const synthdata::Dataset& data, const TrainConfig& cfg) {
  cfg.objective.validate();
  if (!ref.frozen) throw std::invalid_argument("train: reference model must be frozen");
  if (data.items.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (cfg.lr <= 0.0) throw std::invalid_argument("train: learning rate must be > 0");
  if (cfg.steps < 0) throw std::invalid_argument("train: steps must be >= 0");

  TrainResult result;
  result.telemetry.reserve(cfg.steps);

  std::ofstream stream;
  if (!cfg.telemetry_path.empty()) {
    stream.open(cfg.telemetry_path);
    if (!stream) throw std::runtime_error("train: cannot open " + cfg.telemetry_path);
    stream << kTelemetryHeader << "\n" << std::flush;
  }

  // The reference is frozen, so its log-probs are fixed for the whole run.
  std::vector<rewards::RefLogProbs> ref_cache;
  ref_cache.reserve(data.items.size());
  for (const synthdata::PreferencePair& p : data.items) {
    ref_cache.push_back(rewards::reference_log_probs(ref, p));
  }

  const int n_pairs = static_cast<int>(data.items.size());
  const int batch = std::min(cfg.batch_size, n_pairs);
  const int batches_per_epoch = n_pairs / batch;

  const std::uint64_t shuffle_seed =
      cfg.deterministic ? mix_seed(cfg.seed, 0x73687566ull) : std::random_device{}();
  Rng shuffle_rng(shuffle_seed);
  std::vector<int> order(n_pairs);
  std::iota(order.begin(), order.end(), 0);

  AdamState adam;
  objectives::BetaDpoState beta_state;
  std::vector<double> grads(model.param_count());

  for (int step = 0; step < cfg.steps; ++step) {
    const int batch_id = step % batches_per_epoch;
    if (batch_id == 0) shuffle_rng.shuffle(order);

    graph::Tape tape;
    policy::PolicyVars pv = policy::make_policy_vars(tape, model);
    std::vector<rewards::RewardPack> packs;
    packs.reserve(batch);
    for (int i = 0; i < batch; ++i) {
      const int pair_idx = order[static_cast<std::size_t>(batch_id) * batch + i];
      packs.push_back(rewards::build_reward_pack(model, pv, tape, ref, data.items[pair_idx],
                                                 cfg.objective, &ref_cache[pair_idx]));
    }

    objectives::LossBreakdown breakdown =
        objectives::objective_loss(packs, cfg.objective, beta_state, tape);
    const double loss = breakdown.loss.scalar();
    if (!std::isfinite(loss)) throw NumericalError(step, batch_id);

    TelemetryRow row;
    row.step = step;
    row.loss = loss;
    for (const rewards::RewardPack& p : packs) {
      row.mean_r_w += p.r_w.scalar();
      row.mean_r_l += p.r_l.scalar();
      row.mean_logp_w += p.logp_w.scalar();
      row.mean_logp_l += p.logp_l.scalar();
    }
    const double inv_b = 1.0 / static_cast<double>(batch);
    row.mean_r_w *= inv_b;
    row.mean_r_l *= inv_b;
    row.mean_logp_w *= inv_b;
    row.mean_logp_l *= inv_b;
    row.mean_margin = row.mean_r_w - row.mean_r_l;
    row.effective_beta = breakdown.effective_beta;
    if (!breakdown.alphas.empty()) {
      double sum = 0.0, lo_count = 0.0, hi_count = 0.0;
      double mn = breakdown.alphas[0].alpha_hat, mx = mn;
      for (const objectives::AlphaRecord& rec : breakdown.alphas) {
        sum += rec.alpha_hat;
        mn = std::min(mn, rec.alpha_hat);
        mx = std::max(mx, rec.alpha_hat);
        lo_count += rec.clamped_lo ? 1.0 : 0.0;
        hi_count += rec.clamped_hi ? 1.0 : 0.0;
      }
      row.mean_alpha = sum * inv_b;
      row.min_alpha = mn;
      row.max_alpha = mx;
      row.frac_alpha_lo = lo_count * inv_b;
      row.frac_alpha_hi = hi_count * inv_b;
    }

    tape.backward(breakdown.loss);
    std::fill(grads.begin(), grads.end(), 0.0);
    policy::read_grads(model, pv, grads);

    if (cfg.plain_sgd) {
      for (std::size_t i = 0; i < grads.size(); ++i) model.params[i] -= cfg.lr * grads[i];
    } else {
      adam_update(model.params, grads, adam, cfg.lr);
    }

    if (stream.is_open()) stream << format_row(row) << "\n" << std::flush;
    result.telemetry.push_back(row);
  }

  result.model = std::move(model);
  return result;
}

}  // namespace prefopt::trainer
