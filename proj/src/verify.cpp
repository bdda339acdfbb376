#include "prefopt/verify.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "prefopt/rng.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt::verify {

namespace {

using objectives::AlphaRecord;
using objectives::LossBreakdown;
using objectives::StopGradMode;
using rewards::Objective;
using rewards::ObjectiveConfig;
using rewards::RewardPack;

struct ToySetup {
  synthdata::WorldSpec world;
  std::vector<synthdata::PreferencePair> batch;
  policy::PolicyModel model;
  policy::PolicyModel ref;
  std::vector<rewards::RefLogProbs> ref_cache;
};

// Small mlp world over V = 32 with a model/reference pair that disagrees, so
// rewards are spread across the clamp regimes.
ToySetup make_toy(std::uint64_t seed, int batch_size = 3) {
  ToySetup s;
  s.world.vocab = 32;
  s.world.prompt_len = 2;
  s.world.resp_len = 4;
  s.world.overlap = 0.5;
  s.world.seed = mix_seed(seed, 0x746f79ull);
  const std::vector<int> planted = synthdata::planted_map(s.world);
  Rng rng(mix_seed(seed, 0x7061697273ull));
  for (int i = 0; i < batch_size; ++i) {
    s.batch.push_back(synthdata::sample_pair(s.world, planted, rng));
  }
  policy::MlpDims dims{8, 4, 16};
  s.model = policy::PolicyModel::init(policy::ModelKind::Mlp, {32}, mix_seed(seed, 1), dims);
  s.ref = clone_as_reference(
      policy::PolicyModel::init(policy::ModelKind::Mlp, {32}, mix_seed(seed, 2), dims));
  for (const auto& p : s.batch) s.ref_cache.push_back(rewards::reference_log_probs(s.ref, p));
  return s;
}

// beta = 1, small delta: reward magnitudes land near tau so the calibration
// ratio is frequently inside (alpha_lo, alpha_hi) rather than pinned at a clamp.
ObjectiveConfig config_for(Objective kind) {
  ObjectiveConfig cfg;
  cfg.kind = kind;
  cfg.beta = 1.0;
  cfg.delta = 0.05;
  return cfg;
}

std::vector<RewardPack> build_packs(const ToySetup& s, const policy::PolicyModel& model,
                                    const policy::PolicyVars& pv, graph::Tape& tape,
                                    const ObjectiveConfig& cfg) {
  std::vector<RewardPack> packs;
  packs.reserve(s.batch.size());
  for (std::size_t i = 0; i < s.batch.size(); ++i) {
    packs.push_back(
        rewards::build_reward_pack(model, pv, tape, s.ref, s.batch[i], cfg, &s.ref_cache[i]));
  }
  return packs;
}

}  // namespace

CheckResult gradcheck(Objective kind, int seeds) {
  CheckResult result;
  result.name = std::string("gradcheck-") + objectives::objective_name(kind);
  result.pass = true;

  constexpr double kH = 1e-4;
  constexpr double kTol = 1e-4;
  constexpr std::size_t kCoords = 200;

  for (int s = 0; s < seeds; ++s) {
    ToySetup setup = make_toy(1000 + static_cast<std::uint64_t>(s));
    const ObjectiveConfig cfg = config_for(kind);

    // acpo: coefficients frozen at the base point (see header).
    std::vector<AlphaRecord> base_recs;
    if (kind == Objective::Acpo) {
      graph::Tape tape;
      policy::PolicyVars pv = policy::make_policy_vars(tape, setup.model);
      auto packs = build_packs(setup, setup.model, pv, tape, cfg);
      base_recs = objectives::acpo_alphas(packs, cfg);
    }

    policy::PolicyModel scratch = setup.model;
    graph::GradFn f = [&](std::span<const double> params, std::span<double> grad_out) {
      std::copy(params.begin(), params.end(), scratch.params.begin());
      graph::Tape tape;
      policy::PolicyVars pv = policy::make_policy_vars(tape, scratch);
      auto packs = build_packs(setup, scratch, pv, tape, cfg);
      LossBreakdown breakdown;
      if (kind == Objective::Acpo) {
        breakdown = objectives::acpo_loss_fixed_alphas(packs, base_recs, tape);
      } else {
        objectives::BetaDpoState state;  // fresh: effective beta stays at beta
        breakdown = objectives::objective_loss(packs, cfg, state, tape);
      }
      if (!grad_out.empty()) {
        tape.backward(breakdown.loss);
        std::fill(grad_out.begin(), grad_out.end(), 0.0);
        policy::read_grads(scratch, pv, grad_out);
      }
      return breakdown.loss.scalar();
    };

    std::vector<double> params = setup.model.params;
    Rng coord_rng(mix_seed(3000 + static_cast<std::uint64_t>(s), 0x636f6f7264ull));
    std::vector<std::size_t> coords(kCoords);
    for (std::size_t& c : coords) c = coord_rng.below(params.size());

    const graph::FiniteDiffReport report =
        graph::finite_diff_check(f, params, kH, kTol, coords);
    result.max_err = std::max(result.max_err, report.max_rel_err);
    if (!report.pass) {
      result.pass = false;
      result.detail = "seed " + std::to_string(s) + " worst coordinate " +
                      std::to_string(report.worst_coord);
      break;
    }
  }
  if (result.detail.empty()) {
    result.detail = std::to_string(seeds) + " models, 200 coords each";
  }
  return result;
}

CheckResult stop_gradient_oracle(int batches, StopGradMode sg) {
  CheckResult result;
  result.name = "stopgrad-oracle";
  result.pass = true;
  constexpr double kTol = 1e-10;

  int active_pairs = 0;
  for (int b = 0; b < batches; ++b) {
    ToySetup setup = make_toy(5000 + static_cast<std::uint64_t>(b), 4);
    const ObjectiveConfig cfg = config_for(Objective::Acpo);

    graph::Tape tape;
    policy::PolicyVars pv = policy::make_policy_vars(tape, setup.model);
    auto packs = build_packs(setup, setup.model, pv, tape, cfg);
    LossBreakdown breakdown = objectives::acpo_loss(packs, cfg, tape, sg);
    for (const AlphaRecord& rec : breakdown.alphas) {
      if (!rec.clamped_lo && !rec.clamped_hi && !rec.denom_floored) ++active_pairs;
    }
    tape.backward(breakdown.loss);
    std::vector<double> autodiff(setup.model.param_count(), 0.0);
    policy::read_grads(setup.model, pv, autodiff);

    const std::vector<double> oracle =
        objectives::acpo_analytic_gradient(setup.model, setup.ref, setup.batch, cfg);

    double max_abs = 0.0, max_diff = 0.0;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      max_abs = std::max({max_abs, std::abs(autodiff[i]), std::abs(oracle[i])});
      max_diff = std::max(max_diff, std::abs(autodiff[i] - oracle[i]));
    }
    const double rel = max_diff / std::max(max_abs, 1e-12);
    result.max_err = std::max(result.max_err, rel);
    if (rel >= kTol) {
      result.pass = false;
      result.detail = "batch " + std::to_string(b);
      break;
    }
  }
  if (active_pairs == 0) {
    // The fault only leaks where the ratio is active; without such pairs the
    // mutation check would be vacuous.
    result.pass = false;
    result.detail = "no active-ratio pairs sampled";
  }
  if (result.detail.empty()) {
    result.detail = std::to_string(batches) + " batches, " + std::to_string(active_pairs) +
                    " active-ratio pairs";
  }
  return result;
}

CheckResult alpha_boundary() {
  CheckResult result;
  result.name = "alpha-boundary";
  result.pass = true;

  ObjectiveConfig cfg;
  cfg.kind = Objective::Acpo;

  struct Case {
    double r_w, tau, r_l;
    double want_raw, want_hat;
    bool want_floored;
  };
  // Interior ratio; chosen already past target; under-performing pair; tiny
  // positive denominator hitting the floor.
  const Case cases[] = {
      {1.0, 2.0, -2.0, 0.5, 0.5, false},
      {3.0, 2.0, -2.0, -0.5, 0.0, false},
      {-1.0, 2.0, -1.0, 3.0, 1.0, false},
      {0.0, 2.0, 1e-9, -2.0 / 1e-5, 0.0, true},  // raw ratio ~ -2e5, floored denom
  };
  int idx = 0;
  for (const Case& c : cases) {
    const AlphaRecord rec = objectives::acpo_alpha(c.r_w, c.r_l, c.tau, cfg);
    if (rec.alpha_raw != c.want_raw || rec.alpha_hat != c.want_hat ||
        rec.denom_floored != c.want_floored) {
      result.pass = false;
      result.detail = "boundary case " + std::to_string(idx) + " mismatch";
      return result;
    }
    ++idx;
  }

  Rng rng(0xa1fa);
  for (int i = 0; i < 1000; ++i) {
    const double r_w = rng.uniform(-50.0, 50.0);
    // every fifth draw stresses the denominator floor
    const double r_l = (i % 5 == 0) ? rng.uniform(-2.0 * cfg.epsilon, 2.0 * cfg.epsilon)
                                    : rng.uniform(-50.0, 50.0);
    const double tau = rng.uniform(0.0, 20.0);
    const AlphaRecord rec = objectives::acpo_alpha(r_w, r_l, tau, cfg);
    const bool ok = std::isfinite(rec.alpha_hat) && std::isfinite(rec.alpha_raw) &&
                    rec.alpha_hat >= cfg.alpha_lo && rec.alpha_hat <= cfg.alpha_hi;
    if (!ok) {
      result.pass = false;
      result.detail = "fuzz triple " + std::to_string(i);
      return result;
    }
  }
  result.detail = "4 exact cases, 1000 fuzzed triples";
  return result;
}

CheckResult degenerations() {
  CheckResult result;
  result.name = "degenerations";
  result.pass = true;

  for (int s = 0; s < 10; ++s) {
    ToySetup setup = make_toy(8000 + static_cast<std::uint64_t>(s), 4);
    ObjectiveConfig cfg = config_for(Objective::Acpo);

    auto run = [&](auto&& make_loss) {
      graph::Tape tape;
      policy::PolicyVars pv = policy::make_policy_vars(tape, setup.model);
      auto packs = build_packs(setup, setup.model, pv, tape, cfg);
      LossBreakdown b = make_loss(packs, tape);
      tape.backward(b.loss);
      std::vector<double> grad(setup.model.param_count(), 0.0);
      policy::read_grads(setup.model, pv, grad);
      return std::make_pair(b.loss.scalar(), std::move(grad));
    };

    auto [dpo_value, dpo_grad] = run([&](std::span<const RewardPack> packs, graph::Tape& tape) {
      return objectives::dpo_loss(packs, tape);
    });

    ObjectiveConfig unit = cfg;
    unit.alpha_lo = unit.alpha_hi = 1.0;
    auto [acpo_value, acpo_grad] = run([&](std::span<const RewardPack> packs, graph::Tape& tape) {
      return objectives::acpo_loss(packs, unit, tape);
    });

    ObjectiveConfig shift = cfg;
    shift.kind = Objective::DpoShift;
    shift.lambda = 1.0;
    auto [shift_value, shift_grad] = run([&](std::span<const RewardPack> packs, graph::Tape& tape) {
      return objectives::dpo_shift_loss(packs, shift, tape);
    });

    const bool values_equal = acpo_value == dpo_value && shift_value == dpo_value;
    const bool grads_equal = acpo_grad == dpo_grad && shift_grad == dpo_grad;
    if (!values_equal || !grads_equal) {
      result.pass = false;
      result.detail = "seed " + std::to_string(s) + (values_equal ? " (gradients)" : " (values)");
      return result;
    }
  }
  result.detail = "alpha==1 and lambda==1 reduce to dpo bitwise, 10 batches";
  return result;
}

std::vector<CheckResult> run_all(int seeds, bool inject_alpha_fault) {
  std::vector<CheckResult> results;
  for (Objective kind : {Objective::Dpo, Objective::Ipo, Objective::Simpo, Objective::BetaDpo,
                         Objective::DpoShift, Objective::Acpo}) {
    results.push_back(gradcheck(kind, seeds));
  }
  results.push_back(stop_gradient_oracle(
      seeds, inject_alpha_fault ? StopGradMode::Broken : StopGradMode::Enforced));
  results.push_back(alpha_boundary());
  results.push_back(degenerations());
  return results;
}

std::string format_result(const CheckResult& r) {
  char err[32];
  std::snprintf(err, sizeof err, "%.3g", r.max_err);
  std::string line = r.name;
  line.resize(std::max<std::size_t>(line.size() + 2, 22), ' ');
  line += "max err ";
  line += err;
  if (!r.detail.empty()) line += "  (" + r.detail + ")";
  line += r.pass ? "  PASS" : "  FAIL";
  return line;
}

}  // namespace prefopt::verify
