#pragma once

#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "prefopt/rewards.hpp"

namespace prefopt::objectives {

using rewards::Objective;
using rewards::ObjectiveConfig;
using rewards::RewardPack;
using rewards::TauMode;

// One calibration-coefficient evaluation: the raw constrained-solve ratio and
// the clamped value actually applied to the rejected reward.
struct AlphaRecord {
  double alpha_raw = 0.0;
  double alpha_hat = 0.0;
  bool clamped_lo = false;
  bool clamped_hi = false;
  bool denom_floored = false;
};

struct LossBreakdown {
  graph::Var loss;              // batch mean
  std::vector<double> margins;  // per-pair argument of the core term
  std::vector<AlphaRecord> alphas;  // acpo only
  double effective_beta = std::numeric_limits<double>::quiet_NaN();  // beta-dpo only
};

struct BetaDpoState {
  bool initialized = false;
  double margin_ema = 0.0;
};

// Test hook for the stop-gradient oracle: `Broken` rebuilds the rejected-side
// term differentiably through the calibration ratio wherever that ratio is
// active (not clamped, denominator not floored), emulating a missing detach.
// Training never uses it.
enum class StopGradMode { Enforced, Broken };

LossBreakdown dpo_loss(std::span<const RewardPack> packs, graph::Tape& tape);
LossBreakdown ipo_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                       graph::Tape& tape);
LossBreakdown simpo_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                         graph::Tape& tape);
LossBreakdown beta_dpo_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                            BetaDpoState& state, graph::Tape& tape);
LossBreakdown dpo_shift_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                             graph::Tape& tape);

// Closed-form calibration coefficient: (r_w - tau) / denom with the denominator
// sign-preserving and floored at epsilon (sign(0) := -1), then clamped to
// [alpha_lo, alpha_hi]. Pure value computation; never differentiated.
AlphaRecord acpo_alpha(double r_w, double r_l, double tau, const ObjectiveConfig& cfg);

// Per-pair records under cfg.tau_mode: per-pair taus, or one record from the
// batch means replicated across the batch.
std::vector<AlphaRecord> acpo_alphas(std::span<const RewardPack> packs,
                                     const ObjectiveConfig& cfg);

LossBreakdown acpo_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                        graph::Tape& tape, StopGradMode sg = StopGradMode::Enforced);

// Loss with externally fixed coefficients. This is the function the optimizer
// actually differentiates: under the stop-gradient the coefficients are data,
// not parameters, so finite-difference probes must hold them at their
// base-point values.
LossBreakdown acpo_loss_fixed_alphas(std::span<const RewardPack> packs,
                                     std::span<const AlphaRecord> recs, graph::Tape& tape);

// Dispatch on cfg.kind. `state` is consulted only by beta-dpo.
LossBreakdown objective_loss(std::span<const RewardPack> packs, const ObjectiveConfig& cfg,
                             BetaDpoState& state, graph::Tape& tape,
                             StopGradMode sg = StopGradMode::Enforced);

// Batch-mean gradient -(1 - sigma(u)) * (grad r_w - alpha_hat * grad r_l),
// assembled from two independent backward passes per pair plus plain
// arithmetic. The external oracle for the autodiff gradient of acpo_loss.
std::vector<double> acpo_analytic_gradient(const policy::PolicyModel& model,
                                           const policy::PolicyModel& ref,
                                           std::span<const synthdata::PreferencePair> batch,
                                           const ObjectiveConfig& cfg);

const char* objective_name(Objective kind);
Objective parse_objective(std::string_view name);  // throws std::invalid_argument

}  // namespace prefopt::objectives
