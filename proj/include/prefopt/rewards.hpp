#pragma once

#include <string>

#include "prefopt/graph.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/synthdata.hpp"

namespace prefopt::rewards {

enum class Objective { Dpo, Ipo, Simpo, BetaDpo, DpoShift, Acpo };
enum class TauMode { PerPair, BatchMean };

// Tighter clipping window used for dynamics experiments; the formal bounds
// [0, 1] stay the default.
constexpr double kEmpiricalAlphaLo = 0.3;
constexpr double kEmpiricalAlphaHi = 0.95;

struct ObjectiveConfig {
  Objective kind = Objective::Dpo;
  double beta = 0.1;     // KL coefficient
  double delta = 0.1;    // per-token advantage target
  double epsilon = 1e-5; // floor on |r_l| in the calibration denominator
  double alpha_lo = 0.0;
  double alpha_hi = 1.0;
  TauMode tau_mode = TauMode::PerPair;

  double lambda = 0.95;         // dpo-shift: multiplier on r_l
  bool shift_additive = false;  // dpo-shift variant: subtract lambda from the margin instead
  double simpo_beta = 2.0;
  double simpo_gamma = 0.5;
  double beta_dpo_c = 0.1;          // sensitivity to the batch-margin deviation
  double beta_dpo_ema_decay = 0.9;  // decay of the running margin mean

  void validate() const;  // throws std::invalid_argument
};

// Per-pair quantities every objective consumes. r_w / r_l are the beta-scaled
// policy-vs-reference log ratios and stay differentiable; the reference terms
// are plain numbers and carry no gradient.
struct RewardPack {
  graph::Var r_w, r_l;
  graph::Var logp_w, logp_l;  // raw policy log-probs (SimPO, telemetry)
  double logp_w_ref = 0.0, logp_l_ref = 0.0;
  int len_w = 0, len_l = 0;
  double tau = 0.0;  // delta * (len_w + len_l)
};

// beta * (log pi_theta(y|x) - log pi_ref(y|x)); the reference term enters as a
// constant.
graph::Var implicit_reward(graph::Var logp, double logp_ref, double beta, graph::Tape& tape);

// r / |y|: length-invariant per-token confidence.
double avg_step_advantage(double r, int len);

// delta * (len_w + len_l): target margin scaled by combined response length.
double advantage_target(int len_w, int len_l, double delta);

struct RefLogProbs {
  double w = 0.0;
  double l = 0.0;
};

// Reference log-probs for one pair, computed without recording a graph.
RefLogProbs reference_log_probs(const policy::PolicyModel& ref, const synthdata::PreferencePair& p);

// Builds the full pack for one pair on the given tape. `cached` skips the
// reference evaluation (the reference never changes during a run).
RewardPack build_reward_pack(const policy::PolicyModel& model, const policy::PolicyVars& pv,
                             graph::Tape& tape, const policy::PolicyModel& ref,
                             const synthdata::PreferencePair& pair, const ObjectiveConfig& cfg,
                             const RefLogProbs* cached = nullptr);

}  // namespace prefopt::rewards
