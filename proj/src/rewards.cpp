#include "prefopt/rewards.hpp"

#include <stdexcept>

namespace prefopt::rewards {

void ObjectiveConfig::validate() const {
  if (beta <= 0.0) throw std::invalid_argument("config: beta must be > 0");
  if (delta <= 0.0) throw std::invalid_argument("config: delta must be > 0");
  if (epsilon <= 0.0) throw std::invalid_argument("config: epsilon must be > 0");
  if (!(0.0 <= alpha_lo && alpha_lo <= alpha_hi && alpha_hi <= 1.0)) {
    throw std::invalid_argument("config: need 0 <= alpha_lo <= alpha_hi <= 1");
  }
  if (kind == Objective::DpoShift && !(lambda > 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("config: dpo-shift lambda must be in (0, 1]");
  }
  if (simpo_beta <= 0.0) throw std::invalid_argument("config: simpo beta must be > 0");
}

graph::Var implicit_reward(graph::Var logp, double logp_ref, double beta, graph::Tape& tape) {
  return scale(sub(logp, tape.constant(logp_ref)), beta);
}

double avg_step_advantage(double r, int len) {
  if (len < 1) throw std::invalid_argument("avg_step_advantage: length must be >= 1");
  return r / static_cast<double>(len);
}

double advantage_target(int len_w, int len_l, double delta) {
  if (len_w < 1 || len_l < 1) throw std::invalid_argument("advantage_target: lengths must be >= 1");
  return delta * static_cast<double>(len_w + len_l);
}

RefLogProbs reference_log_probs(const policy::PolicyModel& ref, const synthdata::PreferencePair& p) {
  RefLogProbs out;
  out.w = policy::seq_log_prob(ref, p.x, p.y_w);
  out.l = policy::seq_log_prob(ref, p.x, p.y_l);
  return out;
}

RewardPack build_reward_pack(const policy::PolicyModel& model, const policy::PolicyVars& pv,
                             graph::Tape& tape, const policy::PolicyModel& ref,
                             const synthdata::PreferencePair& pair, const ObjectiveConfig& cfg,
                             const RefLogProbs* cached) {
  if (model.vocab != ref.vocab) {
    throw std::invalid_argument("implicit_reward: model vocab " + std::to_string(model.vocab) +
                                " differs from reference vocab " + std::to_string(ref.vocab));
  }
  const RefLogProbs refs = cached ? *cached : reference_log_probs(ref, pair);
  RewardPack pack;
  pack.logp_w = policy::seq_log_prob(model, pv, tape, pair.x, pair.y_w);
  pack.logp_l = policy::seq_log_prob(model, pv, tape, pair.x, pair.y_l);
  pack.logp_w_ref = refs.w;
  pack.logp_l_ref = refs.l;
  pack.r_w = implicit_reward(pack.logp_w, refs.w, cfg.beta, tape);
  pack.r_l = implicit_reward(pack.logp_l, refs.l, cfg.beta, tape);
  pack.len_w = static_cast<int>(pair.y_w.size());
  pack.len_l = static_cast<int>(pair.y_l.size());
  pack.tau = advantage_target(pack.len_w, pack.len_l, cfg.delta);
  return pack;
}

}  // namespace prefopt::rewards
