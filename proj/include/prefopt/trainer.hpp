#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefopt/objectives.hpp"

namespace prefopt::trainer {

struct TrainConfig {
  rewards::ObjectiveConfig objective;
  double lr = 1e-3;
  int steps = 2000;
  int batch_size = 32;
  std::uint64_t seed = 1;
  bool deterministic = true;  // seed the shuffle order; false draws it from the OS
  bool plain_sgd = false;     // ablation: plain descent instead of Adam
  std::string telemetry_path; // when set, rows are streamed and flushed per step
};

// One training step's statistics, taken at the pre-update parameters.
// Alpha columns are NaN (serialized as empty) for every objective but acpo;
// effective_beta likewise for everything but beta-dpo.
struct TelemetryRow {
  int step = 0;
  double loss = 0.0;
  double mean_r_w = 0.0;
  double mean_r_l = 0.0;
  double mean_margin = 0.0;  // mean_r_w - mean_r_l
  double mean_logp_w = 0.0;
  double mean_logp_l = 0.0;
  double mean_alpha = std::numeric_limits<double>::quiet_NaN();
  double min_alpha = std::numeric_limits<double>::quiet_NaN();
  double max_alpha = std::numeric_limits<double>::quiet_NaN();
  double frac_alpha_lo = std::numeric_limits<double>::quiet_NaN();
  double frac_alpha_hi = std::numeric_limits<double>::quiet_NaN();
  double effective_beta = std::numeric_limits<double>::quiet_NaN();
};

struct AdamState {
  std::vector<double> m, v;
  long t = 0;
};

// Adaptive-moment update, decay 0.9/0.999, stabilizer 1e-8, bias-corrected.
void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state,
                 double lr);

// Raised when a step produces a non-finite loss.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(int step, int batch_id);
  int step;
  int batch_id;  // batch ordinal within the current epoch
};

struct TrainResult {
  policy::PolicyModel model;
  std::vector<TelemetryRow> telemetry;
};

// Seeded-shuffled mini-batch loop: rewards -> objective -> backward -> update,
// one telemetry row per step. The reference must be frozen; its log-probs are
// cached once up front.
TrainResult train(policy::PolicyModel model, const policy::PolicyModel& ref,
                  const synthdata::Dataset& data, const TrainConfig& cfg);

extern const char* const kTelemetryHeader;
std::string format_row(const TelemetryRow& row);  // 9 significant digits, NaN -> empty
void export_csv(std::span<const TelemetryRow> rows, const std::string& path);

}  // namespace prefopt::trainer
