#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefopt/graph.hpp"

namespace prefopt::policy {

struct Vocab {
  int size = 0;  // token ids are 0..size-1
};

enum class ModelKind { Bigram, Mlp };

struct MlpDims {
  int embed = 16;
  int window = 8;
  int hidden = 32;
};

using TokenSeq = std::vector<int>;

// Named view into the flat parameter vector, row-major.
struct ParamSlot {
  const char* name;
  int rows;
  int cols;
  std::size_t offset;
};

// Tiny autoregressive next-token model. Bigram: a VxV logits table indexed by
// the previous token. Mlp: last `window` tokens embedded, concatenated and fed
// through one sigmoid hidden layer. All parameters live in one flat vector.
class PolicyModel {
 public:
  // Parameters i.i.d. uniform on [-0.1, 0.1), deterministically from seed.
  static PolicyModel init(ModelKind kind, Vocab vocab, std::uint64_t seed, MlpDims dims = {});

  ModelKind kind = ModelKind::Bigram;
  int vocab = 0;
  MlpDims dims;
  bool frozen = false;
  std::vector<double> params;

  std::vector<ParamSlot> slots() const;
  std::size_t param_count() const { return params.size(); }

  // Contexts shorter than the window are left-padded with this reserved id;
  // it embeds as a constant zero row and is not a trainable parameter.
  int pad_token() const { return vocab; }
};

// Deep copy marked frozen; later updates to the original never touch it.
PolicyModel clone_as_reference(const PolicyModel& m);

// Parameter leaves of one model on one tape, aligned with slots().
struct PolicyVars {
  std::vector<graph::Var> slot_vars;
};
PolicyVars make_policy_vars(graph::Tape& tape, const PolicyModel& m);

// Adds each slot's grad into `out` (flat, same layout as params).
void read_grads(const PolicyModel& m, const PolicyVars& pv, std::span<double> out);

// Sum over response tokens of log pi(y_t | x, y_<t). Prompt tokens condition
// but are never scored. Differentiable against the leaves in pv.
graph::Var seq_log_prob(const PolicyModel& m, const PolicyVars& pv, graph::Tape& tape,
                        std::span<const int> x, std::span<const int> y);

// Value-only evaluation on a throwaway tape; same ops in the same order as the
// recorded path, so values are bit-identical.
double seq_log_prob(const PolicyModel& m, std::span<const int> x, std::span<const int> y);

// Per-position next-token log-prob rows (|y| x V), value only. Test support
// for normalization checks.
std::vector<std::vector<double>> next_token_log_probs(const PolicyModel& m,
                                                      std::span<const int> x,
                                                      std::span<const int> y);

// Plain-text checkpoint; exact round-trip (shortest-round-trip doubles).
void save_checkpoint(const PolicyModel& m, const std::string& path);
PolicyModel load_checkpoint(const std::string& path);

}  // namespace prefopt::policy
