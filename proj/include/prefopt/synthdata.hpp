#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefopt/rng.hpp"

namespace prefopt::synthdata {

enum class CorruptionMode { SuffixReplace, Interleave };

const char* corruption_mode_name(CorruptionMode m);
CorruptionMode parse_corruption_mode(const std::string& name);  // throws invalid_argument

// Generation recipe for one synthetic preference world. Chosen and rejected
// responses share a prefix of floor(overlap * resp_len) tokens; the remainder
// of the rejected response is corrupted per `mode`.
struct WorldSpec {
  int vocab = 32;
  int prompt_len = 4;
  int resp_len = 10;
  double overlap = 0.8;  // rho in [0, 1); must leave at least one differing token
  CorruptionMode mode = CorruptionMode::SuffixReplace;
  std::uint64_t seed = 1;

  void validate() const;          // throws std::invalid_argument
  int shared_prefix_len() const;  // floor(overlap * resp_len)
};

struct PreferencePair {
  std::vector<int> x;
  std::vector<int> y_w;
  std::vector<int> y_l;
};

struct Dataset {
  WorldSpec world;
  std::vector<PreferencePair> items;
};

// Ground-truth next-token preference: a seeded permutation of the vocabulary.
// The planted distribution follows it with probability 0.9 and is uniform
// otherwise, so chosen responses are genuinely learnable.
std::vector<int> planted_map(const WorldSpec& world);

// log P(y | x) under the planted distribution (not under any trained policy).
double planted_log_prob(const WorldSpec& world, std::span<const int> planted,
                        std::span<const int> x, std::span<const int> y);

// One pair from the current rng state. Resamples internally until the chosen
// response has strictly higher planted likelihood than the rejected one, so
// the preference labels are consistent by construction.
PreferencePair sample_pair(const WorldSpec& world, std::span<const int> planted, Rng& rng);

Dataset gen_dataset(const WorldSpec& world, int pairs);

// Line-oriented text: a #-prefixed key=value manifest block, then one pair per
// line as `x-tokens | yw-tokens | yl-tokens` (space-separated ids).
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

std::string manifest_text(const WorldSpec& world, int pairs);

}  // namespace prefopt::synthdata
