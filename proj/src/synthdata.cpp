#include "prefopt/synthdata.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace prefopt::synthdata {

namespace {

constexpr double kPlantedFollow = 0.9;  // probability of emitting the mapped token
constexpr std::uint64_t kPlantedStream = 0x706c616e74ull;  // rng stream tags
constexpr std::uint64_t kPairStream = 0x7061697273ull;

// floor/ceil of rho*L with a guard against cases like 0.3*10 = 2.999...96.
int guarded_floor(double x) { return static_cast<int>(std::floor(x + 1e-9)); }
int guarded_ceil(double x) { return static_cast<int>(std::ceil(x - 1e-9)); }

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

const char* corruption_mode_name(CorruptionMode m) {
  return m == CorruptionMode::SuffixReplace ? "suffix-replace" : "interleave";
}

CorruptionMode parse_corruption_mode(const std::string& name) {
  if (name == "suffix-replace") return CorruptionMode::SuffixReplace;
  if (name == "interleave") return CorruptionMode::Interleave;
  throw std::invalid_argument("unknown corruption mode '" + name +
                              "' (expected suffix-replace or interleave)");
}

void WorldSpec::validate() const {
  if (vocab < 4) throw std::invalid_argument("world: vocab must be >= 4");
  if (prompt_len < 1) throw std::invalid_argument("world: prompt length must be >= 1");
  if (resp_len < 1) throw std::invalid_argument("world: response length must be >= 1");
  if (overlap < 0.0 || overlap >= 1.0 || guarded_ceil(overlap * resp_len) > resp_len - 1) {
    throw std::invalid_argument("world: overlap must leave at least one differing token");
  }
}

int WorldSpec::shared_prefix_len() const { return guarded_floor(overlap * resp_len); }

std::vector<int> planted_map(const WorldSpec& world) {
  std::vector<int> perm(world.vocab);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(world.seed, kPlantedStream));
  rng.shuffle(perm);
  return perm;
}

double planted_log_prob(const WorldSpec& world, std::span<const int> planted,
                        std::span<const int> x, std::span<const int> y) {
  const double v = world.vocab;
  const double p_follow = kPlantedFollow + (1.0 - kPlantedFollow) / v;
  const double p_other = (1.0 - kPlantedFollow) / v;
  double logp = 0.0;
  int prev = x.back();
  for (int tok : y) {
    logp += std::log(tok == planted[prev] ? p_follow : p_other);
    prev = tok;
  }
  return logp;
}

PreferencePair sample_pair(const WorldSpec& world, std::span<const int> planted, Rng& rng) {
  world.validate();
  const int L = world.resp_len;
  const int k0 = world.shared_prefix_len();

  for (int attempt = 0; attempt < 10000; ++attempt) {
    PreferencePair p;
    p.x.resize(world.prompt_len);
    for (int& t : p.x) t = rng.token(world.vocab);

    p.y_w.resize(L);
    int prev = p.x.back();
    for (int& t : p.y_w) {
      t = rng.uniform() < kPlantedFollow ? planted[prev] : rng.token(world.vocab);
      prev = t;
    }

    p.y_l = p.y_w;
    auto flip = [&](int j) {
      // uniform over the vocab minus the chosen token
      const int draw = rng.token(world.vocab - 1);
      p.y_l[j] = draw + (draw >= p.y_w[j] ? 1 : 0);
    };
    if (world.mode == CorruptionMode::SuffixReplace) {
      for (int j = k0; j < L; ++j) flip(j);
    } else {
      for (int j = k0; j < L; ++j) {
        if ((j - k0) % 2 == 0) flip(j);
      }
    }

    if (planted_log_prob(world, planted, p.x, p.y_w) >
        planted_log_prob(world, planted, p.x, p.y_l)) {
      return p;
    }
  }
  throw std::runtime_error("sample_pair: could not produce a consistently-labeled pair");
}

Dataset gen_dataset(const WorldSpec& world, int pairs) {
  world.validate();
  if (pairs < 1) throw std::invalid_argument("gen_dataset: need at least one pair");
  Dataset d;
  d.world = world;
  d.items.reserve(pairs);
  const std::vector<int> planted = planted_map(world);
  Rng rng(mix_seed(world.seed, kPairStream));
  for (int i = 0; i < pairs; ++i) d.items.push_back(sample_pair(world, planted, rng));
  return d;
}

std::string manifest_text(const WorldSpec& world, int pairs) {
  std::ostringstream out;
  out << "# vocab=" << world.vocab << "\n";
  out << "# prompt_len=" << world.prompt_len << "\n";
  out << "# resp_len=" << world.resp_len << "\n";
  out << "# overlap=" << format_double(world.overlap) << "\n";
  out << "# mode=" << corruption_mode_name(world.mode) << "\n";
  out << "# seed=" << world.seed << "\n";
  out << "# pairs=" << pairs << "\n";
  return out.str();
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  out << manifest_text(d.world, static_cast<int>(d.items.size()));
  auto write_seq = [&out](const std::vector<int>& seq) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out << ' ';
      out << seq[i];
    }
  };
  for (const PreferencePair& p : d.items) {
    write_seq(p.x);
    out << " | ";
    write_seq(p.y_w);
    out << " | ";
    write_seq(p.y_l);
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

namespace {

std::vector<int> parse_tokens(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  int t;
  while (in >> t) out.push_back(t);
  return out;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  Dataset d;
  int declared_pairs = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      const std::size_t eq = body.find('=');
      if (eq == std::string::npos) continue;
      std::string key = body.substr(0, eq);
      std::string value = body.substr(eq + 1);
      key.erase(0, key.find_first_not_of(' '));
      key.erase(key.find_last_not_of(' ') + 1);
      if (key == "vocab") d.world.vocab = std::stoi(value);
      else if (key == "prompt_len") d.world.prompt_len = std::stoi(value);
      else if (key == "resp_len") d.world.resp_len = std::stoi(value);
      else if (key == "overlap") d.world.overlap = std::stod(value);
      else if (key == "mode") d.world.mode = parse_corruption_mode(value);
      else if (key == "seed") d.world.seed = std::stoull(value);
      else if (key == "pairs") declared_pairs = std::stoi(value);
      continue;
    }
    std::size_t b1 = line.find('|');
    std::size_t b2 = line.find('|', b1 + 1);
    if (b1 == std::string::npos || b2 == std::string::npos) {
      throw std::runtime_error("load_dataset: malformed line '" + line + "'");
    }
    PreferencePair p;
    p.x = parse_tokens(line.substr(0, b1));
    p.y_w = parse_tokens(line.substr(b1 + 1, b2 - b1 - 1));
    p.y_l = parse_tokens(line.substr(b2 + 1));
    if (p.x.empty() || p.y_w.empty() || p.y_l.empty()) {
      throw std::runtime_error("load_dataset: empty field in line '" + line + "'");
    }
    d.items.push_back(std::move(p));
  }
  if (d.items.empty()) throw std::runtime_error("load_dataset: no pairs in " + path);
  if (declared_pairs >= 0 && declared_pairs != static_cast<int>(d.items.size())) {
    throw std::runtime_error("load_dataset: manifest declares " +
                             std::to_string(declared_pairs) + " pairs, file has " +
                             std::to_string(d.items.size()));
  }
  return d;
}

}  // namespace prefopt::synthdata
