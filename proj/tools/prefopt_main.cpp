// prefopt: generate synthetic preference data, train tiny policies under six
// preference objectives, compare their training dynamics, and verify the
// gradient machinery. Exit codes: 0 success, 1 verification failure,
// 2 usage/config error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "prefopt/trainer.hpp"
#include "prefopt/verify.hpp"

namespace fs = std::filesystem;
using namespace prefopt;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  std::string s = out.str();
  // shortest round-trip
  for (int prec = 1; prec < 17; ++prec) {
    std::ostringstream probe;
    probe << std::setprecision(prec) << v;
    if (std::stod(probe.str()) == v) return probe.str();
  }
  return s;
}

struct TrainFlags {
  std::string data;
  std::string objective = "dpo";
  double beta = 0.1, delta = 0.1, epsilon = 1e-5;
  double alpha_lo = 0.0, alpha_hi = 1.0;
  std::string alpha_preset;
  std::string tau_mode = "pair";
  double lambda = 0.95, gamma = 0.5, simpo_beta = 2.0;
  bool shift_additive = false;
  double lr = 1e-3;
  int steps = 2000, batch = 32;
  std::uint64_t seed = 1;
  std::string model_kind = "mlp";
  int embed = 16, window = 8, hidden = 32;
  bool plain_sgd = false;
  bool non_deterministic = false;
};

// Shared between train and compare; `sub` owns the option lifetimes.
void add_train_options(CLI::App* sub, TrainFlags& f) {
  sub->add_option("--data", f.data, "dataset file")->required();
  sub->add_option("--beta", f.beta, "KL coefficient");
  sub->add_option("--delta", f.delta, "per-token advantage target");
  sub->add_option("--epsilon", f.epsilon, "calibration denominator floor");
  sub->add_option("--alpha-lo", f.alpha_lo, "lower clamp on the calibration coefficient");
  sub->add_option("--alpha-hi", f.alpha_hi, "upper clamp on the calibration coefficient");
  sub->add_option("--alpha-preset", f.alpha_preset, "clamp preset: formal [0,1] or empirical [0.3,0.95]")
      ->check(CLI::IsMember({"formal", "empirical"}));
  sub->add_option("--tau-mode", f.tau_mode, "advantage-target granularity")
      ->check(CLI::IsMember({"pair", "batch"}));
  sub->add_option("--lambda", f.lambda, "dpo-shift coefficient on the rejected reward");
  sub->add_flag("--shift-additive", f.shift_additive,
                "dpo-shift: subtract lambda from the margin instead of scaling");
  sub->add_option("--gamma", f.gamma, "simpo target margin");
  sub->add_option("--simpo-beta", f.simpo_beta, "simpo reward scale");
  sub->add_option("--lr", f.lr, "learning rate");
  sub->add_option("--steps", f.steps, "optimizer steps");
  sub->add_option("--batch", f.batch, "mini-batch size");
  sub->add_option("--seed", f.seed, "seed for model init and batch order");
  sub->add_option("--model-kind", f.model_kind, "policy kind")
      ->check(CLI::IsMember({"mlp", "bigram"}));
  sub->add_option("--embed", f.embed, "mlp embedding width");
  sub->add_option("--window", f.window, "mlp context window");
  sub->add_option("--hidden", f.hidden, "mlp hidden width");
  sub->add_flag("--plain-sgd", f.plain_sgd, "plain descent instead of Adam");
  sub->add_flag("--non-deterministic", f.non_deterministic, "OS-seeded batch order");
}

rewards::ObjectiveConfig objective_config(const TrainFlags& f, const CLI::App* sub) {
  rewards::ObjectiveConfig cfg;
  cfg.kind = objectives::parse_objective(f.objective);
  cfg.beta = f.beta;
  cfg.delta = f.delta;
  cfg.epsilon = f.epsilon;
  cfg.alpha_lo = f.alpha_lo;
  cfg.alpha_hi = f.alpha_hi;
  if (!f.alpha_preset.empty()) {
    const bool lo_set = sub->count("--alpha-lo") > 0;
    const bool hi_set = sub->count("--alpha-hi") > 0;
    if (f.alpha_preset == "empirical") {
      if (!lo_set) cfg.alpha_lo = rewards::kEmpiricalAlphaLo;
      if (!hi_set) cfg.alpha_hi = rewards::kEmpiricalAlphaHi;
    }  // formal: keep [0, 1]
  }
  cfg.tau_mode = f.tau_mode == "batch" ? rewards::TauMode::BatchMean : rewards::TauMode::PerPair;
  cfg.lambda = f.lambda;
  cfg.shift_additive = f.shift_additive;
  cfg.simpo_gamma = f.gamma;
  cfg.simpo_beta = f.simpo_beta;
  cfg.validate();
  return cfg;
}

policy::PolicyModel make_model(const TrainFlags& f, int vocab) {
  if (f.model_kind == "bigram") {
    return policy::PolicyModel::init(policy::ModelKind::Bigram, {vocab}, f.seed);
  }
  return policy::PolicyModel::init(policy::ModelKind::Mlp, {vocab}, f.seed,
                                   {f.embed, f.window, f.hidden});
}

trainer::TrainConfig train_config(const TrainFlags& f, const CLI::App* sub) {
  trainer::TrainConfig cfg;
  cfg.objective = objective_config(f, sub);
  cfg.lr = f.lr;
  cfg.steps = f.steps;
  cfg.batch_size = f.batch;
  cfg.seed = f.seed;
  cfg.deterministic = !f.non_deterministic;
  cfg.plain_sgd = f.plain_sgd;
  return cfg;
}

void write_train_manifest(const std::string& path, const TrainFlags& f,
                          const std::string& objective, const std::string& telemetry,
                          const std::string& checkpoint) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "# prefopt run manifest; usable as --config\n";
  out << "tool-version=" << kToolVersion << "\n";
  out << "dataset-hash=" << hex64(fnv1a_file(f.data)) << "\n";
  out << "data=" << f.data << "\n";
  out << "objective=" << objective << "\n";
  out << "beta=" << format_double(f.beta) << "\n";
  out << "delta=" << format_double(f.delta) << "\n";
  out << "epsilon=" << format_double(f.epsilon) << "\n";
  out << "alpha-lo=" << format_double(f.alpha_lo) << "\n";
  out << "alpha-hi=" << format_double(f.alpha_hi) << "\n";
  if (!f.alpha_preset.empty()) out << "alpha-preset=" << f.alpha_preset << "\n";
  out << "tau-mode=" << f.tau_mode << "\n";
  out << "lambda=" << format_double(f.lambda) << "\n";
  if (f.shift_additive) out << "shift-additive=true\n";
  out << "gamma=" << format_double(f.gamma) << "\n";
  out << "simpo-beta=" << format_double(f.simpo_beta) << "\n";
  out << "lr=" << format_double(f.lr) << "\n";
  out << "steps=" << f.steps << "\n";
  out << "batch=" << f.batch << "\n";
  out << "seed=" << f.seed << "\n";
  out << "model-kind=" << f.model_kind << "\n";
  out << "embed=" << f.embed << "\n";
  out << "window=" << f.window << "\n";
  out << "hidden=" << f.hidden << "\n";
  if (f.plain_sgd) out << "plain-sgd=true\n";
  if (f.non_deterministic) out << "non-deterministic=true\n";
  out << "telemetry=" << telemetry << "\n";
  out << "checkpoint=" << checkpoint << "\n";
}

int cmd_gen_data(int vocab, int prompt_len, int resp_len, double overlap, int pairs,
                 std::uint64_t seed, const std::string& mode, const std::string& out_path) {
  synthdata::WorldSpec world;
  world.vocab = vocab;
  world.prompt_len = prompt_len;
  world.resp_len = resp_len;
  world.overlap = overlap;
  world.mode = synthdata::parse_corruption_mode(mode);
  world.seed = seed;
  const synthdata::Dataset d = synthdata::gen_dataset(world, pairs);
  synthdata::save_dataset(d, out_path);
  std::cout << "wrote " << out_path << " (" << d.items.size() << " pairs)\n";
  return 0;
}

int cmd_train(const TrainFlags& f, const CLI::App* sub, const std::string& out_dir) {
  const synthdata::Dataset data = synthdata::load_dataset(f.data);
  fs::create_directories(out_dir);

  trainer::TrainConfig cfg = train_config(f, sub);
  const std::string telemetry = (fs::path(out_dir) / "telemetry.csv").string();
  const std::string checkpoint = (fs::path(out_dir) / "model.ckpt").string();
  cfg.telemetry_path = telemetry;

  policy::PolicyModel model = make_model(f, data.world.vocab);
  const policy::PolicyModel ref = policy::clone_as_reference(model);

  trainer::TrainResult result = trainer::train(std::move(model), ref, data, cfg);
  policy::save_checkpoint(result.model, checkpoint);
  write_train_manifest((fs::path(out_dir) / "manifest.txt").string(), f, f.objective, telemetry,
                       checkpoint);
  std::cout << "wrote " << telemetry << " (" << result.telemetry.size() << " steps)\n";
  return 0;
}

int cmd_compare(const TrainFlags& f, const CLI::App* sub, const std::string& objectives_csv,
                const std::string& out_path) {
  std::vector<std::string> names;
  std::stringstream ss(objectives_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) names.push_back(item);
  }
  if (names.empty()) throw std::invalid_argument("compare: no objectives given");
  for (const std::string& n : names) objectives::parse_objective(n);  // validate early

  const synthdata::Dataset data = synthdata::load_dataset(f.data);

  // Independent runs from the same seed-matched initial model; safe to train
  // concurrently.
  std::vector<std::future<trainer::TrainResult>> futures;
  for (const std::string& name : names) {
    TrainFlags per = f;
    per.objective = name;
    trainer::TrainConfig cfg = train_config(per, sub);
    futures.push_back(std::async(std::launch::async, [cfg, flags = per, &data]() {
      policy::PolicyModel model = make_model(flags, data.world.vocab);
      const policy::PolicyModel ref = policy::clone_as_reference(model);
      return trainer::train(std::move(model), ref, data, cfg);
    }));
  }

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open " + out_path);
  out << "objective,step,delta_r_w,margin,mean_logp_w\n";
  char buf[128];
  for (std::size_t i = 0; i < names.size(); ++i) {
    const trainer::TrainResult result = futures[i].get();
    const double r_w0 = result.telemetry.empty() ? 0.0 : result.telemetry.front().mean_r_w;
    for (const trainer::TelemetryRow& row : result.telemetry) {
      std::snprintf(buf, sizeof buf, "%s,%d,%.9g,%.9g,%.9g\n", names[i].c_str(), row.step,
                    row.mean_r_w - r_w0, row.mean_margin, row.mean_logp_w);
      out << buf;
    }
  }
  if (!out) throw std::runtime_error("write failed for " + out_path);

  std::ofstream manifest(out_path + ".manifest");
  manifest << "# prefopt compare manifest\n";
  manifest << "tool-version=" << kToolVersion << "\n";
  manifest << "dataset-hash=" << hex64(fnv1a_file(f.data)) << "\n";
  manifest << "data=" << f.data << "\n";
  manifest << "objectives=" << objectives_csv << "\n";
  manifest << "beta=" << format_double(f.beta) << "\n";
  manifest << "delta=" << format_double(f.delta) << "\n";
  manifest << "lr=" << format_double(f.lr) << "\n";
  manifest << "steps=" << f.steps << "\n";
  manifest << "batch=" << f.batch << "\n";
  manifest << "seed=" << f.seed << "\n";
  manifest << "out=" << out_path << "\n";
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_verify(int seeds, bool inject_fault) {
  const std::vector<verify::CheckResult> results = verify::run_all(seeds, inject_fault);
  bool all_pass = true;
  for (const verify::CheckResult& r : results) {
    std::cout << verify::format_result(r) << "\n";
    all_pass = all_pass && r.pass;
  }
  std::cout << (all_pass ? "all checks passed" : "FAILURES present") << "\n";
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale preference-optimization laboratory"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic preference dataset");
  int g_vocab = 32, g_prompt = 4, g_resp = 10, g_pairs = 2000;
  double g_overlap = 0.8;
  std::uint64_t g_seed = 1;
  std::string g_mode = "suffix-replace", g_out;
  gen->add_option("--vocab", g_vocab, "vocabulary size");
  gen->add_option("--prompt-len", g_prompt, "prompt length");
  gen->add_option("--resp-len", g_resp, "response length");
  gen->add_option("--overlap", g_overlap, "shared-prefix ratio in [0,1)");
  gen->add_option("--pairs", g_pairs, "number of pairs");
  gen->add_option("--seed", g_seed, "generation seed");
  gen->add_option("--mode", g_mode, "rejected-side corruption")
      ->check(CLI::IsMember({"suffix-replace", "interleave"}));
  gen->add_option("--out", g_out, "output file")->required();

  // train
  auto* train = app.add_subcommand("train", "train one objective; writes telemetry + checkpoint");
  TrainFlags t_flags;
  std::string t_objective = "dpo", t_out_dir = "run";
  train->add_option("--objective", t_objective, "dpo|ipo|simpo|beta-dpo|dpo-shift|acpo");
  add_train_options(train, t_flags);
  train->add_option("--out-dir", t_out_dir, "output directory");
  train->set_config("--config", "", "flat key=value file; flags override file values");
  train->allow_config_extras(true);

  // compare
  auto* compare = app.add_subcommand("compare", "train several objectives from one seed-matched "
                                                "initial model; long-format dynamics CSV");
  TrainFlags c_flags;
  std::string c_objectives = "dpo,acpo", c_out = "compare.csv";
  compare->add_option("--objectives", c_objectives, "comma-separated objective list");
  add_train_options(compare, c_flags);
  compare->add_option("--out", c_out, "output CSV");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run the gradient/boundary property suite");
  int v_seeds = 20;
  bool v_fault = false;
  verify_cmd->add_option("--seeds", v_seeds, "seeds per check")->check(CLI::PositiveNumber);
  verify_cmd->add_flag("--inject-alpha-grad-fault", v_fault,
                       "deliberately leak gradient through the calibration coefficient")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(gen)) {
      return cmd_gen_data(g_vocab, g_prompt, g_resp, g_overlap, g_pairs, g_seed, g_mode, g_out);
    }
    if (app.got_subcommand(train)) {
      t_flags.objective = t_objective;
      return cmd_train(t_flags, train, t_out_dir);
    }
    if (app.got_subcommand(compare)) {
      return cmd_compare(c_flags, compare, c_objectives, c_out);
    }
    if (app.got_subcommand(verify_cmd)) {
      return cmd_verify(v_seeds, v_fault);
    }
  } catch (const trainer::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
