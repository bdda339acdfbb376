#include "prefopt/policy.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "prefopt/rng.hpp"

namespace prefopt::policy {

namespace {

void check_tokens(int vocab, std::span<const int> seq, const char* what) {
  for (int t : seq) {
    if (t < 0 || t >= vocab) {
      throw std::invalid_argument(std::string("seq_log_prob: ") + what + " token " +
                                  std::to_string(t) + " outside vocab of " +
                                  std::to_string(vocab));
    }
  }
}

}  // namespace

PolicyModel PolicyModel::init(ModelKind kind, Vocab vocab, std::uint64_t seed, MlpDims dims) {
  if (vocab.size < 2) {
    throw std::invalid_argument("init_model: vocab must be >= 2, got " +
                                std::to_string(vocab.size));
  }
  if (kind == ModelKind::Mlp && (dims.embed < 1 || dims.window < 1 || dims.hidden < 1)) {
    throw std::invalid_argument("init_model: mlp dims must be positive");
  }
  PolicyModel m;
  m.kind = kind;
  m.vocab = vocab.size;
  m.dims = dims;

  std::size_t count = 0;
  if (kind == ModelKind::Bigram) {
    count = static_cast<std::size_t>(vocab.size) * vocab.size;
  } else {
    const std::size_t v = vocab.size, e = dims.embed, w = dims.window, h = dims.hidden;
    count = v * e + w * e * h + h + h * v + v;
  }
  m.params.resize(count);
  Rng rng(seed);
  for (double& p : m.params) p = 0.2 * rng.uniform() - 0.1;
  return m;
}

std::vector<ParamSlot> PolicyModel::slots() const {
  if (kind == ModelKind::Bigram) {
    return {{"logits", vocab, vocab, 0}};
  }
  const int e = dims.embed, w = dims.window, h = dims.hidden;
  std::vector<ParamSlot> s;
  std::size_t off = 0;
  auto push = [&](const char* name, int r, int c) {
    s.push_back({name, r, c, off});
    off += static_cast<std::size_t>(r) * c;
  };
  push("embedding", vocab, e);
  push("hidden_w", w * e, h);
  push("hidden_b", 1, h);
  push("out_w", h, vocab);
  push("out_b", 1, vocab);
  return s;
}

PolicyModel clone_as_reference(const PolicyModel& m) {
  PolicyModel ref = m;
  ref.frozen = true;
  return ref;
}

PolicyVars make_policy_vars(graph::Tape& tape, const PolicyModel& m) {
  PolicyVars pv;
  for (const ParamSlot& s : m.slots()) {
    pv.slot_vars.push_back(tape.leaf(
        std::span<const double>(m.params.data() + s.offset,
                                static_cast<std::size_t>(s.rows) * s.cols),
        s.rows, s.cols));
  }
  return pv;
}

void read_grads(const PolicyModel& m, const PolicyVars& pv, std::span<double> out) {
  if (out.size() != m.param_count()) {
    throw std::invalid_argument("read_grads: output size mismatch");
  }
  const auto slots = m.slots();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const graph::Array& g = pv.slot_vars[i].grad();
    for (std::size_t j = 0; j < g.size(); ++j) out[slots[i].offset + j] += g.data[j];
  }
}

namespace {

// Per-position log-softmax rows for the whole response, as one graph.
graph::Var response_log_prob_rows(const PolicyModel& m, const PolicyVars& pv, graph::Tape& tape,
                                  std::span<const int> x, std::span<const int> y) {
  const int T = static_cast<int>(y.size());
  if (T == 0) throw std::invalid_argument("seq_log_prob: empty response");
  check_tokens(m.vocab, x, "prompt");
  check_tokens(m.vocab, y, "response");

  if (m.kind == ModelKind::Bigram) {
    if (x.empty()) throw std::invalid_argument("seq_log_prob: bigram model needs a prompt token");
    graph::IndexGrid rows;
    rows.rows = T;
    rows.cols = m.vocab;
    rows.row_of.resize(static_cast<std::size_t>(T) * m.vocab);
    rows.col_of.resize(rows.row_of.size());
    for (int t = 0; t < T; ++t) {
      const int prev = t == 0 ? x.back() : y[t - 1];
      for (int c = 0; c < m.vocab; ++c) {
        rows.row_of[static_cast<std::size_t>(t) * m.vocab + c] = prev;
        rows.col_of[static_cast<std::size_t>(t) * m.vocab + c] = c;
      }
    }
    return log_softmax(gather(pv.slot_vars[0], rows));
  }

  // Mlp: build the (T x W*E) context matrix in one gather, blanking pad slots
  // with a 0/1 mask so the zero-row pad stays out of the parameter vector.
  const int E = m.dims.embed, W = m.dims.window;
  graph::IndexGrid ctx;
  ctx.rows = T;
  ctx.cols = W * E;
  ctx.row_of.assign(static_cast<std::size_t>(T) * W * E, 0);
  ctx.col_of.assign(ctx.row_of.size(), 0);
  graph::Array mask(T, W * E, 1.0);
  const int pad = m.pad_token();
  const int nx = static_cast<int>(x.size());
  for (int t = 0; t < T; ++t) {
    for (int w = 0; w < W; ++w) {
      // Window slot w holds the (W - w)-th most recent token of [x ; y_<t].
      const int pos = nx + t - W + w;  // index into the concatenated history
      int tok = pad;
      if (pos >= 0) tok = pos < nx ? x[pos] : y[pos - nx];
      for (int e = 0; e < E; ++e) {
        const std::size_t i = (static_cast<std::size_t>(t) * W + w) * E + e;
        if (tok == pad) {
          mask.data[i] = 0.0;  // row 0 is gathered but masked out
        } else {
          ctx.row_of[i] = tok;
        }
        ctx.col_of[i] = e;
      }
    }
  }
  graph::Var ctx_mat = mul(gather(pv.slot_vars[0], ctx), tape.leaf(std::move(mask)));
  graph::Var hidden = sigmoid(add(matmul(ctx_mat, pv.slot_vars[1]), pv.slot_vars[2]));
  graph::Var logits = add(matmul(hidden, pv.slot_vars[3]), pv.slot_vars[4]);
  return log_softmax(logits);
}

}  // namespace

graph::Var seq_log_prob(const PolicyModel& m, const PolicyVars& pv, graph::Tape& tape,
                        std::span<const int> x, std::span<const int> y) {
  graph::Var rows = response_log_prob_rows(m, pv, tape, x, y);
  const int T = static_cast<int>(y.size());
  graph::IndexGrid pick;
  pick.rows = T;
  pick.cols = 1;
  pick.row_of.resize(T);
  pick.col_of.resize(T);
  for (int t = 0; t < T; ++t) {
    pick.row_of[t] = t;
    pick.col_of[t] = y[t];
  }
  return sum(gather(rows, pick));
}

double seq_log_prob(const PolicyModel& m, std::span<const int> x, std::span<const int> y) {
  graph::Tape tape;
  PolicyVars pv = make_policy_vars(tape, m);
  return seq_log_prob(m, pv, tape, x, y).scalar();
}

std::vector<std::vector<double>> next_token_log_probs(const PolicyModel& m,
                                                      std::span<const int> x,
                                                      std::span<const int> y) {
  graph::Tape tape;
  PolicyVars pv = make_policy_vars(tape, m);
  graph::Var rows = response_log_prob_rows(m, pv, tape, x, y);
  std::vector<std::vector<double>> out(y.size(), std::vector<double>(m.vocab));
  for (std::size_t t = 0; t < y.size(); ++t) {
    for (int c = 0; c < m.vocab; ++c) out[t][c] = rows.value()(static_cast<int>(t), c);
  }
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void save_checkpoint(const PolicyModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << "prefopt-model 1\n";
  out << "kind " << (m.kind == ModelKind::Bigram ? "bigram" : "mlp") << "\n";
  out << "vocab " << m.vocab << "\n";
  if (m.kind == ModelKind::Mlp) {
    out << "embed " << m.dims.embed << "\n";
    out << "window " << m.dims.window << "\n";
    out << "hidden " << m.dims.hidden << "\n";
  }
  out << "frozen " << (m.frozen ? 1 : 0) << "\n";
  out << "params " << m.params.size() << "\n";
  for (double p : m.params) out << format_double(p) << "\n";
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

PolicyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "prefopt-model" || version != 1) {
    throw std::runtime_error("load_checkpoint: " + path + " is not a model checkpoint");
  }
  PolicyModel m;
  std::string key;
  std::size_t n_params = 0;
  while (in >> key) {
    if (key == "kind") {
      std::string kind;
      in >> kind;
      if (kind == "bigram") {
        m.kind = ModelKind::Bigram;
      } else if (kind == "mlp") {
        m.kind = ModelKind::Mlp;
      } else {
        throw std::runtime_error("load_checkpoint: unknown kind " + kind);
      }
    } else if (key == "vocab") {
      in >> m.vocab;
    } else if (key == "embed") {
      in >> m.dims.embed;
    } else if (key == "window") {
      in >> m.dims.window;
    } else if (key == "hidden") {
      in >> m.dims.hidden;
    } else if (key == "frozen") {
      int f = 0;
      in >> f;
      m.frozen = f != 0;
    } else if (key == "params") {
      in >> n_params;
      break;
    } else {
      throw std::runtime_error("load_checkpoint: unknown field " + key);
    }
  }
  m.params.resize(n_params);
  std::string tok;
  for (std::size_t i = 0; i < n_params; ++i) {
    if (!(in >> tok)) throw std::runtime_error("load_checkpoint: truncated parameter list");
    const char* begin = tok.data();
    const char* end = begin + tok.size();
    auto res = std::from_chars(begin, end, m.params[i]);
    if (res.ec != std::errc() || res.ptr != end) {
      throw std::runtime_error("load_checkpoint: bad parameter value '" + tok + "'");
    }
  }
  return m;
}

}  // namespace prefopt::policy
