#include "prefopt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace prefopt::graph {

std::string Array::shape() const {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

double Var::scalar() const {
  const Array& v = node_->value;
  if (v.rows != 1 || v.cols != 1) {
    throw std::invalid_argument("scalar: node has shape " + v.shape());
  }
  return v.data[0];
}

double Var::scalar_grad() const {
  const Array& g = node_->grad;
  if (g.rows != 1 || g.cols != 1) {
    throw std::invalid_argument("scalar_grad: node has shape " + g.shape());
  }
  return g.data[0];
}

Node& Tape::make(const char* op, Array value, std::vector<Node*> parents) {
  Node& n = nodes_.emplace_back();
  n.op = op;
  n.grad = Array(value.rows, value.cols);
  n.value = std::move(value);
  n.parents = std::move(parents);
  return n;
}

Var Tape::leaf(Array v) { return Var(&make("leaf", std::move(v), {}), this); }

Var Tape::leaf(std::span<const double> v, int rows, int cols) {
  if (v.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    throw std::invalid_argument("leaf: " + std::to_string(v.size()) + " values for shape [" +
                                std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  Array a(rows, cols);
  std::copy(v.begin(), v.end(), a.data.begin());
  return leaf(std::move(a));
}

Var Tape::constant(double v) { return leaf(Array::scalar(v)); }

void Tape::backward(Var seed) {
  Node* root = seed.node();
  if (root == nullptr) throw std::invalid_argument("backward: empty seed");
  if (root->value.rows != 1 || root->value.cols != 1) {
    throw std::invalid_argument("backward: seed must be scalar, got " + root->value.shape());
  }

  // Iterative post-order DFS. Parents of detached nodes are not entered, so
  // their subgraphs never receive gradient.
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack;
  std::unordered_set<Node*> visited;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const std::size_t fanin = node->detached ? 0 : node->parents.size();
    if (next < fanin) {
      Node* parent = node->parents[next++];
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad.data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->detached && n->backprop) n->backprop(*n);
  }
}

namespace {

void check_same_shape(const char* op, const Array& a, const Array& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape() + " vs " +
                                b.shape());
  }
}

Tape& tape_of(Var a) { return *a.tape(); }

void accumulate(Array& dst, const Array& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

Var add(Var a, Var b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  const bool row_broadcast = bv.rows == 1 && av.rows != 1 && bv.cols == av.cols;
  if (!row_broadcast) check_same_shape("add", av, bv);

  Array out = av;
  if (row_broadcast) {
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out(r, c) += bv(0, c);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  }
  Node& n = tape_of(a).make("add", std::move(out), {a.node(), b.node()});
  n.backprop = [row_broadcast](Node& self) {
    accumulate(self.parents[0]->grad, self.grad);
    Array& db = self.parents[1]->grad;
    if (row_broadcast) {
      for (int r = 0; r < self.grad.rows; ++r)
        for (int c = 0; c < self.grad.cols; ++c) db(0, c) += self.grad(r, c);
    } else {
      accumulate(db, self.grad);
    }
  };
  return Var(&n, a.tape());
}

Var sub(Var a, Var b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  const bool row_broadcast = bv.rows == 1 && av.rows != 1 && bv.cols == av.cols;
  if (!row_broadcast) check_same_shape("sub", av, bv);

  Array out = av;
  if (row_broadcast) {
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out(r, c) -= bv(0, c);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  }
  Node& n = tape_of(a).make("sub", std::move(out), {a.node(), b.node()});
  n.backprop = [row_broadcast](Node& self) {
    accumulate(self.parents[0]->grad, self.grad);
    Array& db = self.parents[1]->grad;
    if (row_broadcast) {
      for (int r = 0; r < self.grad.rows; ++r)
        for (int c = 0; c < self.grad.cols; ++c) db(0, c) -= self.grad(r, c);
    } else {
      for (std::size_t i = 0; i < db.size(); ++i) db.data[i] -= self.grad.data[i];
    }
  };
  return Var(&n, a.tape());
}

Var mul(Var a, Var b) {
  check_same_shape("mul", a.value(), b.value());
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  Node& n = tape_of(a).make("mul", std::move(out), {a.node(), b.node()});
  n.backprop = [](Node& self) {
    const Array& av = self.parents[0]->value;
    const Array& bv = self.parents[1]->value;
    Array& da = self.parents[0]->grad;
    Array& db = self.parents[1]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      da.data[i] += self.grad.data[i] * bv.data[i];
      db.data[i] += self.grad.data[i] * av.data[i];
    }
  };
  return Var(&n, a.tape());
}

Var scale(Var a, double c) {
  Array out = a.value();
  for (double& v : out.data) v *= c;
  Node& n = tape_of(a).make("scale", std::move(out), {a.node()});
  n.backprop = [c](Node& self) {
    Array& da = self.parents[0]->grad;
    for (std::size_t i = 0; i < da.size(); ++i) da.data[i] += c * self.grad.data[i];
  };
  return Var(&n, a.tape());
}

Var matmul(Var a, Var b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.cols != bv.rows) {
    throw std::invalid_argument("matmul: shape mismatch " + av.shape() + " vs " + bv.shape());
  }
  const int m = av.rows, k = av.cols, p = bv.cols;
  Array out(m, p);
  for (int i = 0; i < m; ++i) {
    const double* arow = &av.data[static_cast<std::size_t>(i) * k];
    double* orow = &out.data[static_cast<std::size_t>(i) * p];
    for (int kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = &bv.data[static_cast<std::size_t>(kk) * p];
      for (int j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  Node& n = tape_of(a).make("matmul", std::move(out), {a.node(), b.node()});
  n.backprop = [m, k, p](Node& self) {
    const Array& av = self.parents[0]->value;
    const Array& bv = self.parents[1]->value;
    Array& da = self.parents[0]->grad;
    Array& db = self.parents[1]->grad;
    const Array& g = self.grad;
    // dA += G * B^T
    for (int i = 0; i < m; ++i) {
      const double* grow = &g.data[static_cast<std::size_t>(i) * p];
      double* darow = &da.data[static_cast<std::size_t>(i) * k];
      for (int kk = 0; kk < k; ++kk) {
        const double* brow = &bv.data[static_cast<std::size_t>(kk) * p];
        double acc = 0.0;
        for (int j = 0; j < p; ++j) acc += grow[j] * brow[j];
        darow[kk] += acc;
      }
    }
    // dB += A^T * G
    for (int kk = 0; kk < k; ++kk) {
      double* dbrow = &db.data[static_cast<std::size_t>(kk) * p];
      for (int i = 0; i < m; ++i) {
        const double aik = av.data[static_cast<std::size_t>(i) * k + kk];
        const double* grow = &g.data[static_cast<std::size_t>(i) * p];
        for (int j = 0; j < p; ++j) dbrow[j] += aik * grow[j];
      }
    }
  };
  return Var(&n, a.tape());
}

Var log_softmax(Var a) {
  const Array& av = a.value();
  Array out(av.rows, av.cols);
  for (int r = 0; r < av.rows; ++r) {
    double mx = av(r, 0);
    for (int c = 1; c < av.cols; ++c) mx = std::max(mx, av(r, c));
    double sum = 0.0;
    for (int c = 0; c < av.cols; ++c) sum += std::exp(av(r, c) - mx);
    const double lse = std::log(sum);
    for (int c = 0; c < av.cols; ++c) out(r, c) = av(r, c) - mx - lse;
  }
  Node& n = tape_of(a).make("log_softmax", std::move(out), {a.node()});
  n.backprop = [](Node& self) {
    Array& da = self.parents[0]->grad;
    const Array& y = self.value;
    const Array& g = self.grad;
    for (int r = 0; r < y.rows; ++r) {
      double gsum = 0.0;
      for (int c = 0; c < y.cols; ++c) gsum += g(r, c);
      for (int c = 0; c < y.cols; ++c) da(r, c) += g(r, c) - std::exp(y(r, c)) * gsum;
    }
  };
  return Var(&n, a.tape());
}

Var gather(Var m, const IndexGrid& grid) {
  const Array& mv = m.value();
  const std::size_t n_out = static_cast<std::size_t>(grid.rows) * grid.cols;
  if (grid.row_of.size() != n_out || grid.col_of.size() != n_out) {
    throw std::invalid_argument("gather: index grid size does not match output shape");
  }
  Array out(grid.rows, grid.cols);
  for (std::size_t i = 0; i < n_out; ++i) {
    const int r = grid.row_of[i], c = grid.col_of[i];
    if (r < 0 || r >= mv.rows || c < 0 || c >= mv.cols) {
      throw std::out_of_range("gather: index (" + std::to_string(r) + "," + std::to_string(c) +
                              ") outside " + mv.shape());
    }
    out.data[i] = mv.data[static_cast<std::size_t>(r) * mv.cols + c];
  }
  Node& n = tape_of(m).make("gather", std::move(out), {m.node()});
  // Copy of the grid keeps the node self-contained; scatter is additive so
  // duplicate indices accumulate.
  n.backprop = [grid](Node& self) {
    Array& dm = self.parents[0]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      dm.data[static_cast<std::size_t>(grid.row_of[i]) * dm.cols + grid.col_of[i]] +=
          self.grad.data[i];
    }
  };
  return Var(&n, m.tape());
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data) acc += v;
  Node& n = tape_of(a).make("sum", Array::scalar(acc), {a.node()});
  n.backprop = [](Node& self) {
    const double g = self.grad.data[0];
    Array& da = self.parents[0]->grad;
    for (double& v : da.data) v += g;
  };
  return Var(&n, a.tape());
}

Var mean(Var a) {
  const double n_elems = static_cast<double>(a.value().size());
  if (a.value().size() == 0) throw std::invalid_argument("mean: empty array");
  double acc = 0.0;
  for (double v : a.value().data) acc += v;
  Node& n = tape_of(a).make("mean", Array::scalar(acc / n_elems), {a.node()});
  n.backprop = [n_elems](Node& self) {
    const double g = self.grad.data[0] / n_elems;
    Array& da = self.parents[0]->grad;
    for (double& v : da.data) v += g;
  };
  return Var(&n, a.tape());
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

}  // namespace

Var sigmoid(Var a) {
  Array out = a.value();
  for (double& v : out.data) v = stable_sigmoid(v);
  Node& n = tape_of(a).make("sigmoid", std::move(out), {a.node()});
  n.backprop = [](Node& self) {
    Array& da = self.parents[0]->grad;
    for (std::size_t i = 0; i < da.size(); ++i) {
      const double s = self.value.data[i];
      da.data[i] += self.grad.data[i] * s * (1.0 - s);
    }
  };
  return Var(&n, a.tape());
}

Var softplus(Var a) {
  Array out = a.value();
  for (double& v : out.data) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  Node& n = tape_of(a).make("softplus", std::move(out), {a.node()});
  n.backprop = [](Node& self) {
    const Array& x = self.parents[0]->value;
    Array& da = self.parents[0]->grad;
    for (std::size_t i = 0; i < da.size(); ++i) {
      da.data[i] += self.grad.data[i] * stable_sigmoid(x.data[i]);
    }
  };
  return Var(&n, a.tape());
}

Var neg(Var a) {
  Array out = a.value();
  for (double& v : out.data) v = -v;
  Node& n = tape_of(a).make("neg", std::move(out), {a.node()});
  n.backprop = [](Node& self) {
    Array& da = self.parents[0]->grad;
    for (std::size_t i = 0; i < da.size(); ++i) da.data[i] -= self.grad.data[i];
  };
  return Var(&n, a.tape());
}

Var detach(Var a) {
  Node& n = tape_of(a).make("detach", a.value(), {a.node()});
  n.detached = true;
  return Var(&n, a.tape());
}

FiniteDiffReport finite_diff_check(const GradFn& f, std::span<double> params, double h,
                                   double tol, std::span<const std::size_t> coords) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be > 0");

  std::vector<double> analytic(params.size(), 0.0);
  const double base = f(params, analytic);
  if (!std::isfinite(base)) {
    throw std::domain_error("finite_diff_check: non-finite value at base point");
  }

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(params.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }

  FiniteDiffReport report;
  report.coords_checked = coords.size();
  for (std::size_t c : coords) {
    const double saved = params[c];
    params[c] = saved + h;
    const double fp = f(params, {});
    params[c] = saved - h;
    const double fm = f(params, {});
    params[c] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::domain_error("finite_diff_check: non-finite value at coordinate " +
                              std::to_string(c));
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[c]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[c] - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_coord = c;
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace prefopt::graph
