#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace prefopt::graph {

// Dense row-major array of doubles, rank <= 2. Scalars are 1x1.
struct Array {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Array() = default;
  Array(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

  static Array scalar(double v) {
    Array a(1, 1);
    a.data[0] = v;
    return a;
  }

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Array& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape() const;  // "[RxC]"
};

struct Node {
  Array value;
  Array grad;  // zero-filled at creation; populated by backward
  const char* op = "leaf";
  bool detached = false;
  std::vector<Node*> parents;
  // Accumulates this node's grad into its parents' grads. Null for leaves.
  std::function<void(Node&)> backprop;
};

class Tape;

// Cheap handle to a Tape-owned node. Valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  Var(Node* n, Tape* t) : node_(n), tape_(t) {}

  const Array& value() const { return node_->value; }
  const Array& grad() const { return node_->grad; }
  double scalar() const;       // value of a 1x1 node
  double scalar_grad() const;  // grad of a 1x1 node
  int rows() const { return node_->value.rows; }
  int cols() const { return node_->value.cols; }
  Node* node() const { return node_; }
  Tape* tape() const { return tape_; }
  explicit operator bool() const { return node_ != nullptr; }

 private:
  Node* node_ = nullptr;
  Tape* tape_ = nullptr;
};

// Element-gather plan: out(r, c) = m(row_of[r*cols + c], col_of[r*cols + c]).
// Covers both embedding-style row lookups and per-row element picks.
struct IndexGrid {
  int rows = 0;
  int cols = 0;
  std::vector<std::int32_t> row_of;
  std::vector<std::int32_t> col_of;
};

// Records one forward pass (define-by-run); rebuilt from scratch every step.
// Single-threaded per instance; independent tapes may live on separate threads.
class Tape {
 public:
  Var leaf(Array v);
  Var leaf(std::span<const double> v, int rows, int cols);
  Var constant(double v);

  std::size_t node_count() const { return nodes_.size(); }

  // Reverse accumulation from a scalar seed. Each reachable node is visited
  // exactly once in reverse topological order; edges out of detached nodes
  // carry nothing, so anything reachable only through a detach keeps an
  // exactly-zero grad. One backward pass per tape.
  void backward(Var seed);

  Node& make(const char* op, Array value, std::vector<Node*> parents);

 private:
  std::deque<Node> nodes_;
};

Var add(Var a, Var b);  // same shape, or b a (1 x C) row broadcast over a's rows
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise, same shape
Var scale(Var a, double c);
Var matmul(Var a, Var b);
Var log_softmax(Var a);  // per row, max-subtracted stable form
Var gather(Var m, const IndexGrid& grid);  // duplicate targets accumulate on backward
Var sum(Var a);   // -> 1x1
Var mean(Var a);  // -> 1x1
Var sigmoid(Var a);
Var softplus(Var a);  // max(x,0) + log1p(exp(-|x|)); -log sigmoid(u) == softplus(-u)
Var neg(Var a);
Var detach(Var a);  // same value, zero gradient to ancestors

// Scalar function of a flat parameter vector. When grad_out is non-empty the
// callee must fill it with the reverse-mode gradient (same length as params);
// when empty, only the value is needed.
using GradFn = std::function<double(std::span<const double> params, std::span<double> grad_out)>;

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
  bool pass = false;
};

// Compares f's reverse-mode gradient against central differences
// (f(p+h) - f(p-h)) / 2h, coordinate by coordinate. `coords` restricts the
// probe set (all coordinates when empty). Relative error uses
// max(|analytic|, |numeric|, 1e-8) as denominator. Params are restored on exit.
FiniteDiffReport finite_diff_check(const GradFn& f, std::span<double> params, double h,
                                   double tol, std::span<const std::size_t> coords = {});

}  // namespace prefopt::graph
