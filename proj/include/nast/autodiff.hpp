#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "nast/rng.hpp"
#include "nast/tensor.hpp"

namespace nast {

struct Var {
  Index id = -1;
  bool valid() const { return id >= 0; }
};

double logsumexp(std::span<const double> xs);
std::vector<double> softmax_row(std::span<const double> xs);

// Reverse-mode tape over Array values. Single-threaded, fixed reduction
// order everywhere, so repeated runs are bitwise identical.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Index self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var leaf(Array value, bool requires_grad = false);
  Var constant(Array value) { return leaf(std::move(value), false); }

  const Array& val(Var x) const;
  // Gradient of the last backward() root w.r.t. x; zeros if x was not reached.
  Array grad(Var x) const;

  // For backward kernels: accumulation buffer of x, or null when x does not
  // need a gradient.
  Array* grad_buf_if(Var x);
  const Array& grad_of(Var x) const;

  bool requires_grad(Var x) const;

  // Generic node for hand-derived backward passes.
  Var custom(std::vector<Var> parents, Array value, BackwardFn bw);

  // Elementwise and linear-algebra ops.
  Var add(Var a, Var b);
  Var add_bias(Var a, Var bias);  // [n,d] + [d]
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var matmul(Var a, Var b);
  Var relu(Var a);
  Var sum_all(Var a);
  Var logsumexp_all(Var a);
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a, bool floor_enabled = false);
  // rows of table gathered by id, times scale.
  Var embedding(Var table, std::vector<Index> ids, double scale_factor = 1.0);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  // Multi-head scaled dot-product attention; query row i attends to key rows
  // [0, limits[i]). Softmax scale is 1/sqrt(head_dim).
  Var attention(Var q, Var k, Var v, std::vector<Index> limits, Index heads);
  // Inverted dropout; identity when rate == 0.
  Var dropout(Var a, double rate, Rng& rng);

  void backward(Var root);

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  // When set, every op asserts its output is finite.
  bool debug_checks = false;

  Index size() const { return static_cast<Index>(nodes_.size()); }

 private:
  struct Node {
    Array value;
    Array grad;  // empty until needed
    std::vector<Var> parents;
    BackwardFn bw;
    bool requires_grad = false;
  };

  Node& node(Var x);
  const Node& node(Var x) const;
  bool result_requires_grad(std::span<const Var> parents) const;
  Var push_node(std::vector<Var> parents, Array value, BackwardFn bw);

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

struct NoGradGuard {
  explicit NoGradGuard(Tape& t) : tape(t), prev(t.grad_enabled()) { tape.set_grad_enabled(false); }
  ~NoGradGuard() { tape.set_grad_enabled(prev); }
  Tape& tape;
  bool prev;
};

// Probability floor applied inside log-softmax when enabled.
inline constexpr double kProbFloor = 1e-12;

}  // namespace nast
