#pragma once

#include <functional>
#include <vector>

#include "tensor.hpp"

namespace pctl {

class Tape;

// Handle to a node on a tape. Cheap to copy; the tape owns the storage.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  double item() const { return value().item(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run computation graph. Nodes are appended in construction order,
// which is a topological order by construction; backward() walks the tape in
// reverse and visits each reachable node exactly once.
//
// Gradient contract: leaf gradients accumulate across repeated backward()
// calls until zero_grad(); intermediate gradients are scratch state owned by
// the pass. Each forward primitive validates shapes and rejects non-finite
// outputs immediately.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var input(Tensor v);  // constant, no gradient
  Var param(Tensor v);  // trainable, gradient accumulated

  // Primitives. Shapes are validated per primitive; log_sum_exp, softmax and
  // nll_logits use max subtraction so logits with magnitude <= 700 cannot
  // overflow.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);             // elementwise
  Var scale(Var a, double c);        // multiply by a plain constant
  Var mul_scalar(Var a, Var s);      // multiply by a 1x1 node (learnable scalar)
  Var add_rowvec(Var a, Var b);      // (n x d) + (1 x d), broadcast over rows
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var l2_normalize_rows(Var a);
  Var log_sum_exp_rows(Var a);       // n x 1
  Var softmax_rows(Var a);
  Var dot(Var a, Var b);             // 1 x 1, over flattened elements
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_rows(Var a, std::vector<std::size_t> rows);
  Var reshape(Var a, std::size_t rows, std::size_t cols);  // row-major reinterpret
  Var sum(Var a);                    // 1 x 1
  Var mean(Var a);                   // 1 x 1
  Var mean_rows(Var a);              // 1 x d column means
  // Per-row cross entropy from logits: out[r] = logsumexp(row r) - row[label].
  Var nll_logits(Var logits, std::vector<int> labels);
  // Identity forward, negated backward. Exists only so verification can
  // demonstrate that a corrupted gradient is caught by gradcheck.
  Var flip_gradient_sign(Var a);

  // Accumulates d(loss)/d(leaf) into every reachable parameter leaf.
  // Unreachable leaves are untouched (their gradient stays exactly zero).
  void backward(Var loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  std::size_t zero_norm_warnings() const { return zero_norm_warnings_; }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;  // allocated iff requires_grad
    bool requires_grad = false;
    bool is_leaf = false;
    const char* op = "leaf";
    std::vector<std::size_t> parents;
    std::function<void(Tape&, const Node&)> backward_fn;
  };

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }

  Var make(const char* op, Tensor value, std::vector<std::size_t> parents,
           std::function<void(Tape&, const Node&)> backward_fn);
  void check_same_tape(Var v, const char* op) const;
  void accumulate(std::size_t id, const Tensor& delta);
  // Adds delta into parent's grad if the parent participates in gradients.
  void add_grad(std::size_t parent, const Tensor& delta);

  std::vector<Node> nodes_;
  std::size_t zero_norm_warnings_ = 0;
};

// Max over coordinates of |analytic - central difference| /
// max(1, |analytic|, |numeric|) for a scalar graph built by `build`.
// `build` must be deterministic; step must lie in (1e-8, 1e-2).
using GraphBuilder = std::function<Var(Tape&, Var)>;
double gradcheck(const GraphBuilder& build, const Tensor& point, double step);

}  // namespace pctl
