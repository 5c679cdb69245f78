#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "histoprog/gradcore/tensor.hpp"

namespace histoprog::gradcore {

struct Node;

/// Handle to a value in the computation graph.
///
/// Graphs are built eagerly: every op computes its value immediately and
/// records how to push gradients back to its parents. Handles are cheap to
/// copy; the graph lives as long as some handle refers to its output.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const;
  Tensor& mutable_value();
  /// Gradient accumulated by `backward`; empty if none reached this node.
  const Tensor& grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward;
  std::string op = "leaf";

  /// Gradient buffer, zero-initialized on first use.
  Tensor& grad_buffer();
};

Var constant(Tensor value);
Var parameter(Tensor value);
/// Same value, cut from the graph.
Var detach(const Var& v);

/// Registers a custom primitive. `backward` reads `self.grad` and adds into
/// the parents' `grad_buffer()`; it only runs if some parent requires grad.
Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward, std::string op);

/// Reverse-mode sweep from a single-element `loss`. Each reachable node is
/// visited once, in reverse topological order. Parameter gradients
/// accumulate across calls until `zero_grad`.
void backward(const Var& loss);

// Elementwise arithmetic. The second operand may broadcast: same shape,
// a single element, a row vector of shape {cols} or {1, cols}, or a column
// of shape {rows, 1}.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);

// Matrix products. matmul: (m,k)x(k,n). matmul_nt: (m,k)x(n,k)^T.
// bmm / bmm_nt: the same over a leading batch axis of rank-3 tensors.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var bmm(const Var& a, const Var& b);
Var bmm_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
/// Identity inside [lo, hi]; gradient is zero where the value was clamped.
Var clamp(const Var& a, double lo, double hi);

// Row-wise ops act along the last axis.
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var l2_normalize_rows(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
/// Sum along the last axis; shape {rows, 1}.
Var sum_rows(const Var& a);
/// Sum over all leading axes; shape {cols}.
Var sum_cols(const Var& a);

Var reshape(const Var& a, Shape shape);
/// Rows [begin, end) of a rank-2 tensor.
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
/// Columns [begin, end) of a tensor viewed as rows x cols.
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Column-wise max within consecutive row segments. `offsets` has one entry
/// per segment plus a final end offset. Ties send the gradient to the first
/// maximal row.
Var segment_max_rows(const Var& a, std::span<const std::size_t> offsets);

}  // namespace histoprog::gradcore
