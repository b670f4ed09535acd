#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fedaml/tensor.hpp"

namespace fedaml {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  // Invalidated when the tape records another node; copy what must outlive
  // further ops.
  const Tensor& value() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
// reverse of insertion order is a valid reverse topological order.
//
// A tape is single-threaded; use one tape per training thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input.
  Var leaf(Tensor value);
  // Non-differentiable input.
  Var constant(Tensor value);

  // Appends an op result. `fn` receives the gradient of the output and must
  // accumulate into the inputs via accumulate().
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  // Gradient of the last backward() target with respect to v. Zero-filled
  // if v did not influence the target.
  const Tensor& grad(Var v);

  // Adds g into the gradient buffer of v (no-op for constants).
  void accumulate(Var v, const Tensor& g);
  // Direct access to the gradient buffer, allocating it on first use.
  Tensor& grad_buffer(Var v);

  // Reverse sweep from a single-element loss.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Sparse operand that stays fixed during differentiation.
using SparseOperand = std::shared_ptr<const CsrMatrix>;

// Forward ops. Every op records to the tape of its inputs and throws
// UsageError naming the op and shapes on mismatch.
Var matmul(Var a, Var b);
Var spmm(const SparseOperand& a, Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
// a[m x n] + row[1 x n], the only broadcast supported.
Var add_row(Var a, Var row);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var concat(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var relu(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var pow(Var a, double exponent);
Var clamp(Var a, double lo, double hi);
Var mean(Var a);
Var sum(Var a);
Var trace(Var a);
Var transpose(Var a);
Var frobenius_norm_sq(Var a);
// Divides each row by its sum.
Var row_normalize(Var a);
// Row-wise softmax.
Var softmax(Var a);

}  // namespace fedaml
