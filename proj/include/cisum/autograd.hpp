#pragma once

// Reverse-mode differentiation over row-major double matrices.
//
// A Tape records every operation of one forward pass in creation order, so
// the node list is already topologically sorted and backward() is a single
// reverse sweep. Parameters live outside the tape; the tape references their
// values and, on backward, adds into Parameter::grad.

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cisum/tensor.hpp"

namespace cisum::ag {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;  // same shape as value once allocated

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the gradient flowing into the node being processed.
  using Backprop = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Repeated calls with the same parameter return the same node.
  Var param(Parameter& p);

  // Seeds d(root)/d(root) = seed (root must be 1x1) and sweeps the tape.
  // Parameter gradients are accumulated, never overwritten.
  void backward(const Var& root, double seed = 1.0);

  const Matrix& value(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var push(Matrix value, std::initializer_list<Var> parents, Backprop backprop);
  Var push(Matrix value, std::span<const Var> parents, Backprop backprop);
  template <class Expr>
  void accumulate(const Var& target, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(target.id())];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }
  // Grad buffer for in-place scatter updates (allocated zero on demand).
  Matrix& grad_buffer(const Var& target);

 private:
  struct Node {
    Matrix own;
    const Matrix* ref = nullptr;
    Matrix grad;
    Parameter* sink = nullptr;
    bool needs_grad = false;
    Backprop backprop;

    const Matrix& value() const { return ref ? *ref : own; }
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
};

// ---- elementwise / linear algebra ----
Var matmul(const Var& a, const Var& b);        // a b
Var matmul_nt(const Var& a, const Var& b);     // a b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);           // Hadamard
Var scale(const Var& a, double s);
Var one_minus(const Var& a);                   // 1 - a
Var add_row(const Var& a, const Var& row);     // a + broadcast(row), row is 1 x cols
Var transpose(const Var& a);

// ---- activations ----
Var gelu(const Var& a);     // exact (erf) form
Var sigmoid(const Var& a);

// Row-wise layer normalisation with learned gain/shift (1 x cols each).
Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps = 1e-5);

// Row-wise softmax. Columns with key_mask == 0, and columns j > i when
// causal, receive exactly zero weight. key_mask may be empty (all valid).
Var masked_softmax_rows(const Var& x, const Mask& key_mask, bool causal);
// Same masking, log domain; masked entries are -inf.
Var masked_log_softmax_rows(const Var& x, const Mask& key_mask);

// ---- shape ----
Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, Index start, Index count);
Var slice_rows(const Var& a, Index start, Index count);
Var gather_rows(const Var& table, std::span<const int> ids);
Var broadcast_rows(const Var& row, Index n);
// Mean over rows with mask != 0; 1 x cols.
Var masked_mean_rows(const Var& a, const Mask& mask);

// ---- reductions ----
// out(i, 0) = a(i, index[i]); negative index gives 0 and no gradient.
Var pick(const Var& a, std::span<const int> index);
Var sum_all(const Var& a);

}  // namespace cisum::ag
