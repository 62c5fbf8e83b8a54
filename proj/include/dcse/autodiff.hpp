#pragma once

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// A Tape records every operation in creation order, which is a topological
// order of the computation graph. backward() walks the tape once in reverse
// and accumulates gradients additively, so fan-out is handled by summation.
// Nodes whose inputs need no gradient store no backward rule at all; with
// frozen parameters this prunes whole sub-graphs from the backward pass.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcse/tensor.hpp"

namespace dcse {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() { grad = Tensor<T>(value.rows(), value.cols()); }
};

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  T scalar() const { return value()[0]; }
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  // Leaf bound to a parameter; repeated calls return the same node. The node
  // references p.value, which must outlive the tape and stay unchanged while
  // it is in use. On a grad-enabled tape, backward() adds into p.grad unless
  // p is frozen.
  Var<T> param(const Parameter<T>& p);

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn);
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
  }

  const Tensor<T>& value(Var<T> v) const {
    const Node& n = nodes_[v.id];
    return n.ref != nullptr ? *n.ref : n.value;
  }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }

  // Gradient slot of a node, zero-allocated on first access.
  Tensor<T>& grad(Var<T> v) { return grad(v.id); }
  Tensor<T>& grad(std::uint32_t id);
  // Gradient if one was ever accumulated, else nullptr.
  const Tensor<T>* grad_if_any(Var<T> v) const;

  // Seeds d(root)/d(root) = 1 (root must be 1x1), propagates to every node,
  // then adds leaf gradients into their Parameter::grad slots.
  void backward(Var<T> root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::uint32_t> param_nodes_;
  bool grad_enabled_;
};

namespace ad {

template <class T> Var<T> matmul(Var<T> a, Var<T> b);
// a * b^T
template <class T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
// Adds a 1 x c row to every row of a.
template <class T> Var<T> add_row(Var<T> a, Var<T> row);
template <class T> Var<T> scale(Var<T> a, T s);
// Multiplies a by the 1x1 tensor s.
template <class T> Var<T> scale_by(Var<T> a, Var<T> s);
template <class T> Var<T> relu(Var<T> a);
template <class T> Var<T> abs(Var<T> a);
template <class T> Var<T> sigmoid(Var<T> a);
// Row-wise softmax with per-row max subtraction. Columns with col_mask 0
// get probability exactly 0.
template <class T> Var<T> softmax_rows(Var<T> a, const Mask* col_mask = nullptr);
template <class T> Var<T> layer_norm_rows(Var<T> x, Var<T> gain, Var<T> bias, T eps);
// Mean over the rows whose mask entry is 1; result is 1 x cols.
template <class T> Var<T> masked_mean_rows(Var<T> x, const Mask& mask);
// Cosine of two equally shaped tensors viewed as flat vectors; 1x1 result.
template <class T> Var<T> cosine(Var<T> u, Var<T> v);
template <class T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <class T> Var<T> slice_cols(Var<T> a, std::size_t first, std::size_t width);
template <class T> Var<T> slice_rows(Var<T> a, std::size_t first, std::size_t height);
// Appends zero rows until a has n rows.
template <class T> Var<T> pad_rows(Var<T> a, std::size_t n);
template <class T> Var<T> gather_rows(Var<T> table, std::span<const int> ids);
// Zeroes entry (i,j) whenever row_mask[i] == 0 or col_mask[j] == 0.
template <class T> Var<T> mask_outer(Var<T> m, const Mask& row_mask, const Mask& col_mask);
template <class T> Var<T> sum_all(Var<T> a);
template <class T> Var<T> mean_of(std::span<const Var<T>> parts);
// Packs 1x1 scalars into a 1 x k row.
template <class T> Var<T> stack_scalars(std::span<const Var<T>> parts);
template <class T> Var<T> element(Var<T> a, std::size_t r, std::size_t c);
// logsumexp(logits) - logits[target] for a 1 x k row.
template <class T> Var<T> softmax_cross_entropy(Var<T> logits, std::size_t target);
// Binary cross-entropy on a 1x1 logit with label in {0,1}.
template <class T> Var<T> bce_with_logits(Var<T> logit, T label);

}  // namespace ad

// Plain helpers for ops on values outside any tape.
template <class T>
T dot(std::span<const T> a, std::span<const T> b);
template <class T>
T cosine_value(std::span<const T> a, std::span<const T> b);
template <class T>
Tensor<T> matmul_value(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace dcse
