// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "loretta/parameter.hpp"
#include "loretta/tensor.hpp"

namespace loretta::ad {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape<T>& tape() const noexcept { return *tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of tensor operations. Append order is a topological
/// order, so backward is a single reverse sweep. One tape per forward pass;
/// a tape is not thread-safe but independent tapes are.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);

  /// Leaf bound to a parameter: borrows its storage and requires a gradient
  /// iff the parameter is trainable. Binding the same parameter twice
  /// returns the same node.
  Var<T> param(const Parameter<T>& p);

  /// Appends an op result. `fn` is dropped when no input needs a gradient.
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and sweeps backward. Throws NonScalarLoss
  /// unless `loss` holds exactly one element.
  void backward(Var<T> loss);
  /// Backward from an arbitrary node with an explicit upstream gradient.
  void backward(Var<T> out, const Tensor<T>& upstream);

  const Tensor<T>& value(Var<T> v) const;
  /// Zero tensor of the value's shape when no gradient reached the node.
  Tensor<T> grad(Var<T> v) const;
  /// Gradient of a bound parameter, or nullptr if it was never bound or is
  /// frozen.
  const Tensor<T>* grad_of(const Parameter<T>& p) const;

  bool requires_grad(Var<T> v) const { return nodes_.at(v.id()).requires_grad; }
  /// Gradient buffer for `v`, zero-initialised on first access.
  Tensor<T>& grad_buffer(Var<T> v);

  std::size_t size() const noexcept { return nodes_.size(); }

  /// With grad disabled every node is recorded as a constant.
  void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
  /// Debug mode: every recorded value is checked for NaN/Inf.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

  /// Smallest |x| seen by any relu on this tape (infinity if none). Finite
  /// difference checks use it to stay clear of the kink.
  double relu_margin() const noexcept { return relu_margin_; }
  void note_relu_input(double x) noexcept { relu_margin_ = std::min(relu_margin_, std::abs(x)); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;

    const Tensor<T>& value() const { return borrowed ? *borrowed : owned; }
  };

  Var<T> push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> bound_;
  bool grad_enabled_ = true;
  bool check_finite_ = false;
  double relu_margin_ = std::numeric_limits<double>::infinity();
};

// Primitive set. Shapes are checked eagerly; a mismatch throws ShapeMismatch.

/// [m,k]x[k,n] or batched [b,m,k]x[b,k,n].
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
/// x[..., n] + bias[n]; the only broadcasting op.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> concat_last(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_last(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> Var<T> relu(Var<T> a);
/// tanh approximation.
template <typename T> Var<T> gelu(Var<T> a);
/// Softmax over the last axis.
template <typename T> Var<T> softmax(Var<T> a);
/// Normalises over the last axis, then gain * xhat + offset.
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> offset, T eps = T(1e-5));
/// Rows of `table` selected by `ids`: [ids.size(), table.cols].
template <typename T> Var<T> embedding(Var<T> table, std::span<const std::uint32_t> ids);
/// Mean over rows of softmax cross-entropy; logits [B, C].
template <typename T> Var<T> cross_entropy(Var<T> logits, std::span<const std::uint32_t> labels);
template <typename T> Var<T> sum(Var<T> a);
/// [B, S, H] -> [B, H], mean over S.
template <typename T> Var<T> mean_tokens(Var<T> a);

}  // namespace loretta::ad
