// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "loretta/tensor.hpp"

namespace loretta {

/// Which freezing-policy switch controls a parameter.
enum class ParamRole { Base, LayerNorm, Classifier, Peft };

/// Weight decay applies to `Weight` only.
enum class ParamKind { Weight, Bias, Norm };

template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  Tensor<T> value;  // empty for shape-only (meta) parameters
  ParamKind kind = ParamKind::Weight;
  ParamRole role = ParamRole::Base;
  bool trainable = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, ParamKind k, ParamRole r)
      : name(std::move(n)), shape(v.shape()), value(std::move(v)), kind(k), role(r) {}

  /// Shape-only parameter: counts toward reports but cannot run forward.
  static Parameter meta(std::string n, Shape s, ParamKind k, ParamRole r) {
    Parameter p;
    p.name = std::move(n);
    p.shape = std::move(s);
    p.kind = k;
    p.role = r;
    return p;
  }

  std::size_t numel() const { return shape_numel(shape); }
  bool materialized() const { return value.size() == numel() && value.shape() == shape; }
};

/// The unit of counting and persistence: a dense tensor, or all factors of
/// one TT-format weight.
template <typename T>
struct ParamGroup {
  std::string name;
  std::vector<Parameter<T>*> parts;
  Shape dims;                       // dense shape, or TT dims k_1..k_d
  std::vector<std::size_t> ranks;   // empty for dense
  ParamRole role = ParamRole::Base;

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto* p : parts) n += p->numel();
    return n;
  }
  bool trainable() const {
    for (const auto* p : parts)
      if (!p->trainable) return false;
    return !parts.empty();
  }
  void set_trainable(bool on) {
    for (auto* p : parts) p->trainable = on;
  }
};

template <typename T>
ParamGroup<T> dense_group(Parameter<T>& p) {
  return ParamGroup<T>{p.name, {&p}, p.shape, {}, p.role};
}

}  // namespace loretta
