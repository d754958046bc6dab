// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "loretta/parameter.hpp"

namespace loretta {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay:
///   p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * wd * p
/// Decay touches ParamKind::Weight only.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, AdamWConfig config);

  /// grads[i] pairs with params[i]; nullptr means a zero gradient. Throws
  /// NonFiniteGradient before touching any parameter.
  void step(const std::vector<const Tensor<T>*>& grads);

  std::size_t steps() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return config_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamWConfig config_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::size_t t_ = 0;
};

}  // namespace loretta
