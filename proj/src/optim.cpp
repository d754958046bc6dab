// SPDX-License-Identifier: Apache-2.0
#include "loretta/optim.hpp"

#include <cmath>

namespace loretta {

template <typename T>
AdamW<T>::AdamW(std::vector<Parameter<T>*> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  require(config_.learning_rate >= 0.0 && std::isfinite(config_.learning_rate),
          ErrorCode::InvalidArgument, "learning rate must be finite and >= 0");
  require(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 &&
              config_.beta2 < 1.0 && config_.eps > 0.0 && config_.weight_decay >= 0.0,
          ErrorCode::InvalidArgument, "invalid AdamW hyperparameters");
  for (auto* p : params_) {
    require(p->materialized(), ErrorCode::InvalidConfig, p->name + " is shape-only");
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void AdamW<T>::step(const std::vector<const Tensor<T>*>& grads) {
  require(grads.size() == params_.size(), ErrorCode::InvalidArgument,
          "expected one gradient per parameter");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i] || grads[i]->empty()) continue;
    require(grads[i]->size() == params_[i]->value.size(), ErrorCode::ShapeMismatch,
            params_[i]->name + ": gradient shape mismatch");
    require(grads[i]->all_finite(), ErrorCode::NonFiniteGradient,
            params_[i]->name + " received a non-finite gradient");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter<T>& p = *params_[i];
    const Tensor<T>* g = grads[i] && !grads[i]->empty() ? grads[i] : nullptr;
    const double decay = p.kind == ParamKind::Weight ? config_.weight_decay : 0.0;
    T* pv = p.value.data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double gj = g ? static_cast<double>((*g)[j]) : 0.0;
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      const double old = static_cast<double>(pv[j]);
      pv[j] = static_cast<T>(old - lr * mhat / (std::sqrt(vhat) + config_.eps) - lr * decay * old);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace loretta
