#pragma once

#include "tensor.hpp"

namespace kseg {

// Adam with bias correction. Parameters with trainable == false or without a
// populated gradient are left untouched.
template <class T>
class Adam {
 public:
  explicit Adam(T lr = T(1e-3), T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor<T>>& params) {
    ++t_;
    if (m_.size() < params.size()) {
      m_.resize(params.size());
      v_.resize(params.size());
    }
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& param = params[p];
      if (!param.trainable() || param.grad().empty()) continue;
      require(param.grad().size() == param.size(), ErrorClass::Shape,
              "adam: gradient shape mismatch");
      if (m_[p].size() != param.size()) {
        m_[p].assign(param.size(), T(0));
        v_[p].assign(param.size(), T(0));
      }
      auto& m = m_[p];
      auto& v = v_[p];
      auto& w = param.data();
      const auto& g = param.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

  std::size_t step_count() const { return t_; }
  T learning_rate() const { return lr_; }

 private:
  T lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace kseg
