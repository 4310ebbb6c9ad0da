#pragma once

#include "tensor.hpp"

namespace kseg {

// Central finite-difference check of the analytic gradients of a scalar-valued
// model fragment. fragment() must rebuild the graph from the current parameter
// values on every call. Run in double precision.
template <class T>
T grad_check(const std::function<Tensor<T>()>& fragment, std::vector<Tensor<T>> params,
             T fd_eps = T(1e-5)) {
  for (auto& p : params) p.zero_grad();
  Tensor<T> loss = fragment();
  require(loss.size() == 1, ErrorClass::Shape, "grad_check: fragment must return a scalar");
  require(std::isfinite(static_cast<double>(loss.item())), ErrorClass::Numeric,
          "grad_check: non-finite output");
  backward(loss);

  T max_rel_err = 0;
  for (auto& p : params) {
    std::vector<T> analytic = p.grad().empty() ? std::vector<T>(p.size(), T(0)) : p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T orig = p.data()[i];
      p.data()[i] = orig + fd_eps;
      const T hi = fragment().item();
      p.data()[i] = orig - fd_eps;
      const T lo = fragment().item();
      p.data()[i] = orig;
      require(std::isfinite(static_cast<double>(hi)) && std::isfinite(static_cast<double>(lo)),
              ErrorClass::Numeric, "grad_check: non-finite output");
      const T numeric = (hi - lo) / (T(2) * fd_eps);
      // The denominator floor reflects FD measurement noise: central
      // differences on an O(1) loss resolve gradients no finer than about
      // machine_eps/fd_eps, so components below 1e-6 are compared with an
      // absolute tolerance of 1e-10 instead of a relative one.
      const T denom = std::max(T(1e-6), std::abs(analytic[i]) + std::abs(numeric));
      max_rel_err = std::max(max_rel_err, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return max_rel_err;
}

}  // namespace kseg
