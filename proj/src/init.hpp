#pragma once

#include "tensor.hpp"

namespace kseg {

enum class InitScheme { He, Glorot, Zeros, Constant };

namespace detail {

inline std::pair<std::size_t, std::size_t> fan_in_out(const Shape& s) {
  if (s.size() == 4) {
    // OIHW convolution kernel
    const std::size_t rf = s[2] * s[3];
    return {s[1] * rf, s[0] * rf};
  }
  if (s.size() == 2) return {s[0], s[1]};
  return {numel(s), numel(s)};
}

}  // namespace detail

template <class T>
Tensor<T> init_params(Shape shape, InitScheme scheme, std::uint64_t seed, T constant = T(0)) {
  require(!shape.empty(), ErrorClass::Shape, "init_params: empty shape");
  for (std::size_t e : shape)
    require(e > 0, ErrorClass::Shape, "init_params: zero extent in shape");
  std::vector<T> data(numel(shape));
  Rng rng(seed);
  auto [fan_in, fan_out] = detail::fan_in_out(shape);
  switch (scheme) {
    case InitScheme::He: {
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (T& v : data) v = static_cast<T>(rng.normal() * std);
      break;
    }
    case InitScheme::Glorot: {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (T& v : data) v = static_cast<T>(rng.uniform(-limit, limit));
      break;
    }
    case InitScheme::Zeros:
      break;
    case InitScheme::Constant:
      std::fill(data.begin(), data.end(), constant);
      break;
  }
  return Tensor<T>(std::move(shape), std::move(data), true);
}

}  // namespace kseg
