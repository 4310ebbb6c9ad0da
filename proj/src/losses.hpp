#pragma once

// Segmentation losses and class-weighting schemes. Class weights are
// normalized inside each loss, so scaling every weight by a positive constant
// leaves the loss value unchanged.

#include "metrics.hpp"
#include "tensor.hpp"

namespace kseg {

enum class WeightScheme { None, Isv, Isrv };

inline const char* weight_scheme_name(WeightScheme s) {
  switch (s) {
    case WeightScheme::None: return "none";
    case WeightScheme::Isv: return "isv";
    case WeightScheme::Isrv: return "isrv";
  }
  return "?";
}

struct ClassWeightTable {
  std::vector<double> freq;     // f_c, sums to 1
  std::vector<double> weight;   // w_c
  WeightScheme scheme = WeightScheme::None;
};

inline ClassWeightTable class_frequencies(const std::vector<SegMask>& masks,
                                          std::size_t num_classes) {
  require(!masks.empty(), ErrorClass::State, "class_frequencies: empty dataset");
  std::vector<std::uint64_t> counts(num_classes, 0);
  std::uint64_t total = 0;
  for (const auto& m : masks)
    for (auto id : m.ids) {
      require(id < num_classes, ErrorClass::Shape, "class_frequencies: id out of range");
      ++counts[id];
      ++total;
    }
  ClassWeightTable t;
  t.freq.resize(num_classes);
  t.weight.assign(num_classes, 1.0);
  for (std::size_t c = 0; c < num_classes; ++c)
    t.freq[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
  return t;
}

inline ClassWeightTable class_weights(ClassWeightTable table, WeightScheme scheme) {
  table.scheme = scheme;
  table.weight.assign(table.freq.size(), 1.0);
  if (scheme == WeightScheme::None) return table;
  for (std::size_t c = 0; c < table.freq.size(); ++c) {
    require(table.freq[c] > 0.0, ErrorClass::State,
            "class_weights: class " + std::to_string(c) +
                " absent from the training set; ISV/ISRV weights are undefined");
    table.weight[c] = scheme == WeightScheme::Isv ? 1.0 / (table.freq[c] * table.freq[c])
                                                  : 1.0 / std::sqrt(table.freq[c]);
  }
  return table;
}

// One-hot constant tensor [N,C,H,W] from a batch of masks.
template <class T>
Tensor<T> one_hot(const std::vector<SegMask>& masks, std::size_t num_classes) {
  require(!masks.empty(), ErrorClass::Shape, "one_hot: no masks");
  const std::size_t N = masks.size(), H = masks[0].h, W = masks[0].w;
  Tensor<T> out = Tensor<T>::zeros(Shape{N, num_classes, H, W});
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t i = 0; i < H * W; ++i)
      out.data()[(b * num_classes + masks[b].ids[i]) * H * W + i] = T(1);
  return out;
}

namespace detail {

template <class T>
std::vector<T> normalized_weights(const std::vector<double>& w) {
  double s = 0.0;
  for (double v : w) s += v;
  std::vector<T> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<T>(w[i] / s);
  return out;
}

}  // namespace detail

inline constexpr double kLossEps = 1e-6;
inline constexpr double kLogClamp = 1e-12;

// Weighted pixel-wise cross entropy over softmax probabilities:
//   -sum_p w_{y(p)} log(probs[y(p)]) / sum_p w_{y(p)}
template <class T>
Tensor<T> cross_entropy_loss(const Tensor<T>& probs, const std::vector<SegMask>& targets,
                             const ClassWeightTable& weights) {
  require(probs.shape().size() == 4, ErrorClass::Shape, "cross_entropy_loss expects NCHW probs");
  const std::size_t N = probs.shape()[0], C = probs.shape()[1], H = probs.shape()[2],
                    W = probs.shape()[3];
  require(targets.size() == N, ErrorClass::Shape, "cross_entropy_loss: batch size mismatch");
  require(weights.weight.size() == C, ErrorClass::Shape, "cross_entropy_loss: weight table size");

  auto n = detail::make_op_node<T>(Shape{1}, {probs.node()});
  double num = 0.0, wsum = 0.0;
  for (std::size_t b = 0; b < N; ++b) {
    require(targets[b].h == H && targets[b].w == W, ErrorClass::Shape,
            "cross_entropy_loss: mask size mismatch");
    for (std::size_t i = 0; i < H * W; ++i) {
      const std::uint8_t y = targets[b].ids[i];
      require(y < C, ErrorClass::Shape, "cross_entropy_loss: target id out of range");
      const double p = static_cast<double>(probs.data()[(b * C + y) * H * W + i]);
      const double w = weights.weight[y];
      num -= w * std::log(std::max(p, kLogClamp));
      wsum += w;
    }
  }
  n->val[0] = static_cast<T>(num / wsum);

  auto np = probs.node();
  Node<T>* self = n.get();
  auto wtab = weights.weight;
  n->backprop = [self, np, wtab, targets, N, C, H, W, wsum] {
    if (!np->requires_grad) return;
    np->ensure_grad();
    const T g = self->grad[0];
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t i = 0; i < H * W; ++i) {
        const std::uint8_t y = targets[b].ids[i];
        const std::size_t idx = (b * C + y) * H * W + i;
        const double p = static_cast<double>(np->val[idx]);
        if (p <= kLogClamp) continue;  // clamped region has zero slope
        np->grad[idx] -= g * static_cast<T>(wtab[y] / (wsum * p));
      }
  };
  return Tensor<T>(n);
}

// Dice loss with squared denominators:
//   D_c = 2 sum(p g) / (sum(p^2) + sum(g^2) + eps),  loss = 1 - sum_c w_c D_c
template <class T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target_one_hot,
                    const ClassWeightTable& weights) {
  require(probs.shape() == target_one_hot.shape(), ErrorClass::Shape,
          "dice_loss: probs/target shape mismatch");
  const auto w = detail::normalized_weights<T>(weights.weight);
  Tensor<T> inter = sum_per_channel(mul(probs, target_one_hot));
  Tensor<T> psum = sum_per_channel(mul(probs, probs));
  Tensor<T> gsum = sum_per_channel(mul(target_one_hot, target_one_hot));
  Tensor<T> denom = add_scalar(add(psum, gsum), static_cast<T>(kLossEps));
  Tensor<T> dice = div(scale(inter, T(2)), denom);
  return add_scalar(scale(dot_const(dice, w), T(-1)), T(1));
}

// Dual-form Tanimoto loss:
//   T(p,g) = sum(p g) / (sum(p^2 + g^2) - sum(p g) + eps)
//   loss   = 1 - (T(p,g) + T(1-p, 1-g)) / 2, class-weighted like dice.
template <class T>
Tensor<T> tanimoto_loss(const Tensor<T>& probs, const Tensor<T>& target_one_hot,
                        const ClassWeightTable& weights) {
  require(probs.shape() == target_one_hot.shape(), ErrorClass::Shape,
          "tanimoto_loss: probs/target shape mismatch");
  const auto w = detail::normalized_weights<T>(weights.weight);
  auto tanimoto = [&](const Tensor<T>& p, const Tensor<T>& g) {
    Tensor<T> inter = sum_per_channel(mul(p, g));
    Tensor<T> sq = add(sum_per_channel(mul(p, p)), sum_per_channel(mul(g, g)));
    Tensor<T> denom = add_scalar(sub(sq, inter), static_cast<T>(kLossEps));
    return div(inter, denom);
  };
  Tensor<T> direct = tanimoto(probs, target_one_hot);
  Tensor<T> comp = tanimoto(add_scalar(scale(probs, T(-1)), T(1)),
                            add_scalar(scale(target_one_hot, T(-1)), T(1)));
  Tensor<T> mean = scale(add(direct, comp), T(0.5));
  return add_scalar(scale(dot_const(mean, w), T(-1)), T(1));
}

// Mean binary cross entropy over sigmoid outputs [N,1] against 0/1 labels.
template <class T>
Tensor<T> binary_cross_entropy(const Tensor<T>& probs, const std::vector<T>& labels) {
  const std::size_t N = probs.size();
  require(labels.size() == N, ErrorClass::Shape, "binary_cross_entropy: label count mismatch");
  auto n = detail::make_op_node<T>(Shape{1}, {probs.node()});
  double acc = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double y = labels[i];
    const double p = std::clamp(static_cast<double>(probs.data()[i]), kLogClamp, 1.0 - kLogClamp);
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  n->val[0] = static_cast<T>(acc / N);
  auto np = probs.node();
  Node<T>* self = n.get();
  n->backprop = [self, np, labels, N] {
    if (!np->requires_grad) return;
    np->ensure_grad();
    const T g = self->grad[0];
    for (std::size_t i = 0; i < N; ++i) {
      const double p = static_cast<double>(np->val[i]);
      if (p <= kLogClamp || p >= 1.0 - kLogClamp) continue;
      const double y = labels[i];
      np->grad[i] += g * static_cast<T>((-y / p + (1.0 - y) / (1.0 - p)) / N);
    }
  };
  return Tensor<T>(n);
}

}  // namespace kseg
