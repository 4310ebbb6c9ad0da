#pragma once

// Differentiable layer ops over NCHW tensors. Convolution uses the
// cross-correlation convention (no kernel flip); im2col + GEMM via Eigen.

#include <Eigen/Core>

#include "tensor.hpp"

namespace kseg {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

namespace detail {

// cols: [IC*KH*KW x OH*OW] for one batch item.
template <class T>
void im2col(const T* img, std::size_t IC, std::size_t H, std::size_t W,
            std::size_t KH, std::size_t KW, std::size_t stride, std::size_t pad,
            std::size_t dil, std::size_t OH, std::size_t OW, T* cols) {
  const std::size_t row_count = IC * KH * KW;
  for (std::size_t ic = 0; ic < IC; ++ic)
    for (std::size_t kh = 0; kh < KH; ++kh)
      for (std::size_t kw = 0; kw < KW; ++kw) {
        const std::size_t r = (ic * KH + kh) * KW + kw;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * stride + kh * dil) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ow = 0; ow < OW; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * stride + kw * dil) - static_cast<std::ptrdiff_t>(pad);
            T v = T(0);
            if (ih >= 0 && ih < static_cast<std::ptrdiff_t>(H) && iw >= 0 &&
                iw < static_cast<std::ptrdiff_t>(W))
              v = img[(ic * H + ih) * W + iw];
            cols[(oh * OW + ow) * row_count + r] = v;
          }
        }
      }
}

template <class T>
void col2im(const T* cols, std::size_t IC, std::size_t H, std::size_t W,
            std::size_t KH, std::size_t KW, std::size_t stride, std::size_t pad,
            std::size_t dil, std::size_t OH, std::size_t OW, T* img) {
  const std::size_t row_count = IC * KH * KW;
  for (std::size_t ic = 0; ic < IC; ++ic)
    for (std::size_t kh = 0; kh < KH; ++kh)
      for (std::size_t kw = 0; kw < KW; ++kw) {
        const std::size_t r = (ic * KH + kh) * KW + kw;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * stride + kh * dil) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t ow = 0; ow < OW; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * stride + kw * dil) - static_cast<std::ptrdiff_t>(pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
            img[(ic * H + ih) * W + iw] += cols[(oh * OW + ow) * row_count + r];
          }
        }
      }
}

}  // namespace detail

// input [N,IC,H,W], kernel [OC,IC,KH,KW], bias [OC] (optional, pass invalid Tensor).
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t pad = 0, std::size_t dil = 1) {
  require(input.shape().size() == 4 && kernel.shape().size() == 4, ErrorClass::Shape,
          "conv2d expects NCHW input and OIHW kernel");
  require(stride >= 1 && dil >= 1, ErrorClass::Shape, "conv2d: stride and dilation must be >= 1");
  const std::size_t N = input.shape()[0], IC = input.shape()[1], H = input.shape()[2],
                    W = input.shape()[3];
  const std::size_t OC = kernel.shape()[0], KH = kernel.shape()[2], KW = kernel.shape()[3];
  require(kernel.shape()[1] == IC, ErrorClass::Shape,
          "conv2d: kernel expects " + std::to_string(kernel.shape()[1]) +
              " input channels, got " + std::to_string(IC));
  const std::ptrdiff_t oh_num = static_cast<std::ptrdiff_t>(H + 2 * pad) -
                                static_cast<std::ptrdiff_t>(dil * (KH - 1) + 1);
  const std::ptrdiff_t ow_num = static_cast<std::ptrdiff_t>(W + 2 * pad) -
                                static_cast<std::ptrdiff_t>(dil * (KW - 1) + 1);
  require(oh_num >= 0 && ow_num >= 0, ErrorClass::Shape,
          "conv2d: kernel does not fit in padded input");
  const std::size_t OH = static_cast<std::size_t>(oh_num) / stride + 1;
  const std::size_t OW = static_cast<std::size_t>(ow_num) / stride + 1;
  if (bias.valid())
    require(bias.size() == OC, ErrorClass::Shape, "conv2d: bias length != out channels");

  std::vector<std::shared_ptr<Node<T>>> parents{input.node(), kernel.node()};
  if (bias.valid()) parents.push_back(bias.node());
  auto n = detail::make_op_node<T>(Shape{N, OC, OH, OW}, std::move(parents));

  const std::size_t rows = IC * KH * KW, cols_per = OH * OW;
  auto cols = std::make_shared<std::vector<T>>(rows * cols_per * N);
  for (std::size_t b = 0; b < N; ++b)
    detail::im2col(input.data().data() + b * IC * H * W, IC, H, W, KH, KW, stride, pad, dil,
                   OH, OW, cols->data() + b * rows * cols_per);

  ECMap<T> K(kernel.data().data(), rows, OC);  // kernel viewed as [rows x OC] (col-major over OIHW)
  // Kernel memory is OC-major (row per oc contiguous over IC*KH*KW); view as
  // a [rows x OC] column-major matrix so column oc is that filter.
  for (std::size_t b = 0; b < N; ++b) {
    ECMap<T> C(cols->data() + b * rows * cols_per, rows, cols_per);
    EMap<T> O(n->val.data() + b * OC * cols_per, cols_per, OC);
    O.noalias() = C.transpose() * K;
  }
  // Output written as [cols_per x OC] column-major == [OC][OH*OW] row blocks. Good.
  if (bias.valid())
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t oc = 0; oc < OC; ++oc) {
        T* dst = n->val.data() + (b * OC + oc) * cols_per;
        const T bv = bias.data()[oc];
        for (std::size_t i = 0; i < cols_per; ++i) dst[i] += bv;
      }

  auto nin = input.node(), nk = kernel.node();
  auto nb = bias.valid() ? bias.node() : nullptr;
  Node<T>* self = n.get();
  n->backprop = [self, nin, nk, nb, cols, N, IC, H, W, OC, KH, KW, stride, pad, dil, OH, OW] {
    const std::size_t rows = IC * KH * KW, cols_per = OH * OW;
    if (nk->requires_grad) {
      nk->ensure_grad();
      EMap<T> dK(nk->grad.data(), rows, OC);
      for (std::size_t b = 0; b < N; ++b) {
        ECMap<T> C(cols->data() + b * rows * cols_per, rows, cols_per);
        ECMap<T> dO(self->grad.data() + b * OC * cols_per, cols_per, OC);
        dK.noalias() += C * dO;
      }
    }
    if (nb && nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t b = 0; b < N; ++b)
        for (std::size_t oc = 0; oc < OC; ++oc) {
          const T* src = self->grad.data() + (b * OC + oc) * cols_per;
          T acc = 0;
          for (std::size_t i = 0; i < cols_per; ++i) acc += src[i];
          nb->grad[oc] += acc;
        }
    }
    if (nin->requires_grad) {
      nin->ensure_grad();
      ECMap<T> K(nk->val.data(), rows, OC);
      std::vector<T> dcols(rows * cols_per);
      for (std::size_t b = 0; b < N; ++b) {
        ECMap<T> dO(self->grad.data() + b * OC * cols_per, cols_per, OC);
        EMap<T> dC(dcols.data(), rows, cols_per);
        dC.noalias() = K * dO.transpose();
        detail::col2im(dcols.data(), IC, H, W, KH, KW, stride, pad, dil, OH, OW,
                       nin->grad.data() + b * IC * H * W);
      }
    }
  };
  return Tensor<T>(n);
}

// input [N,IC,H,W], kernel [IC,OC,KH,KW]; output [N,OC,(H-1)*s+KH,(W-1)*s+KW].
template <class T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                            std::size_t stride = 1) {
  require(input.shape().size() == 4 && kernel.shape().size() == 4, ErrorClass::Shape,
          "transposed_conv2d expects NCHW input");
  require(stride >= 1, ErrorClass::Shape, "transposed_conv2d: stride must be >= 1");
  const std::size_t N = input.shape()[0], IC = input.shape()[1], H = input.shape()[2],
                    W = input.shape()[3];
  require(kernel.shape()[0] == IC, ErrorClass::Shape,
          "transposed_conv2d: kernel expects " + std::to_string(kernel.shape()[0]) +
              " input channels, got " + std::to_string(IC));
  const std::size_t OC = kernel.shape()[1], KH = kernel.shape()[2], KW = kernel.shape()[3];
  const std::size_t OH = (H - 1) * stride + KH, OW = (W - 1) * stride + KW;
  auto n = detail::make_op_node<T>(Shape{N, OC, OH, OW}, {input.node(), kernel.node()});
  std::fill(n->val.begin(), n->val.end(), T(0));
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t ic = 0; ic < IC; ++ic)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const T x = input.data()[((b * IC + ic) * H + i) * W + j];
          if (x == T(0)) continue;
          for (std::size_t oc = 0; oc < OC; ++oc) {
            const T* k = kernel.data().data() + ((ic * OC + oc) * KH) * KW;
            T* out = n->val.data() + ((b * OC + oc) * OH + i * stride) * OW + j * stride;
            for (std::size_t kh = 0; kh < KH; ++kh)
              for (std::size_t kw = 0; kw < KW; ++kw) out[kh * OW + kw] += x * k[kh * KW + kw];
          }
        }
  auto nin = input.node(), nk = kernel.node();
  Node<T>* self = n.get();
  n->backprop = [self, nin, nk, N, IC, H, W, OC, KH, KW, stride, OH, OW] {
    if (nin->requires_grad) nin->ensure_grad();
    if (nk->requires_grad) nk->ensure_grad();
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t ic = 0; ic < IC; ++ic)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            const std::size_t xi = ((b * IC + ic) * H + i) * W + j;
            for (std::size_t oc = 0; oc < OC; ++oc) {
              const T* k = nk->val.data() + ((ic * OC + oc) * KH) * KW;
              const T* dy = self->grad.data() + ((b * OC + oc) * OH + i * stride) * OW + j * stride;
              if (nin->requires_grad) {
                T acc = 0;
                for (std::size_t kh = 0; kh < KH; ++kh)
                  for (std::size_t kw = 0; kw < KW; ++kw) acc += k[kh * KW + kw] * dy[kh * OW + kw];
                nin->grad[xi] += acc;
              }
              if (nk->requires_grad) {
                const T x = nin->val[xi];
                T* dk = nk->grad.data() + ((ic * OC + oc) * KH) * KW;
                for (std::size_t kh = 0; kh < KH; ++kh)
                  for (std::size_t kw = 0; kw < KW; ++kw) dk[kh * KW + kw] += x * dy[kh * OW + kw];
              }
            }
          }
  };
  return Tensor<T>(n);
}

// Non-overlapping max pooling; window must divide both spatial extents.
// Ties route the gradient to the first maximal element in row-major order.
template <class T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window) {
  require(input.shape().size() == 4, ErrorClass::Shape, "max_pool2d expects NCHW");
  const std::size_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2],
                    W = input.shape()[3];
  require(window >= 1 && H % window == 0 && W % window == 0, ErrorClass::Shape,
          "max_pool2d: window must divide spatial extents");
  const std::size_t OH = H / window, OW = W / window;
  auto n = detail::make_op_node<T>(Shape{N, C, OH, OW}, {input.node()});
  auto argmax = std::make_shared<std::vector<std::size_t>>(n->val.size());
  for (std::size_t b = 0; b < N * C; ++b) {
    const T* src = input.data().data() + b * H * W;
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        T best = src[(oh * window) * W + ow * window];
        std::size_t best_i = (oh * window) * W + ow * window;
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = (oh * window + i) * W + ow * window + j;
            if (src[idx] > best) {
              best = src[idx];
              best_i = idx;
            }
          }
        n->val[(b * OH + oh) * OW + ow] = best;
        (*argmax)[(b * OH + oh) * OW + ow] = b * H * W + best_i;
      }
  }
  auto nin = input.node();
  Node<T>* self = n.get();
  n->backprop = [self, nin, argmax] {
    if (!nin->requires_grad) return;
    nin->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      nin->grad[(*argmax)[i]] += self->grad[i];
  };
  return Tensor<T>(n);
}

// Adaptive average pooling into bins x bins near-equal rectangles.
template <class T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& input, std::size_t bins) {
  require(input.shape().size() == 4, ErrorClass::Shape, "adaptive_avg_pool2d expects NCHW");
  const std::size_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2],
                    W = input.shape()[3];
  require(bins >= 1 && bins <= H && bins <= W, ErrorClass::Shape,
          "adaptive_avg_pool2d: bins must be in [1, spatial extent]");
  auto n = detail::make_op_node<T>(Shape{N, C, bins, bins}, {input.node()});
  auto bound = [](std::size_t i, std::size_t extent, std::size_t b) {
    return (i * extent) / b;
  };
  for (std::size_t b = 0; b < N * C; ++b) {
    const T* src = input.data().data() + b * H * W;
    for (std::size_t bi = 0; bi < bins; ++bi)
      for (std::size_t bj = 0; bj < bins; ++bj) {
        const std::size_t h0 = bound(bi, H, bins), h1 = bound(bi + 1, H, bins);
        const std::size_t w0 = bound(bj, W, bins), w1 = bound(bj + 1, W, bins);
        T acc = 0;
        for (std::size_t i = h0; i < h1; ++i)
          for (std::size_t j = w0; j < w1; ++j) acc += src[i * W + j];
        n->val[(b * bins + bi) * bins + bj] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
      }
  }
  auto nin = input.node();
  Node<T>* self = n.get();
  n->backprop = [self, nin, N, C, H, W, bins, bound] {
    if (!nin->requires_grad) return;
    nin->ensure_grad();
    for (std::size_t b = 0; b < N * C; ++b)
      for (std::size_t bi = 0; bi < bins; ++bi)
        for (std::size_t bj = 0; bj < bins; ++bj) {
          const std::size_t h0 = bound(bi, H, bins), h1 = bound(bi + 1, H, bins);
          const std::size_t w0 = bound(bj, W, bins), w1 = bound(bj + 1, W, bins);
          const T g = self->grad[(b * bins + bi) * bins + bj] /
                      static_cast<T>((h1 - h0) * (w1 - w0));
          T* dst = nin->grad.data() + b * H * W;
          for (std::size_t i = h0; i < h1; ++i)
            for (std::size_t j = w0; j < w1; ++j) dst[i * W + j] += g;
        }
  };
  return Tensor<T>(n);
}

// Running statistics owned by a layer, updated in train mode.
template <class T>
struct BatchNormStats {
  std::vector<T> mean, var;
  bool initialized = false;
};

template <class T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, bool train, T momentum = T(0.9),
                     T eps = T(1e-5)) {
  require(input.shape().size() == 4, ErrorClass::Shape, "batch_norm expects NCHW");
  const std::size_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2],
                    W = input.shape()[3];
  require(gamma.size() == C && beta.size() == C, ErrorClass::Shape,
          "batch_norm: gamma/beta length must equal channel count");
  if (!train)
    require(stats.initialized, ErrorClass::State,
            "batch_norm: inference requires initialized running statistics");

  auto n = detail::make_op_node<T>(input.shape(), {input.node(), gamma.node(), beta.node()});
  const std::size_t M = N * H * W;  // normalization population per channel
  auto xhat = std::make_shared<std::vector<T>>(input.size());
  auto invstd = std::make_shared<std::vector<T>>(C);

  std::vector<T> mean(C, T(0)), var(C, T(0));
  if (train) {
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* src = input.data().data() + (b * C + c) * H * W;
        T acc = 0;
        for (std::size_t i = 0; i < H * W; ++i) acc += src[i];
        mean[c] += acc;
      }
    for (std::size_t c = 0; c < C; ++c) mean[c] /= static_cast<T>(M);
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* src = input.data().data() + (b * C + c) * H * W;
        T acc = 0;
        for (std::size_t i = 0; i < H * W; ++i) {
          const T d = src[i] - mean[c];
          acc += d * d;
        }
        var[c] += acc;
      }
    for (std::size_t c = 0; c < C; ++c) var[c] /= static_cast<T>(M);
    if (!stats.initialized) {
      stats.mean = mean;
      stats.var = var;
      stats.initialized = true;
    } else {
      for (std::size_t c = 0; c < C; ++c) {
        stats.mean[c] = momentum * stats.mean[c] + (T(1) - momentum) * mean[c];
        stats.var[c] = momentum * stats.var[c] + (T(1) - momentum) * var[c];
      }
    }
  } else {
    mean = stats.mean;
    var = stats.var;
  }

  for (std::size_t c = 0; c < C; ++c) (*invstd)[c] = T(1) / std::sqrt(var[c] + eps);
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = input.data().data() + (b * C + c) * H * W;
      T* xh = xhat->data() + (b * C + c) * H * W;
      T* dst = n->val.data() + (b * C + c) * H * W;
      const T is = (*invstd)[c], m = mean[c], g = gamma.data()[c], bt = beta.data()[c];
      for (std::size_t i = 0; i < H * W; ++i) {
        xh[i] = (src[i] - m) * is;
        dst[i] = g * xh[i] + bt;
      }
    }

  auto nin = input.node(), ng = gamma.node(), nb = beta.node();
  Node<T>* self = n.get();
  n->backprop = [self, nin, ng, nb, xhat, invstd, N, C, H, W, M, train] {
    std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* dy = self->grad.data() + (b * C + c) * H * W;
        const T* xh = xhat->data() + (b * C + c) * H * W;
        for (std::size_t i = 0; i < H * W; ++i) {
          sum_dy[c] += dy[i];
          sum_dy_xhat[c] += dy[i] * xh[i];
        }
      }
    if (ng->requires_grad) {
      ng->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) ng->grad[c] += sum_dy_xhat[c];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) nb->grad[c] += sum_dy[c];
    }
    if (nin->requires_grad) {
      nin->ensure_grad();
      for (std::size_t b = 0; b < N; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          const T* dy = self->grad.data() + (b * C + c) * H * W;
          const T* xh = xhat->data() + (b * C + c) * H * W;
          T* dx = nin->grad.data() + (b * C + c) * H * W;
          const T g = ng->val[c], is = (*invstd)[c];
          if (train) {
            const T mdy = sum_dy[c] / static_cast<T>(M);
            const T mdyx = sum_dy_xhat[c] / static_cast<T>(M);
            for (std::size_t i = 0; i < H * W; ++i)
              dx[i] += g * is * (dy[i] - mdy - xh[i] * mdyx);
          } else {
            for (std::size_t i = 0; i < H * W; ++i) dx[i] += g * is * dy[i];
          }
        }
    }
  };
  return Tensor<T>(n);
}

// ---- activations ------------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  auto n = detail::make_op_node<T>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      if (na->val[i] > T(0)) na->grad[i] += self->grad[i];
  };
  return Tensor<T>(n);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  auto n = detail::make_op_node<T>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = T(1) / (T(1) + std::exp(-a.data()[i]));
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) {
      const T s = self->val[i];
      na->grad[i] += self->grad[i] * s * (T(1) - s);
    }
  };
  return Tensor<T>(n);
}

template <class T>
Tensor<T> tanh_op(const Tensor<T>& a) {
  auto n = detail::make_op_node<T>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = std::tanh(a.data()[i]);
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) {
      const T t = self->val[i];
      na->grad[i] += self->grad[i] * (T(1) - t * t);
    }
  };
  return Tensor<T>(n);
}

// Per-pixel softmax across the channel axis of an NCHW tensor, with
// max-subtraction stabilization.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& a) {
  require(a.shape().size() == 4, ErrorClass::Shape, "softmax_channels expects NCHW");
  const std::size_t N = a.shape()[0], C = a.shape()[1], HW = a.shape()[2] * a.shape()[3];
  auto n = detail::make_op_node<T>(a.shape(), {a.node()});
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t i = 0; i < HW; ++i) {
      T mx = a.data()[(b * C) * HW + i];
      for (std::size_t c = 1; c < C; ++c)
        mx = std::max(mx, a.data()[(b * C + c) * HW + i]);
      T denom = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const T e = std::exp(a.data()[(b * C + c) * HW + i] - mx);
        n->val[(b * C + c) * HW + i] = e;
        denom += e;
      }
      for (std::size_t c = 0; c < C; ++c) n->val[(b * C + c) * HW + i] /= denom;
    }
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, N, C, HW] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t i = 0; i < HW; ++i) {
        T dot = 0;
        for (std::size_t c = 0; c < C; ++c)
          dot += self->grad[(b * C + c) * HW + i] * self->val[(b * C + c) * HW + i];
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t idx = (b * C + c) * HW + i;
          na->grad[idx] += self->val[idx] * (self->grad[idx] - dot);
        }
      }
  };
  return Tensor<T>(n);
}

// ---- structure ops ----------------------------------------------------------

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), ErrorClass::Shape, "concat_channels: no inputs");
  const std::size_t N = parts[0].shape()[0], H = parts[0].shape()[2], W = parts[0].shape()[3];
  std::size_t C = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& p : parts) {
    require(p.shape().size() == 4 && p.shape()[0] == N && p.shape()[2] == H &&
                p.shape()[3] == W,
            ErrorClass::Shape, "concat_channels: batch/spatial mismatch");
    C += p.shape()[1];
    parents.push_back(p.node());
  }
  auto n = detail::make_op_node<T>(Shape{N, C, H, W}, parents);
  const std::size_t HW = H * W;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.shape()[1];
    for (std::size_t b = 0; b < N; ++b)
      std::copy(p.data().begin() + b * pc * HW, p.data().begin() + (b + 1) * pc * HW,
                n->val.begin() + (b * C + off) * HW);
    off += pc;
  }
  Node<T>* self = n.get();
  std::vector<std::size_t> channel_counts;
  for (const auto& p : parts) channel_counts.push_back(p.shape()[1]);
  n->backprop = [self, parents, channel_counts, N, C, HW] {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parents.size(); ++pi) {
      auto& p = parents[pi];
      const std::size_t pc = channel_counts[pi];
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t b = 0; b < N; ++b)
          for (std::size_t i = 0; i < pc * HW; ++i)
            p->grad[b * pc * HW + i] += self->grad[(b * C + off) * HW + i];
      }
      off += pc;
    }
  };
  return Tensor<T>(n);
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_channels(std::vector<Tensor<T>>{a, b});
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t from, std::size_t count) {
  require(a.shape().size() == 4, ErrorClass::Shape, "slice_channels expects NCHW");
  const std::size_t N = a.shape()[0], C = a.shape()[1], HW = a.shape()[2] * a.shape()[3];
  require(from + count <= C, ErrorClass::Shape, "slice_channels: range out of bounds");
  auto n = detail::make_op_node<T>(Shape{N, count, a.shape()[2], a.shape()[3]}, {a.node()});
  for (std::size_t b = 0; b < N; ++b)
    std::copy(a.data().begin() + (b * C + from) * HW,
              a.data().begin() + (b * C + from + count) * HW, n->val.begin() + b * count * HW);
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, N, C, HW, from, count] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t i = 0; i < count * HW; ++i)
        na->grad[(b * C + from) * HW + i] += self->grad[b * count * HW + i];
  };
  return Tensor<T>(n);
}

// Bilinear interpolation with corner alignment.
template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& a, std::size_t out_h, std::size_t out_w) {
  require(a.shape().size() == 4, ErrorClass::Shape, "upsample_bilinear expects NCHW");
  require(out_h >= 1 && out_w >= 1, ErrorClass::Shape, "upsample_bilinear: target must be >= 1");
  const std::size_t N = a.shape()[0], C = a.shape()[1], H = a.shape()[2], W = a.shape()[3];
  auto n = detail::make_op_node<T>(Shape{N, C, out_h, out_w}, {a.node()});
  const double sh = out_h > 1 ? static_cast<double>(H - 1) / (out_h - 1) : 0.0;
  const double sw = out_w > 1 ? static_cast<double>(W - 1) / (out_w - 1) : 0.0;
  // Precompute source coordinates and weights per output row/col.
  struct Lerp {
    std::size_t lo, hi;
    T w_hi;
  };
  auto make_axis = [](std::size_t out, std::size_t in, double s) {
    std::vector<Lerp> v(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double x = i * s;
      std::size_t lo = static_cast<std::size_t>(x);
      if (lo >= in - 1) lo = in > 1 ? in - 2 : 0;
      v[i] = {lo, in > 1 ? lo + 1 : 0, static_cast<T>(x - lo)};
    }
    return v;
  };
  auto rows = std::make_shared<std::vector<Lerp>>(make_axis(out_h, H, sh));
  auto cols = std::make_shared<std::vector<Lerp>>(make_axis(out_w, W, sw));
  for (std::size_t b = 0; b < N * C; ++b) {
    const T* src = a.data().data() + b * H * W;
    T* dst = n->val.data() + b * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& r = (*rows)[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& c = (*cols)[j];
        const T top = src[r.lo * W + c.lo] * (T(1) - c.w_hi) + src[r.lo * W + c.hi] * c.w_hi;
        const T bot = src[r.hi * W + c.lo] * (T(1) - c.w_hi) + src[r.hi * W + c.hi] * c.w_hi;
        dst[i * out_w + j] = top * (T(1) - r.w_hi) + bot * r.w_hi;
      }
    }
  }
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, rows, cols, N, C, H, W, out_h, out_w] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t b = 0; b < N * C; ++b) {
      T* dsrc = na->grad.data() + b * H * W;
      const T* dy = self->grad.data() + b * out_h * out_w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const auto& r = (*rows)[i];
        for (std::size_t j = 0; j < out_w; ++j) {
          const auto& c = (*cols)[j];
          const T g = dy[i * out_w + j];
          dsrc[r.lo * W + c.lo] += g * (T(1) - r.w_hi) * (T(1) - c.w_hi);
          dsrc[r.lo * W + c.hi] += g * (T(1) - r.w_hi) * c.w_hi;
          dsrc[r.hi * W + c.lo] += g * r.w_hi * (T(1) - c.w_hi);
          dsrc[r.hi * W + c.hi] += g * r.w_hi * c.w_hi;
        }
      }
    }
  };
  return Tensor<T>(n);
}

// x [N,F] * w [F,O] + b [O]
template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(x.shape().size() == 2 && w.shape().size() == 2, ErrorClass::Shape,
          "dense expects 2-d input and weight");
  const std::size_t N = x.shape()[0], F = x.shape()[1], O = w.shape()[1];
  require(w.shape()[0] == F, ErrorClass::Shape, "dense: feature mismatch");
  require(b.size() == O, ErrorClass::Shape, "dense: bias length mismatch");
  auto n = detail::make_op_node<T>(Shape{N, O}, {x.node(), w.node(), b.node()});
  // Row-major [N,F] viewed as col-major [F,N].
  ECMap<T> X(x.data().data(), F, N);
  ECMap<T> Wm(w.data().data(), O, F);  // row-major [F,O] == col-major [O,F]
  EMap<T> Y(n->val.data(), O, N);
  Y.noalias() = Wm * X;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t o = 0; o < O; ++o) n->val[i * O + o] += b.data()[o];
  auto nx = x.node(), nw = w.node(), nb = b.node();
  Node<T>* self = n.get();
  n->backprop = [self, nx, nw, nb, N, F, O] {
    ECMap<T> dY(self->grad.data(), O, N);
    if (nw->requires_grad) {
      nw->ensure_grad();
      ECMap<T> X(nx->val.data(), F, N);
      EMap<T> dW(nw->grad.data(), O, F);
      dW.noalias() += dY * X.transpose();
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t o = 0; o < O; ++o) nb->grad[o] += self->grad[i * O + o];
    }
    if (nx->requires_grad) {
      nx->ensure_grad();
      ECMap<T> Wm(nw->val.data(), O, F);
      EMap<T> dX(nx->grad.data(), F, N);
      dX.noalias() += Wm.transpose() * dY;
    }
  };
  return Tensor<T>(n);
}

// Inverted dropout; identity when train is false.
template <class T>
Tensor<T> dropout(const Tensor<T>& a, T rate, Rng& rng, bool train) {
  if (!train || rate <= T(0)) return a;
  auto n = detail::make_op_node<T>(a.shape(), {a.node()});
  auto mask = std::make_shared<std::vector<T>>(a.size());
  const T keep = T(1) - rate;
  for (std::size_t i = 0; i < a.size(); ++i) {
    (*mask)[i] = rng.uniform() < static_cast<double>(rate) ? T(0) : T(1) / keep;
    n->val[i] = a.data()[i] * (*mask)[i];
  }
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, mask] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      na->grad[i] += self->grad[i] * (*mask)[i];
  };
  return Tensor<T>(n);
}

}  // namespace kseg
