#include <doctest.h>

#include "adam.hpp"
#include "gradcheck.hpp"
#include "init.hpp"
#include "nn_ops.hpp"

using namespace kseg;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = true,
                             double scale = 1.0) {
  std::vector<double> d(numel(shape));
  for (auto& v : d) v = rng.normal() * scale;
  return Tensor<double>(std::move(shape), std::move(d), requires_grad);
}

}  // namespace

TEST_CASE("init_params zeros and determinism") {
  auto z = init_params<float>({4}, InitScheme::Zeros, 0);
  CHECK(z.data() == std::vector<float>{0, 0, 0, 0});

  auto a = init_params<float>({3, 5}, InitScheme::He, 42);
  auto b = init_params<float>({3, 5}, InitScheme::He, 42);
  CHECK(a.data() == b.data());

  auto c = init_params<float>({3, 5}, InitScheme::He, 43);
  CHECK(a.data() != c.data());

  CHECK_THROWS_AS(init_params<float>({3, 0}, InitScheme::He, 0), Error);
}

TEST_CASE("he init empirical variance") {
  auto t = init_params<double>({64, 16, 3, 3}, InitScheme::He, 7);
  double mean = 0;
  for (double v : t.data()) mean += v;
  mean /= t.size();
  double var = 0;
  for (double v : t.data()) var += (v - mean) * (v - mean);
  var /= t.size();
  const double expected = 2.0 / (16.0 * 3 * 3);
  CHECK(var == doctest::Approx(expected).epsilon(0.2));
}

TEST_CASE("glorot init bounded by fan limit") {
  auto t = init_params<double>({16, 8, 3, 3}, InitScheme::Glorot, 3);
  const double limit = std::sqrt(6.0 / (8 * 9 + 16 * 9));
  for (double v : t.data()) {
    CHECK(v <= limit);
    CHECK(v >= -limit);
  }
}

TEST_CASE("conv2d forward 3x3 window example") {
  Tensor<double> x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> k({1, 1, 2, 2}, {1, 1, 1, 1});
  auto y = conv2d(x, k, Tensor<double>());
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.data() == std::vector<double>{12, 16, 24, 28});
}

TEST_CASE("conv2d 1x1 identity kernel") {
  Rng rng(1);
  auto x = random_tensor({2, 1, 4, 4}, rng, false);
  Tensor<double> k({1, 1, 1, 1}, {1.0});
  auto y = conv2d(x, k, Tensor<double>());
  CHECK(y.data() == x.data());
}

TEST_CASE("conv2d dilation 2 touches corners, center and edge midpoints") {
  // 5x5 input, 3x3 kernel with dilation 2 -> single output that reads
  // positions {0,2,4} x {0,2,4}.
  std::vector<double> img(25, 0.0);
  for (std::size_t i : {0u, 2u, 4u})
    for (std::size_t j : {0u, 2u, 4u}) img[i * 5 + j] = 1.0;
  // Poison every other pixel; they must not contribute.
  for (std::size_t i = 0; i < 25; ++i)
    if (img[i] == 0.0) img[i] = 1000.0;
  Tensor<double> x({1, 1, 5, 5}, img);
  Tensor<double> k({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  auto y = conv2d(x, k, Tensor<double>(), 1, 0, 2);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0));
}

TEST_CASE("conv2d shape errors") {
  Tensor<double> x({1, 2, 3, 3}, std::vector<double>(18, 0.0));
  Tensor<double> k({1, 3, 2, 2}, std::vector<double>(12, 0.0));
  CHECK_THROWS_AS(conv2d(x, k, Tensor<double>()), Error);
  Tensor<double> kbig({1, 2, 5, 5}, std::vector<double>(50, 0.0));
  CHECK_THROWS_AS(conv2d(x, kbig, Tensor<double>()), Error);
}

TEST_CASE("conv2d output shape formula across stride/pad/dilation") {
  Rng rng(5);
  for (std::size_t stride : {1u, 2u, 3u})
    for (std::size_t pad : {0u, 1u, 2u})
      for (std::size_t dil : {1u, 2u}) {
        const std::size_t H = 9, KH = 3;
        if (H + 2 * pad < dil * (KH - 1) + 1) continue;
        auto x = random_tensor({1, 2, H, H}, rng, false);
        auto k = random_tensor({3, 2, KH, KH}, rng, false);
        auto y = conv2d(x, k, Tensor<double>(), stride, pad, dil);
        const std::size_t expect = (H + 2 * pad - dil * (KH - 1) - 1) / stride + 1;
        CHECK(y.shape() == Shape{1, 3, expect, expect});
      }
}

TEST_CASE("transposed_conv2d scatter example and zero input") {
  Tensor<double> x({1, 1, 1, 1}, {3.5});
  Tensor<double> k({1, 1, 2, 2}, {1, 1, 1, 1});
  auto y = transposed_conv2d(x, k, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.data() == std::vector<double>{3.5, 3.5, 3.5, 3.5});

  Tensor<double> zero({1, 1, 3, 3}, std::vector<double>(9, 0.0));
  auto yz = transposed_conv2d(zero, k, 2);
  for (double v : yz.data()) CHECK(v == 0.0);
}

TEST_CASE("transposed_conv2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, conv_transpose(y)> for stride-s, unpadded conv with
  // a shared kernel.
  Rng rng(11);
  for (std::size_t stride : {1u, 2u}) {
    // 7 = (OH-1)*stride + 3 round-trips exactly for both strides.
    auto x = random_tensor({1, 2, 7, 7}, rng, false);
    auto kern = random_tensor({3, 2, 3, 3}, rng, false);
    auto cx = conv2d(x, kern, Tensor<double>(), stride);
    auto y = random_tensor(cx.shape(), rng, false);

    double lhs = 0;
    for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx.data()[i] * y.data()[i];

    // The conv kernel's OIHW layout reads directly as the transposed layout
    // [IC=3, OC=2, KH, KW].
    auto ty = transposed_conv2d(Tensor<double>(y.shape(), y.data()),
                                Tensor<double>({3, 2, 3, 3}, kern.data()), stride);
    REQUIRE(ty.shape() == x.shape());
    double rhs = 0;
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data()[i] * ty.data()[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("max pool and adaptive average pool examples") {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  auto m = max_pool2d(x, 2);
  CHECK(m.item() == 4.0);

  std::vector<double> seq(16);
  for (int i = 0; i < 16; ++i) seq[i] = i + 1;
  Tensor<double> grid({1, 1, 4, 4}, seq);
  auto q = adaptive_avg_pool2d(grid, 2);
  CHECK(q.data() == std::vector<double>{3.5, 5.5, 11.5, 13.5});

  auto g = adaptive_avg_pool2d(grid, 1);
  CHECK(g.item() == doctest::Approx(8.5));

  CHECK_THROWS_AS(adaptive_avg_pool2d(grid, 5), Error);
}

TEST_CASE("max pool gradient ties break to the first index") {
  Tensor<double> x({1, 1, 2, 2}, {7, 7, 7, 7}, true);
  auto y = max_pool2d(x, 2);
  backward(sum_all(y));
  CHECK(x.grad() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("batch_norm normalizes per channel in train mode") {
  Rng rng(3);
  auto x = random_tensor({4, 2, 3, 3}, rng, false, 2.5);
  auto gamma = Tensor<double>({2}, {1, 1});
  auto beta = Tensor<double>({2}, {0, 0});
  BatchNormStats<double> stats;
  auto y = batch_norm(x, gamma, beta, stats, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, var = 0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 9; ++i) {
        mean += y.data()[(b * 2 + c) * 9 + i];
        ++n;
      }
    mean /= n;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 9; ++i) {
        const double d = y.data()[(b * 2 + c) * 9 + i] - mean;
        var += d * d;
      }
    var /= n;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK(stats.initialized);
}

TEST_CASE("batch_norm constant channel and affine collapse") {
  Tensor<double> x({2, 1, 2, 2}, std::vector<double>(8, 3.0));
  auto gamma1 = Tensor<double>({1}, {1.0});
  auto beta0 = Tensor<double>({1}, {0.0});
  BatchNormStats<double> s1;
  auto y = batch_norm(x, gamma1, beta0, s1, true);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.0));

  auto gamma0 = Tensor<double>({1}, {0.0});
  auto beta5 = Tensor<double>({1}, {5.0});
  BatchNormStats<double> s2;
  auto y2 = batch_norm(x, gamma0, beta5, s2, true);
  for (double v : y2.data()) CHECK(v == 5.0);
}

TEST_CASE("batch_norm inference requires initialized stats") {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  auto gamma = Tensor<double>({1}, {1.0});
  auto beta = Tensor<double>({1}, {0.0});
  BatchNormStats<double> stats;
  CHECK_THROWS_AS(batch_norm(x, gamma, beta, stats, false), Error);
}

TEST_CASE("activation examples") {
  Tensor<double> x({1, 1, 1, 4}, {-1, 2, 0, 0.5});
  auto r = relu(x);
  CHECK(r.data() == std::vector<double>{0, 2, 0, 0.5});

  Tensor<double> z({1}, {0.0});
  CHECK(sigmoid(z).item() == doctest::Approx(0.5));

  Tensor<double> logits({1, 4, 1, 1}, {1.3, 1.3, 1.3, 1.3});
  auto p = softmax_channels(logits);
  for (double v : p.data()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("softmax per-pixel distribution property") {
  Rng rng(9);
  auto x = random_tensor({2, 4, 3, 3}, rng, false, 3.0);
  auto p = softmax_channels(x);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 9; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        const double v = p.data()[(b * 4 + c) * 9 + i];
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("concat_channels slices and disjoint gradients") {
  Rng rng(2);
  auto a = random_tensor({1, 4, 2, 2}, rng, true);
  auto b = random_tensor({1, 12, 2, 2}, rng, true);
  auto c = concat_channels(a, b);
  CHECK(c.shape() == Shape{1, 16, 2, 2});
  auto sa = slice_channels(c, 0, 4);
  CHECK(sa.data() == a.data());
  auto sb = slice_channels(c, 4, 12);
  CHECK(sb.data() == b.data());

  // Loss touching only the first slice leaves b with no gradient mass.
  backward(sum_all(slice_channels(concat_channels(a, b), 0, 4)));
  for (double g : b.grad()) CHECK(g == 0.0);
  for (double g : a.grad()) CHECK(g == 1.0);
}

TEST_CASE("upsample_bilinear corner alignment") {
  Tensor<double> one({1, 1, 1, 1}, {2.5});
  auto up = upsample_bilinear(one, 4, 4);
  for (double v : up.data()) CHECK(v == 2.5);

  Tensor<double> row({1, 1, 1, 2}, {0.0, 1.0});
  auto wide = upsample_bilinear(row, 1, 4);
  CHECK(wide.data()[0] == doctest::Approx(0.0));
  CHECK(wide.data()[1] == doctest::Approx(1.0 / 3));
  CHECK(wide.data()[2] == doctest::Approx(2.0 / 3));
  CHECK(wide.data()[3] == doctest::Approx(1.0));

  Rng rng(4);
  auto x = random_tensor({1, 2, 3, 3}, rng, false);
  auto same = upsample_bilinear(x, 3, 3);
  CHECK(same.data() == x.data());
}

TEST_CASE("backward on linear map and unreachable parameter") {
  Tensor<double> x({4}, {1, 2, 3, 4}, true);
  auto loss = sum_all(scale(x, 2.0));
  backward(loss);
  for (double g : x.grad()) CHECK(g == 2.0);

  Tensor<double> unused({2}, {1, 1}, true);
  CHECK(unused.grad().empty());

  CHECK_THROWS_AS(backward(scale(x, 1.0)), Error);  // non-scalar loss
}

TEST_CASE("gradients match finite differences through conv+relu+sum") {
  Rng rng(21);
  auto x = random_tensor({1, 2, 5, 5}, rng, true);
  auto k = random_tensor({3, 2, 3, 3}, rng, true, 0.5);
  auto b = random_tensor({3}, rng, true, 0.1);
  auto fragment = [&] { return sum_all(relu(conv2d(x, k, b, 1, 1))); };
  CHECK(grad_check<double>(fragment, {x, k, b}) < 1e-4);
}

TEST_CASE("gradcheck suite over remaining differentiable ops") {
  Rng rng(22);
  SUBCASE("transposed conv") {
    auto x = random_tensor({1, 2, 3, 3}, rng, true);
    auto k = random_tensor({2, 3, 2, 2}, rng, true);
    auto f = [&] { return sum_all(tanh_op(transposed_conv2d(x, k, 2))); };
    CHECK(grad_check<double>(f, {x, k}) < 1e-4);
  }
  SUBCASE("pools") {
    auto x = random_tensor({1, 2, 4, 4}, rng, true);
    auto f1 = [&] { return sum_all(mul(max_pool2d(x, 2), max_pool2d(x, 2))); };
    CHECK(grad_check<double>(f1, {x}) < 1e-4);
    auto f2 = [&] {
      auto p = adaptive_avg_pool2d(x, 3);
      return sum_all(mul(p, p));
    };
    CHECK(grad_check<double>(f2, {x}) < 1e-4);
  }
  SUBCASE("batch norm") {
    auto x = random_tensor({2, 2, 3, 3}, rng, true);
    auto gamma = random_tensor({2}, rng, true);
    auto beta = random_tensor({2}, rng, true);
    auto f = [&] {
      BatchNormStats<double> st;
      return sum_all(sigmoid(batch_norm(x, gamma, beta, st, true)));
    };
    CHECK(grad_check<double>(f, {x, gamma, beta}) < 1e-4);
  }
  SUBCASE("softmax and upsample") {
    auto x = random_tensor({1, 3, 2, 2}, rng, true);
    auto f = [&] {
      auto u = upsample_bilinear(softmax_channels(x), 5, 5);
      return sum_all(mul(u, u));
    };
    CHECK(grad_check<double>(f, {x}) < 1e-4);
  }
  SUBCASE("dense") {
    auto x = random_tensor({2, 6}, rng, true);
    auto w = random_tensor({6, 3}, rng, true);
    auto b = random_tensor({3}, rng, true);
    auto f = [&] { return sum_all(sigmoid(dense(x, w, b))); };
    CHECK(grad_check<double>(f, {x, w, b}) < 1e-4);
  }
}

TEST_CASE("adam first step magnitude, fixed point and freeze") {
  auto p = Tensor<double>({3}, {1.0, -2.0, 0.5}, true);
  p.grad() = {0.4, -0.4, 1.2};
  std::vector<Tensor<double>> params{p};
  Adam<double> opt(1e-3);
  opt.step(params);
  // After one step with constant gradient the bias-corrected update is a
  // near-sign step of size lr.
  CHECK(std::abs(p.data()[0] - 1.0) == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(std::abs(p.data()[1] + 2.0) == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(p.data()[1] > -2.0);

  auto q = Tensor<double>({2}, {1.0, 1.0}, true);
  std::vector<Tensor<double>> qs{q};
  Adam<double> opt2;
  opt2.step(qs);  // no gradient populated
  CHECK(q.data() == std::vector<double>{1.0, 1.0});

  auto frozen = Tensor<double>({2}, {1.0, 1.0}, true);
  frozen.set_trainable(false);
  frozen.grad() = {5.0, 5.0};
  std::vector<Tensor<double>> fs{frozen};
  Adam<double> opt3;
  opt3.step(fs);
  CHECK(frozen.data() == std::vector<double>{1.0, 1.0});
}

TEST_CASE("forward determinism with identical seeds") {
  for (int rep = 0; rep < 2; ++rep) {
    static std::vector<double> first;
    auto x = init_params<double>({1, 2, 6, 6}, InitScheme::Glorot, 99);
    auto k = init_params<double>({2, 2, 3, 3}, InitScheme::He, 100);
    auto y = conv2d(x, k, Tensor<double>(), 1, 1);
    if (rep == 0)
      first = y.data();
    else
      CHECK(first == y.data());
  }
}
