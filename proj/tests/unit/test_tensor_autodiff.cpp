// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "maskapprox/checkpoint.hpp"
#include "maskapprox/error.hpp"
#include "maskapprox/grad_check.hpp"
#include "maskapprox/nn.hpp"
#include "maskapprox/ops.hpp"
#include "maskapprox/optim.hpp"
#include "support/op_cases.hpp"
#include "support/test_util.hpp"

using namespace maskapprox;
using maskapprox::testing::weighted_sum;

namespace {

// Naive oracles, independent of the gemm/im2col path.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

std::vector<double> naive_conv(const Tensor& x, const Tensor& k, std::size_t stride,
                               std::size_t pad, std::size_t& oh, std::size_t& ow) {
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> y(co * oh * ow, 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              long ii = static_cast<long>(i * stride + a) - static_cast<long>(pad);
              long jj = static_cast<long>(j * stride + b) - static_cast<long>(pad);
              if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(w))
                continue;
              y[(o * oh + i) * ow + j] +=
                  x.data()[(c * h + ii) * w + jj] * k.data()[((o * ci + c) * kh + a) * kw + b];
            }
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Pushes values away from a kink at zero so central differences stay on one side.
}  // namespace

TEST(Matmul, IdentityReturnsInput) {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto c = matmul(a, eye);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()),
            (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 1}, {5, 6});
  auto c = matmul(a, b);
  auto expect = naive_matmul({1, 2, 3, 4}, {5, 6}, 2, 2, 1);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], expect[0]);
  EXPECT_EQ(c[1], expect[1]);
  EXPECT_EQ(c[0], 17.0);
  EXPECT_EQ(c[1], 39.0);

  Rng rng(3);
  auto x = Tensor::randn({5, 7}, rng);
  auto y = Tensor::randn({7, 3}, rng);
  auto z = matmul(x, y);
  auto oracle = naive_matmul({x.data().begin(), x.data().end()},
                             {y.data().begin(), y.data().end()}, 5, 7, 3);
  EXPECT_LT(maskapprox::testing::max_abs_diff(z.data(), oracle), 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x2]"), std::string::npos);
  }
}

TEST(Conv2d, AllOnesDirectSum) {
  auto x = Tensor::full({1, 2, 2}, 1.0);
  auto k = Tensor::full({1, 1, 2, 2}, 1.0);
  auto y = conv2d(x, k, 1, 0);
  std::size_t oh, ow;
  auto oracle = naive_conv(x, k, 1, 0, oh, ow);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], oracle[0]);
  EXPECT_EQ(y[0], 4.0);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = Tensor::randn({1, 5, 7}, rng);
    auto y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), 1, 0);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_EQ(maskapprox::testing::max_abs_diff(y.data(), x.data()), 0.0);
  }
}

TEST(Conv2d, NonIntegralExtentIsShapeError) {
  auto x = Tensor::zeros({1, 3, 3});
  auto k = Tensor::zeros({1, 1, 2, 2});
  EXPECT_THROW(conv2d(x, k, 2, 0), ShapeError);
}

TEST(Conv2d, MatchesDirectSummationWithStrideAndPad) {
  Rng rng(5);
  auto x = Tensor::randn({3, 9, 7}, rng);
  auto k = Tensor::randn({4, 3, 3, 3}, rng);
  auto y = conv2d(x, k, 2, 1);
  std::size_t oh, ow;
  auto oracle = naive_conv(x, k, 2, 1, oh, ow);
  ASSERT_EQ(y.shape(), (Shape{4, oh, ow}));
  EXPECT_LT(maskapprox::testing::max_abs_diff(y.data(), oracle), 1e-12);
}

// Planes of 4096 columns once hit a faulty vendor gemm kernel; keep the large case covered.
TEST(Conv2d, FullResolutionPlaneMatchesDirectSummationAndAdjoints) {
  Rng rng(21);
  const std::size_t ci = 16, co = 8, n = 64;
  auto x = Tensor::randn({ci, n, n}, rng);
  x.set_requires_grad(true);
  auto k = Tensor::randn({co, ci, 3, 3}, rng, 0.3);
  k.set_requires_grad(true);
  auto w = Tensor::randn({co, n, n}, rng);
  auto y = conv2d(x, k, 1, 1);
  std::size_t oh, ow;
  auto oracle = naive_conv(x, k, 1, 1, oh, ow);
  ASSERT_EQ(y.shape(), (Shape{co, oh, ow}));
  EXPECT_LT(maskapprox::testing::max_abs_diff(y.data(), oracle), 1e-10);

  sum(mul(y, w)).backward();
  auto at = [&](const Tensor& t, std::size_t c, long r, long q) {
    if (r < 0 || q < 0 || r >= static_cast<long>(n) || q >= static_cast<long>(n)) return 0.0;
    return t.data()[(c * n + static_cast<std::size_t>(r)) * n + static_cast<std::size_t>(q)];
  };
  std::vector<double> gk(k.numel(), 0.0), gx(x.numel(), 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t c = 0; c < ci; ++c)
      for (long i = 0; i < 3; ++i)
        for (long j = 0; j < 3; ++j) {
          const double kv = k.data()[((o * ci + c) * 3 + i) * 3 + j];
          double acc = 0.0;
          for (long r = 0; r < static_cast<long>(n); ++r)
            for (long q = 0; q < static_cast<long>(n); ++q) {
              const double wv = at(w, o, r, q);
              acc += wv * at(x, c, r + i - 1, q + j - 1);
              const long xr = r + i - 1, xq = q + j - 1;
              if (xr >= 0 && xq >= 0 && xr < static_cast<long>(n) && xq < static_cast<long>(n))
                gx[(c * n + xr) * n + xq] += wv * kv;
            }
          gk[((o * ci + c) * 3 + i) * 3 + j] = acc;
        }
  EXPECT_LT(maskapprox::testing::max_abs_diff(k.grad(), gk), 1e-9);
  EXPECT_LT(maskapprox::testing::max_abs_diff(x.grad(), gx), 1e-9);
}

TEST(Matmul, WidePlaneMatchesTripleLoopOracle) {
  Rng rng(22);
  auto a = Tensor::randn({8, 144}, rng);
  auto b = Tensor::randn({144, 4096}, rng);
  auto oracle = naive_matmul({a.data().begin(), a.data().end()},
                             {b.data().begin(), b.data().end()}, 8, 144, 4096);
  EXPECT_LT(maskapprox::testing::max_abs_diff(matmul(a, b).data(), oracle), 1e-10);
}

TEST(TransposeConv2d, SingleValueSpreadsOverKernel) {
  auto x = Tensor::full({1, 1, 1}, 2.5);
  auto k = Tensor::full({1, 1, 2, 2}, 1.0);
  auto y = transpose_conv2d(x, k, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 2.5);
}

TEST(TransposeConv2d, UnitKernelIsIdentity) {
  Rng rng(2);
  auto x = Tensor::randn({1, 4, 6}, rng);
  auto y = transpose_conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), 1, 0);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(maskapprox::testing::max_abs_diff(y.data(), x.data()), 0.0);
}

TEST(TransposeConv2d, StrideTwoShapeFormula) {
  auto y = transpose_conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 2, 2}), 2, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4}));
  // (H - 1) * stride - 2 * pad + k
  auto z = transpose_conv2d(Tensor::zeros({2, 5, 3}), Tensor::zeros({2, 3, 4, 4}), 2, 1);
  EXPECT_EQ(z.shape(), (Shape{3, 10, 6}));
}

TEST(TransposeConv2d, IsAdjointOfConv2d) {
  // <conv(u), v> == <u, conv^T(v)> with the same kernel viewed Ci x Co.
  Rng rng(8);
  for (std::size_t stride : {1u, 2u, 4u}) {
    for (std::size_t pad : {0u, 1u}) {
      const std::size_t k = 4;
      auto kernel = Tensor::randn({3, 2, k, k}, rng);  // conv: Co=3, Ci=2
      auto v = Tensor::randn({3, 3, 3}, rng);
      auto u_shape_probe = transpose_conv2d(v, kernel, stride, pad);
      auto u = Tensor::randn(u_shape_probe.shape(), rng);
      auto cu = conv2d(u, kernel, stride, pad);
      ASSERT_EQ(cu.shape(), v.shape());
      EXPECT_NEAR(dot(cu.data(), v.data()), dot(u.data(), u_shape_probe.data()), 1e-9);
    }
  }
}

TEST(TransposeConv2d, InvalidGeometryIsShapeError) {
  EXPECT_THROW(transpose_conv2d(Tensor::zeros({1, 1, 1}), Tensor::zeros({1, 1, 1, 1}), 1, 1),
               ShapeError);
}

TEST(Softmax, SymmetricInputIsUniform) {
  auto y = softmax(Tensor::from({2}, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
  auto y = softmax(Tensor::from({2}, {1000, 1000}), 0);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, ClosedFormLogThree) {
  auto y = softmax(Tensor::from({2}, {0, std::log(3.0)}), 0);
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
}

TEST(Softmax, SumsToOneAlongAnyAxisProperty) {
  Rng rng(99);
  std::uniform_real_distribution<double> spread(0.1, 50.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = Tensor::randn({3, 4, 5}, rng, spread(rng));
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto y = softmax(x, axis);
      auto s = mean_axis(y, axis);  // mean * extent == sum
      for (double v : s.data()) EXPECT_NEAR(v * x.dim(axis), 1.0, 1e-6);
      for (double v : y.data()) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Backward, SquareHasAnalyticGradient) {
  auto x = Tensor::scalar(3.0).set_requires_grad(true);
  mul(x, x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  Rng rng(4);
  auto x = Tensor::randn({6}, rng).set_requires_grad(true);
  sum(softmax(x, 0)).backward();
  for (double g : x.grad()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Backward, ConvReluSumMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto x = Tensor::randn({2, 6, 6}, rng);
    auto k = Tensor::randn({3, 2, 3, 3}, rng);
    auto f = [&]() { return sum(relu(conv2d(x, k, 1, 1))); };
    GradCheckOptions opt;
    auto report = grad_check_params(f, {{"x", x}, {"k", k}}, opt);
    EXPECT_LT(report.max_rel_error, 1e-4) << "seed " << seed << " worst " << report.worst_tensor
                                          << "[" << report.worst_index << "]";
  }
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = Tensor::zeros({2}).set_requires_grad(true);
  EXPECT_THROW(scale(x, 2.0).backward(), ContractError);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = Tensor::scalar(2.0).set_requires_grad(true);
  auto y = mul(x, x);
  y.backward();
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(Tape, RecordIsTopological) {
  Rng rng(1);
  auto a = Tensor::randn({3, 3}, rng).set_requires_grad(true);
  auto b = Tensor::randn({3, 3}, rng).set_requires_grad(true);
  auto c = matmul(a, b);
  auto d = add(c, a);
  auto e = sum(mul(d, tanh(c)));
  auto tape = Tape::record(e);
  EXPECT_TRUE(tape.is_topological());
  EXPECT_EQ(tape.nodes().back().get(), e.impl().get());
  EXPECT_GE(tape.size(), 7u);
}

TEST(GradCheck, SumOfSquaresPassesTightTolerance) {
  Rng rng(12);
  auto x = Tensor::randn({3, 3}, rng);
  auto report = grad_check([](const Tensor& t) { return sum(square(t)); }, x, 1e-5, 1e-6);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_EQ(report.coords_checked, 9u);
}

TEST(GradCheck, WrongGradientRuleFails) {
  // Fixture op: forward x^2, backward claims 3x.
  auto broken_square = [](const Tensor& x) {
    std::vector<double> out;
    for (double v : x.data()) out.push_back(v * v);
    return make_op_result("broken_square", x.shape(), x.dtype(), out, {x},
                          [x](const TensorImpl& self) {
                            std::vector<double> g(x.numel());
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] = self.grad[i] * 3.0 * x.data()[i];
                            x.impl()->accumulate_grad(g);
                          });
  };
  Rng rng(13);
  auto x = Tensor::randn({4}, rng);
  auto report = grad_check([&](const Tensor& t) { return sum(broken_square(t)); }, x);
  EXPECT_FALSE(report.passed);
}

TEST(GradCheck, NonScalarFunctionIsContractError) {
  auto x = Tensor::zeros({2});
  EXPECT_THROW(grad_check([](const Tensor& t) { return scale(t, 1.0); }, x), ContractError);
}

// Every differentiable op against central differences over 20 seeds.
TEST(GradCheck, EveryOpMatchesFiniteDifferencesAcrossSeeds) {
  for (const auto& c : maskapprox::testing::differentiable_op_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto report = maskapprox::testing::check_op_case(c, seed);
      EXPECT_LT(report.max_rel_error, 1e-4)
          << c.name << " seed " << seed << " worst " << report.worst_tensor << "["
          << report.worst_index << "] analytic " << report.analytic << " numeric "
          << report.numeric;
    }
  }
}

TEST(Reshape, RoundTripIsIdentity) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = Tensor::randn({2, 3, 4}, rng);
    auto y = reshape(reshape(x, {6, 4}), {2, 3, 4});
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_EQ(maskapprox::testing::max_abs_diff(y.data(), x.data()), 0.0);
  }
  EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4}), ShapeError);
}

TEST(Elementwise, OnlyScalarBroadcasting) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3})), DimensionError);
  auto y = mul(Tensor::from({3}, {1, 2, 3}), Tensor::scalar(2.0));
  EXPECT_EQ(y[2], 6.0);
}

TEST(DType, F32OutputsAreRounded) {
  auto x = Tensor::from({1}, {0.1}, DType::f32);
  EXPECT_EQ(x[0], static_cast<double>(0.1f));
  auto y = add(x, Tensor::from({1}, {0.2}, DType::f32));
  EXPECT_EQ(y.dtype(), DType::f32);
  EXPECT_EQ(y[0], static_cast<double>(static_cast<float>(static_cast<double>(0.1f) +
                                                         static_cast<double>(0.2f))));
  auto z = add(x, Tensor::from({1}, {0.2}, DType::f64));
  EXPECT_EQ(z.dtype(), DType::f64);
}

TEST(Values, FiniteInputsGiveFiniteOutputs) {
  Rng rng(31);
  auto x = Tensor::randn({2, 8, 8}, rng, 30.0);
  auto k = Tensor::randn({2, 2, 3, 3}, rng);
  auto y = softmax(reshape(gelu(conv2d(x, k, 1, 1)), {2, 64}), 1);
  auto g = Tensor::full({2}, 1.0);
  auto b = Tensor::zeros({2});
  auto z = group_norm(sigmoid(conv2d(x, k, 1, 1)), 1, g, b);
  for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
  for (double v : z.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(17);
  ParameterSet params;
  params.add("a.weight", Tensor::randn({3, 4}, rng, 1.0, DType::f32));
  params.add("b.bias", Tensor::randn({5}, rng, 1.0, DType::f64));
  params.add("scalar", Tensor::scalar(-0.0));
  auto dir = maskapprox::testing::temp_dir("ckpt");
  auto path = dir / "model.ckpt";
  nlohmann::json hyper = {{"base_width", 8}, {"note", "x"}};
  save_checkpoint(path, params.items(), hyper);
  auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.hyperparams, hyper);
  ASSERT_EQ(ck.tensors.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& [name, t] = ck.tensors[i];
    const auto& orig = params.items()[i].second;
    EXPECT_EQ(name, params.items()[i].first);
    EXPECT_EQ(t.dtype(), orig.dtype());
    EXPECT_EQ(t.shape(), orig.shape());
    EXPECT_EQ(std::memcmp(t.data().data(), orig.data().data(), orig.numel() * sizeof(double)), 0);
  }
  // Re-saving the loaded tensors reproduces the file byte for byte.
  save_checkpoint(dir / "again.ckpt", ck.tensors, ck.hyperparams);
  std::ifstream f1(path, std::ios::binary), f2(dir / "again.ckpt", std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {}), b2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(b1, b2);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptFileIsDataError) {
  auto dir = maskapprox::testing::temp_dir("ckpt_bad");
  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "not a checkpoint at all";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), InputError);
  std::filesystem::remove_all(dir);
}

TEST(Adam, MinimizesQuadratic) {
  ParameterSet params;
  auto x = params.add("x", Tensor::from({2}, {3.0, -2.0}));
  AdamOptions opt;
  opt.lr = 0.1;
  opt.beta1 = 0.9;
  opt.weight_decay = 0.0;
  Adam adam(params, opt);
  for (int i = 0; i < 300; ++i) {
    adam.zero_grad();
    sum(square(x)).backward();
    adam.step();
  }
  EXPECT_LT(std::fabs(x[0]), 1e-2);
  EXPECT_LT(std::fabs(x[1]), 1e-2);
}

TEST(Adam, WeightDecayIsDecoupledFromMoments) {
  ParameterSet params;
  auto x = params.add("x", Tensor::from({2}, {0.5, -4.0}));
  AdamOptions opt;
  opt.lr = 0.01;
  opt.weight_decay = 0.1;
  Adam adam(params, opt);
  // Zero loss gradient: only the decay acts, p <- p (1 - lr wd) per step.
  for (int i = 0; i < 10; ++i) {
    adam.zero_grad();
    scale(sum(x), 0.0).backward();
    adam.step();
  }
  const double f = std::pow(1.0 - 0.01 * 0.1, 10);
  EXPECT_NEAR(x[0], 0.5 * f, 1e-12);
  EXPECT_NEAR(x[1], -4.0 * f, 1e-12);
}
