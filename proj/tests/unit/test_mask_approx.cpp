// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <map>

#include "maskapprox/checkpoint.hpp"
#include "maskapprox/diffusion.hpp"
#include "maskapprox/error.hpp"
#include "maskapprox/grad_check.hpp"
#include "maskapprox/mask_approx.hpp"
#include "maskapprox/ops.hpp"
#include "support/test_util.hpp"

using namespace maskapprox;
using maskapprox::testing::max_abs_diff;

namespace {

ModelConfig small_config(std::size_t size = 16, DType dtype = DType::f64) {
  ModelConfig c;
  c.image_size = size;
  c.base_width = 4;
  c.unet_width = 4;
  c.time_dim = 8;
  c.timesteps = 10;
  c.dtype = dtype;
  return c;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST(Pyramid, ShapesFollowStrides) {
  ModelConfig cfg;
  cfg.base_width = 8;
  MaskApproxNet net(cfg, 1);
  Rng rng(1);
  auto p = net.extract_pyramid(Tensor::uniform({3, 64, 64}, rng, 0, 1, DType::f32));
  EXPECT_EQ(p.levels[0].shape(), (Shape{8, 32, 32}));
  EXPECT_EQ(p.levels[1].shape(), (Shape{16, 16, 16}));
  EXPECT_EQ(p.levels[2].shape(), (Shape{32, 8, 8}));
  EXPECT_EQ(p.levels[3].shape(), (Shape{64, 4, 4}));
}

TEST(Pyramid, SharedWeightsGiveIdenticalBranches) {
  MaskApproxNet net(small_config(32), 2);
  Rng rng(2);
  auto img = Tensor::uniform({3, 32, 32}, rng, 0, 1);
  auto a = net.extract_pyramid(img);
  auto b = net.extract_pyramid(img.detach());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(bit_equal(a.levels[i], b.levels[i]));
  std::size_t backbone_tensors = 0;
  for (const auto& [name, t] : net.params().items())
    if (name.rfind("backbone.", 0) == 0) ++backbone_tensors;
  // One set: down conv, group norm and two res convs per stage, last output bias omitted.
  EXPECT_EQ(backbone_tensors, 4u * 8u - 1u);
}

TEST(Pyramid, ZeroImageWithZeroBiasIsZero) {
  MaskApproxNet net(small_config(32), 3);
  auto p = net.extract_pyramid(Tensor::zeros({3, 32, 32}));
  for (const auto& level : p.levels)
    for (double v : level.data()) EXPECT_EQ(v, 0.0);
}

TEST(Pyramid, IndivisibleExtentIsShapeError) {
  MaskApproxNet net(small_config(32), 4);
  EXPECT_THROW(net.extract_pyramid(Tensor::zeros({3, 40, 40})), ShapeError);
  EXPECT_THROW(net.extract_pyramid(Tensor::zeros({3, 32, 24})), ShapeError);
  EXPECT_THROW(net.extract_pyramid(Tensor::zeros({1, 32, 32})), DimensionError);
}

TEST(DifferenceEncode, SymmetricUnderSwap) {
  MaskApproxNet net(small_config(32), 5);
  Rng rng(5);
  auto pre = net.extract_pyramid(Tensor::uniform({3, 32, 32}, rng, 0, 1));
  auto post = net.extract_pyramid(Tensor::uniform({3, 32, 32}, rng, 0, 1));
  EXPECT_TRUE(bit_equal(net.difference_encode(pre, post).xbar,
                        net.difference_encode(post, pre).xbar));
}

TEST(DifferenceEncode, EqualInputsEncodeZeroDifference) {
  MaskApproxNet net(small_config(32), 6);
  Rng rng(6);
  auto p = net.extract_pyramid(Tensor::uniform({3, 32, 32}, rng, 0, 1));
  auto zero = net.extract_pyramid(Tensor::zeros({3, 32, 32}));
  EXPECT_TRUE(bit_equal(net.difference_encode(p, p).xbar, net.difference_encode(zero, zero).xbar));
}

TEST(DifferenceEncode, LevelMismatchIsShapeError) {
  MaskApproxNet net(small_config(32), 7);
  auto a = net.extract_pyramid(Tensor::zeros({3, 32, 32}));
  auto b = net.extract_pyramid(Tensor::zeros({3, 64, 64}));
  EXPECT_THROW(net.difference_encode(a, b), ShapeError);
}

TEST(DifferenceEncode, ChangeEnergyIsLocal) {
  // A bright square in one corner region of the post image should excite the
  // coarse cell that contains it more than any distant cell.
  MaskApproxNet net(small_config(64), 8);
  Rng rng(8);
  for (auto [ci, cj] : {std::pair{0, 0}, {3, 1}, {2, 3}}) {
    auto pre = Tensor::full({3, 64, 64}, 0.3);
    auto post = Tensor::full({3, 64, 64}, 0.3);
    auto pd = post.mutable_data();
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (int i = 16 * ci + 4; i < 16 * ci + 12; ++i)
        for (int j = 16 * cj + 4; j < 16 * cj + 12; ++j) pd[(ch * 64 + i) * 64 + j] = 1.0;
    auto base = net.difference_encode(net.extract_pyramid(pre), net.extract_pyramid(pre)).xbar;
    auto enc = net.difference_encode(net.extract_pyramid(pre), net.extract_pyramid(post)).xbar;
    const std::size_t C = enc.dim(0);
    std::array<double, 16> energy{};
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < 16; ++k) energy[k] += std::pow(enc[c * 16 + k] - base[c * 16 + k], 2);
    std::size_t best = 0;
    for (std::size_t k = 1; k < 16; ++k)
      if (energy[k] > energy[best]) best = k;
    const int bi = static_cast<int>(best / 4), bj = static_cast<int>(best % 4);
    EXPECT_LE(std::max(std::abs(bi - ci), std::abs(bj - cj)), 1) << ci << "," << cj;
    double far = 0;
    for (std::size_t k = 0; k < 16; ++k)
      if (std::max(std::abs(int(k / 4) - ci), std::abs(int(k % 4) - cj)) >= 3) far += energy[k];
    EXPECT_LT(far, energy[ci * 4 + cj]);
  }
}

TEST(DecodeDiffImage, ShapeAndRange) {
  MaskApproxNet net(small_config(64, DType::f32), 9);
  Rng rng(9);
  for (int trial = 0; trial < 3; ++trial) {
    auto cond = net.encode(Tensor::uniform({3, 64, 64}, rng, 0, 1),
                           Tensor::uniform({3, 64, 64}, rng, 0, 1));
    EXPECT_EQ(cond.diff_image.shape(), (Shape{1, 64, 64}));
    for (double v : cond.diff_image.data()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(DecodeDiffImage, ZeroedResidualBranchIsIdentity) {
  MaskApproxNet net(small_config(32), 10);
  auto& res = net.decoder_residual();
  for (auto& v : res.second.weight.mutable_data()) v = 0.0;
  for (auto& v : res.second.bias.mutable_data()) v = 0.0;
  Rng rng(10);
  auto x = Tensor::randn({4, 32, 32}, rng);
  EXPECT_TRUE(bit_equal(res(x), x));
}

TEST(PredictEpsilon, ShapeTimeAndDeterminism) {
  MaskApproxNet net(small_config(16), 11);
  Rng rng(11);
  auto pre = Tensor::uniform({3, 16, 16}, rng, 0, 1);
  auto post = Tensor::uniform({3, 16, 16}, rng, 0, 1);
  auto xt = Tensor::randn({1, 16, 16}, rng);
  auto a = net.predict_epsilon(xt, pre, post, 3);
  auto b = net.predict_epsilon(xt, pre, post, 7);
  auto c = net.predict_epsilon(xt, pre, post, 3);
  EXPECT_EQ(a.shape(), xt.shape());
  EXPECT_GT(max_abs_diff(a.data(), b.data()), 1e-6);
  EXPECT_TRUE(bit_equal(a, c));
  for (std::size_t t = 1; t <= 10; ++t)
    for (std::size_t s = t + 1; s <= 10; ++s) {
      auto ea = net.predict_epsilon(xt, pre, post, t), eb = net.predict_epsilon(xt, pre, post, s);
      EXPECT_GT(max_abs_diff(ea.data(), eb.data()), 1e-9) << t << " vs " << s;
    }
  EXPECT_THROW(net.predict_epsilon(xt, pre, post, 0), IndexError);
  EXPECT_THROW(net.predict_epsilon(xt, pre, post, 11), IndexError);
  EXPECT_THROW(net.predict_epsilon(Tensor::zeros({1, 8, 8}), pre, post, 1), DimensionError);
}

TEST(PredictEpsilon, CachedConditioningMatchesFullPath) {
  MaskApproxNet net(small_config(16), 12);
  Rng rng(12);
  auto pre = Tensor::uniform({3, 16, 16}, rng, 0, 1);
  auto post = Tensor::uniform({3, 16, 16}, rng, 0, 1);
  auto xt = Tensor::randn({1, 16, 16}, rng);
  auto cond = net.encode(pre, post);
  EXPECT_TRUE(bit_equal(net.predict_epsilon(xt, cond, 4), net.predict_epsilon(xt, pre, post, 4)));
}

TEST(PredictEpsilon, GradientCheckOfDiffusionLoss) {
  for (FuseMode mode : {FuseMode::sum_collapse, FuseMode::per_channel}) {
    auto cfg = small_config(16);
    cfg.fuse_mode = mode;
    MaskApproxNet net(cfg, 13);
    Rng rng(13);
    auto pre = Tensor::uniform({3, 16, 16}, rng, 0, 1);
    auto post = Tensor::uniform({3, 16, 16}, rng, 0, 1);
    auto s = build_schedule("linear", 10, 1e-3, 0.2);
    auto x0 = Tensor::uniform({1, 16, 16}, rng, -1, 1);
    auto eps = Tensor::randn({1, 16, 16}, rng);
    auto xt = q_sample(x0, 6, eps, s);
    GradCheckOptions opt;
    opt.max_coords_per_tensor = 3;
    opt.seed = 13;
    auto report = grad_check_params(
        [&] { return diffusion_loss(net.predict_epsilon(xt, pre, post, 6), eps); },
        net.params().items(), opt);
    EXPECT_LT(report.max_rel_error, 1e-4)
        << fuse_mode_name(mode) << " worst " << report.worst_tensor << "[" << report.worst_index
        << "] analytic " << report.analytic << " numeric " << report.numeric;
    EXPECT_GT(report.coords_checked, 100u);
  }
}

TEST(PredictEpsilon, EveryParameterReceivesGradient) {
  MaskApproxNet net(small_config(16), 14);
  auto s = build_schedule("linear", 10, 1e-3, 0.2);
  Rng rng(14);
  std::map<std::string, double> total;
  for (int batch = 0; batch < 10; ++batch) {
    net.params().zero_grad();
    auto pre = Tensor::uniform({3, 16, 16}, rng, 0, 1);
    auto post = Tensor::uniform({3, 16, 16}, rng, 0, 1);
    auto x0 = Tensor::uniform({1, 16, 16}, rng, -1, 1);
    auto eps = Tensor::randn({1, 16, 16}, rng);
    const std::size_t t = 1 + rng() % 10;
    diffusion_loss(net.predict_epsilon(q_sample(x0, t, eps, s), pre, post, t), eps).backward();
    for (const auto& [name, p] : net.params().items())
      if (p.has_grad())
        for (double g : p.grad()) total[name] += std::fabs(g);
  }
  for (const auto& [name, p] : net.params().items()) EXPECT_GT(total[name], 0.0) << name;
}

TEST(PredictEpsilon, FilterCanBeDisabled) {
  auto on = small_config(16);
  auto off = on;
  off.fgcf_enabled = false;
  MaskApproxNet a(on, 15), b(off, 15);
  EXPECT_GT(a.params().size(), b.params().size());
  EXPECT_FALSE(b.params().contains("fgcf.filter"));
  Rng rng(15);
  auto img = Tensor::uniform({3, 16, 16}, rng, 0, 1);
  EXPECT_EQ(b.predict_epsilon(Tensor::zeros({1, 16, 16}), img, img, 1).shape(), (Shape{1, 16, 16}));
}

TEST(ModelCheckpoint, RoundTripRestoresPredictions) {
  auto cfg = small_config(16, DType::f32);
  MaskApproxNet a(cfg, 16), b(cfg, 99);
  auto dir = maskapprox::testing::temp_dir("model_ckpt");
  save_checkpoint(dir / "m.ckpt", a.params().items(), cfg.to_json());
  auto ck = load_checkpoint(dir / "m.ckpt");
  auto cfg2 = ModelConfig::from_json(ck.hyperparams);
  EXPECT_EQ(cfg2.to_json(), cfg.to_json());
  load_into(b.params(), ck);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    EXPECT_TRUE(bit_equal(a.params().items()[i].second, b.params().items()[i].second));
  Rng rng(16);
  auto img = Tensor::uniform({3, 16, 16}, rng, 0, 1, DType::f32);
  auto xt = Tensor::randn({1, 16, 16}, rng, 1.0, DType::f32);
  EXPECT_TRUE(bit_equal(a.predict_epsilon(xt, img, img, 2), b.predict_epsilon(xt, img, img, 2)));
  std::filesystem::remove_all(dir);
}
