// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/mask_approx.hpp"

#include <cmath>
#include <string>

#include "maskapprox/error.hpp"
#include "maskapprox/ops.hpp"

namespace maskapprox {

namespace {

Tensor resize_to(const Tensor& x, std::size_t h, std::size_t w) {
  if (x.dim(1) == h && x.dim(2) == w) return x;
  return resize_bilinear(x, h, w);
}

void require_image(const char* op, const Tensor& img, std::size_t channels) {
  if (img.rank() != 3 || img.dim(0) != channels) {
    throw DimensionError(std::string(op) + ": expected " + std::to_string(channels) +
                         " x H x W image, got " + shape_str(img.shape()));
  }
  if (img.dim(1) == 0 || img.dim(1) % 16 != 0 || img.dim(2) == 0 || img.dim(2) % 16 != 0) {
    throw ShapeError(std::string(op) + ": image extent " + shape_str(img.shape()) +
                     " must be a positive multiple of 16");
  }
}

}  // namespace

nlohmann::json ModelConfig::to_json() const {
  return {{"image_size", image_size},   {"in_channels", in_channels},
          {"base_width", base_width},   {"unet_width", unet_width},
          {"time_dim", time_dim},       {"timesteps", timesteps},
          {"fgcf_enabled", fgcf_enabled}, {"fuse_mode", fuse_mode_name(fuse_mode)},
          {"fgcf_alpha", fgcf_alpha},   {"dtype", dtype_name(dtype)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size");
  c.in_channels = j.at("in_channels");
  c.base_width = j.at("base_width");
  c.unet_width = j.at("unet_width");
  c.time_dim = j.at("time_dim");
  c.timesteps = j.at("timesteps");
  c.fgcf_enabled = j.at("fgcf_enabled");
  c.fuse_mode = fuse_mode_from_name(j.at("fuse_mode"));
  c.fgcf_alpha = j.at("fgcf_alpha");
  c.dtype = dtype_from_name(j.at("dtype"));
  return c;
}

ResBlock ResBlock::create(ParameterSet& params, const std::string& name, std::size_t channels,
                          Rng& rng, DType dtype, bool output_bias) {
  return {Conv2d::create(params, name + ".conv1", channels, channels, 3, 1, 1, rng, dtype),
          Conv2d::create(params, name + ".conv2", channels, channels, 3, 1, 1, rng, dtype,
                         output_bias)};
}

Tensor ResBlock::operator()(const Tensor& x) const { return add(x, second(gelu(first(x)))); }

TimeBlock TimeBlock::create(ParameterSet& params, const std::string& name, std::size_t channels,
                            std::size_t time_dim, Rng& rng, DType dtype) {
  const std::size_t groups = pick_groups(channels, 4);
  return {GroupNorm::create(params, name + ".norm1", channels, groups, dtype),
          GroupNorm::create(params, name + ".norm2", channels, groups, dtype),
          Conv2d::create(params, name + ".conv1", channels, channels, 3, 1, 1, rng, dtype),
          Conv2d::create(params, name + ".conv2", channels, channels, 3, 1, 1, rng, dtype),
          Linear::create(params, name + ".time", time_dim, channels, rng, dtype)};
}

Tensor TimeBlock::operator()(const Tensor& x, const Tensor& temb) const {
  Tensor h = conv1(gelu(norm1(x)));
  h = add_bias(h, reshape(time(temb), {h.dim(0)}), 0);
  h = conv2(gelu(norm2(h)));
  return add(x, h);
}

Tensor timestep_embedding(double t, std::size_t dim, DType dtype) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                 static_cast<double>(std::max<std::size_t>(half, 1)));
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return Tensor::from({1, dim}, std::move(out), dtype);
}

MaskApproxNet::MaskApproxNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  if (config.base_width == 0 || config.unet_width == 0 || config.time_dim < 2) {
    throw ConfigError("model widths must be positive and time_dim >= 2");
  }
  if (config.image_size == 0 || config.image_size % 16 != 0) {
    throw ConfigError("image_size must be a positive multiple of 16");
  }
  Rng rng(seed);
  const DType dt = config.dtype;
  const std::size_t c = config.base_width, u = config.unet_width, td = config.time_dim;
  auto& P = params_;

  std::size_t in = config.in_channels;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t w = c << i;
    const std::string n = "backbone.stage" + std::to_string(i + 1);
    // Without the norm, activations shrink several-fold per stage and the deepest
    // levels stop carrying the image. The deepest level is only read through
    // |post - pre|, where an output bias cancels.
    stages_[i] = {Conv2d::create(P, n + ".down", in, w, 4, 2, 1, rng, dt),
                  GroupNorm::create(P, n + ".norm", w, pick_groups(w, 4), dt),
                  ResBlock::create(P, n + ".res", w, rng, dt, i < 3)};
    diff_convs_[i] =
        Conv2d::create(P, "diff.level" + std::to_string(i + 1), w, c, 3, 1, 1, rng, dt);
    in = w;
  }
  diff_fuse_ = Conv2d::create(P, "diff.fuse", 4 * c, 2 * c, 1, 1, 0, rng, dt);

  dec_up1_ = ConvTranspose2d::create(P, "decoder.up1", 2 * c, c, 4, 4, 0, rng, dt);
  dec_up2_ = ConvTranspose2d::create(P, "decoder.up2", c, c, 4, 4, 0, rng, dt);
  dec_res_ = ResBlock::create(P, "decoder.res", c, rng, dt);
  dec_out_ = Conv2d::create(P, "decoder.out", c, 1, 3, 1, 1, rng, dt);

  time1_ = Linear::create(P, "unet.time1", td, td, rng, dt);
  time2_ = Linear::create(P, "unet.time2", td, td, rng, dt);
  in_conv_ = Conv2d::create(P, "unet.in", 2, u, 3, 1, 1, rng, dt);
  blk0_ = TimeBlock::create(P, "unet.blk0", u, td, rng, dt);
  down1_ = Conv2d::create(P, "unet.down1", u, 2 * u, 4, 2, 1, rng, dt);
  inject1_ = Conv2d::create(P, "unet.inject1", c, 2 * u, 1, 1, 0, rng, dt);
  blk1_ = TimeBlock::create(P, "unet.blk1", 2 * u, td, rng, dt);
  down2_ = Conv2d::create(P, "unet.down2", 2 * u, 4 * u, 4, 2, 1, rng, dt);
  inject2_ = Conv2d::create(P, "unet.inject2", c, 4 * u, 1, 1, 0, rng, dt);
  blk2_ = TimeBlock::create(P, "unet.blk2", 4 * u, td, rng, dt);
  mid_ = TimeBlock::create(P, "unet.mid", 4 * u, td, rng, dt);
  up1_ = ConvTranspose2d::create(P, "unet.up1", 4 * u, 2 * u, 2, 2, 0, rng, dt);
  merge1_ = Conv2d::create(P, "unet.merge1", 4 * u, 2 * u, 3, 1, 1, rng, dt);
  blk3_ = TimeBlock::create(P, "unet.blk3", 2 * u, td, rng, dt);
  up2_ = ConvTranspose2d::create(P, "unet.up2", 2 * u, u, 2, 2, 0, rng, dt);
  merge2_ = Conv2d::create(P, "unet.merge2", 2 * u, u, 3, 1, 1, rng, dt);
  blk4_ = TimeBlock::create(P, "unet.blk4", u, td, rng, dt);

  if (config.fgcf_enabled) {
    const std::size_t stack = 12, grid = config.image_size / 2;
    feat_proj_ = Conv2d::create(P, "fgcf.feat_proj", c, 2, 1, 1, 0, rng, dt);
    tap_d1_ = Conv2d::create(P, "fgcf.tap_down1", 2 * u, 2, 1, 1, 0, rng, dt);
    tap_mid_ = Conv2d::create(P, "fgcf.tap_mid", 4 * u, 2, 1, 1, 0, rng, dt);
    tap_u1_ = Conv2d::create(P, "fgcf.tap_up1", 2 * u, 2, 1, 1, 0, rng, dt);
    tap_u2_ = Conv2d::create(P, "fgcf.tap_up2", u, 2, 1, 1, 0, rng, dt);
    fgcf_ = FgcfParams::create(P, "fgcf", stack, grid, grid, config.fgcf_alpha, rng, dt);
    const std::size_t fused = config.fuse_mode == FuseMode::sum_collapse ? 1 : stack;
    fgcf_proj_ = Conv2d::create(P, "fgcf.proj", fused, u, 1, 1, 0, rng, dt);
  }

  head_norm_ = GroupNorm::create(P, "unet.head_norm", u, pick_groups(u, 4), dt);
  head_conv_ = Conv2d::create(P, "unet.head", u, 1, 3, 1, 1, rng, dt);
}

SiamesePyramid MaskApproxNet::extract_pyramid(const Tensor& img) const {
  require_image("extract_pyramid", img, config_.in_channels);
  SiamesePyramid out;
  Tensor x = img;
  for (std::size_t i = 0; i < 4; ++i) {
    x = stages_[i].res(gelu(stages_[i].norm(stages_[i].down(x))));
    out.levels[i] = x;
  }
  return out;
}

DiffEncoding MaskApproxNet::difference_encode(const SiamesePyramid& pre,
                                              const SiamesePyramid& post) const {
  DiffEncoding out;
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < 4; ++i) {
    if (pre.levels[i].shape() != post.levels[i].shape()) {
      throw ShapeError("difference_encode: level " + std::to_string(i + 1) + " shapes " +
                       shape_str(pre.levels[i].shape()) + " and " +
                       shape_str(post.levels[i].shape()) + " differ");
    }
    Tensor d = gelu(diff_convs_[i](abs(sub(post.levels[i], pre.levels[i]))));
    out.levels[i] = d;
    const std::size_t factor = std::size_t{1} << (3 - i);
    parts.push_back(factor > 1 ? avg_pool2d(d, factor) : d);
  }
  out.xbar = diff_fuse_(concat(parts, 0));
  return out;
}

Tensor MaskApproxNet::decode_diff_image(const DiffEncoding& encoding) const {
  Tensor x = gelu(dec_up1_(encoding.xbar));
  x = gelu(dec_up2_(x));
  return tanh(dec_out_(dec_res_(x)));
}

Conditioning MaskApproxNet::encode(const Tensor& ipre, const Tensor& ipost) const {
  if (ipre.shape() != ipost.shape()) {
    throw DimensionError("encode: image shapes " + shape_str(ipre.shape()) + " and " +
                         shape_str(ipost.shape()) + " differ");
  }
  Conditioning c;
  c.pre = extract_pyramid(ipre);
  c.post = extract_pyramid(ipost);
  c.encoding = difference_encode(c.pre, c.post);
  c.diff_image = decode_diff_image(c.encoding);
  return c;
}

Tensor MaskApproxNet::predict_epsilon(const Tensor& xt, const Tensor& ipre, const Tensor& ipost,
                                      std::size_t t) const {
  return predict_epsilon(xt, encode(ipre, ipost), t);
}

Tensor MaskApproxNet::predict_epsilon(const Tensor& xt, const Conditioning& cond,
                                      std::size_t t) const {
  const std::size_t H = cond.diff_image.dim(1), W = cond.diff_image.dim(2);
  if (xt.shape() != Shape{1, H, W}) {
    throw DimensionError("predict_epsilon: noisy mask " + shape_str(xt.shape()) +
                         " does not match image grid " + shape_str({1, H, W}));
  }
  if (t < 1 || t > config_.timesteps) {
    throw IndexError("predict_epsilon: time step " + std::to_string(t) + " outside [1, " +
                     std::to_string(config_.timesteps) + "]");
  }
  if (config_.fgcf_enabled && (H != config_.image_size || W != config_.image_size)) {
    throw ShapeError("predict_epsilon: filter grid is fixed to image_size " +
                     std::to_string(config_.image_size));
  }

  Tensor temb = timestep_embedding(static_cast<double>(t), config_.time_dim, config_.dtype);
  temb = time2_(gelu(time1_(temb)));

  Tensor h0 = blk0_(in_conv_(concat({cond.diff_image, xt}, 0)), temb);
  // Skips carry the change signal itself rather than both branches side by side.
  Tensor d1 = add(down1_(h0), inject1_(cond.encoding.levels[0]));
  d1 = blk1_(d1, temb);
  Tensor d2 = add(down2_(d1), inject2_(cond.encoding.levels[1]));
  d2 = blk2_(d2, temb);
  Tensor mid = mid_(d2, temb);
  Tensor u1 = blk3_(merge1_(concat({up1_(mid), d1}, 0)), temb);
  Tensor u2 = blk4_(merge2_(concat({up2_(u1), h0}, 0)), temb);

  if (config_.fgcf_enabled) {
    const std::size_t gh = H / 2, gw = W / 2;
    Tensor stack = concat({feat_proj_(cond.pre.levels[0]), feat_proj_(cond.post.levels[0]),
                           tap_d1_(d1), resize_to(tap_mid_(mid), gh, gw), tap_u1_(u1),
                           resize_to(tap_u2_(u2), gh, gw)},
                          0);
    Tensor filtered = fgcf_apply(stack, fgcf_, config_.fuse_mode);
    u2 = add(u2, fgcf_proj_(resize_to(filtered, H, W)));
  }
  return head_conv_(gelu(head_norm_(u2)));
}

}  // namespace maskapprox
