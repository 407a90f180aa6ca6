// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "maskapprox/fgcf.hpp"
#include "maskapprox/nn.hpp"
#include "maskapprox/tensor.hpp"

namespace maskapprox {

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t in_channels = 3;
  std::size_t base_width = 8;  // pyramid widths c, 2c, 4c, 8c
  std::size_t unet_width = 8;
  std::size_t time_dim = 16;
  std::size_t timesteps = 50;
  bool fgcf_enabled = true;
  FuseMode fuse_mode = FuseMode::sum_collapse;
  double fgcf_alpha = 1.0;
  DType dtype = DType::f32;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Four feature levels at strides 2, 4, 8, 16.
struct SiamesePyramid {
  std::array<Tensor, 4> levels;
};

struct DiffEncoding {
  Tensor xbar;  // 2c x H/16 x W/16
  // Per-level gelu(conv(|post - pre|)) before pooling, c x H/2^(i+1) x W/2^(i+1).
  std::array<Tensor, 4> levels;
};

/// Everything derived from the image pair alone; reused across reverse steps.
struct Conditioning {
  SiamesePyramid pre, post;
  DiffEncoding encoding;
  Tensor diff_image;  // 1 x H x W in [-1, 1]
};

/// y = x + conv(gelu(conv(x)))
struct ResBlock {
  Conv2d first, second;
  static ResBlock create(ParameterSet& params, const std::string& name, std::size_t channels,
                         Rng& rng, DType dtype, bool output_bias = true);
  Tensor operator()(const Tensor& x) const;
};

/// Pre-norm residual block with a per-channel time bias.
struct TimeBlock {
  GroupNorm norm1, norm2;
  Conv2d conv1, conv2;
  Linear time;
  static TimeBlock create(ParameterSet& params, const std::string& name, std::size_t channels,
                          std::size_t time_dim, Rng& rng, DType dtype);
  Tensor operator()(const Tensor& x, const Tensor& temb) const;
};

/// Sinusoidal embedding of a scalar step, shape 1 x dim.
Tensor timestep_embedding(double t, std::size_t dim, DType dtype = DType::f64);

class MaskApproxNet {
 public:
  MaskApproxNet(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  SiamesePyramid extract_pyramid(const Tensor& img) const;
  DiffEncoding difference_encode(const SiamesePyramid& pre, const SiamesePyramid& post) const;
  Tensor decode_diff_image(const DiffEncoding& encoding) const;
  Conditioning encode(const Tensor& ipre, const Tensor& ipost) const;

  Tensor predict_epsilon(const Tensor& xt, const Tensor& ipre, const Tensor& ipost,
                         std::size_t t) const;
  Tensor predict_epsilon(const Tensor& xt, const Conditioning& cond, std::size_t t) const;

  // Exposed for tests that pin individual blocks.
  ResBlock& decoder_residual() { return dec_res_; }

 private:
  struct Stage {
    Conv2d down;
    GroupNorm norm;
    ResBlock res;
  };

  ModelConfig config_;
  ParameterSet params_;

  std::array<Stage, 4> stages_;
  std::array<Conv2d, 4> diff_convs_;
  Conv2d diff_fuse_;

  ConvTranspose2d dec_up1_, dec_up2_;
  ResBlock dec_res_;
  Conv2d dec_out_;

  Linear time1_, time2_;
  Conv2d in_conv_;
  TimeBlock blk0_, blk1_, blk2_, mid_, blk3_, blk4_;
  Conv2d down1_, down2_, inject1_, inject2_;
  ConvTranspose2d up1_, up2_;
  Conv2d merge1_, merge2_;

  Conv2d feat_proj_, tap_d1_, tap_mid_, tap_u1_, tap_u2_, fgcf_proj_;
  FgcfParams fgcf_;

  GroupNorm head_norm_;
  Conv2d head_conv_;
};

}  // namespace maskapprox
