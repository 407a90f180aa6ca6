// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskapprox/nn.hpp"
#include "maskapprox/tensor.hpp"

namespace maskapprox {

/// Per-channel half spectrum of a real C x H x W signal, laid out C x H x (W/2+1).
struct Spectrum {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<std::complex<double>> bins;

  std::size_t half_width() const { return width / 2 + 1; }
  std::complex<double>& at(std::size_t c, std::size_t k, std::size_t l) {
    return bins[(c * height + k) * half_width() + l];
  }
  const std::complex<double>& at(std::size_t c, std::size_t k, std::size_t l) const {
    return bins[(c * height + k) * half_width() + l];
  }
};

Spectrum dft_channels(const Tensor& x);
Tensor idft_channels(const Spectrum& xhat);

/// exp(-alpha * F^2), differentiable in F.
Tensor spectral_weights(const Tensor& filter, double alpha);
Spectrum weight_spectrum(const Spectrum& xhat, const Tensor& weights);

/// idft(weights * dft(x)) as one differentiable op in x and weights.
Tensor spectral_filter(const Tensor& x, const Tensor& weights);

/// sigmoid(W_a * GAP(x) + b_a), length C.
Tensor channel_attention(const Tensor& xprime, const Tensor& attn_weight, const Tensor& attn_bias);

enum class FuseMode { sum_collapse, per_channel };
FuseMode fuse_mode_from_name(const std::string& name);
std::string fuse_mode_name(FuseMode mode);

/// sum_collapse -> 1 x H x W, per_channel -> C x H x W.
Tensor fuse(const Tensor& xprime, const Tensor& attention, FuseMode mode);

struct FgcfParams {
  Tensor filter;       // C x H x (W/2+1)
  double alpha = 1.0;  // fixed, not trained
  Tensor attn_weight;  // C x C
  Tensor attn_bias;    // C

  static FgcfParams create(ParameterSet& params, const std::string& name, std::size_t channels,
                           std::size_t height, std::size_t width, double alpha, Rng& rng,
                           DType dtype);

  nlohmann::json filter_json() const;
};

Tensor fgcf_apply(const Tensor& x, const FgcfParams& params, FuseMode mode);

}  // namespace maskapprox
