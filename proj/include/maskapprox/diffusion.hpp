// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskapprox/tensor.hpp"

namespace maskapprox {

/// Linear variance schedule. Arrays are indexed by t-1 for t = 1..T.
struct NoiseSchedule {
  std::size_t T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> beta_tilde;  // posterior variance, beta_tilde[0] == 0

  double beta_at(std::size_t t) const;
  double alpha_at(std::size_t t) const;
  double alpha_bar_at(std::size_t t) const;
  double beta_tilde_at(std::size_t t) const;

  nlohmann::json to_json() const;
};

NoiseSchedule build_schedule(const std::string& kind, std::size_t T, double beta_start,
                             double beta_end);

/// Reverse-step parametrization. `literal` keeps the coefficient grouping and the
/// un-rooted noise scale of the printed sampling formula.
enum class SamplerForm { standard, literal };
SamplerForm sampler_form_from_name(const std::string& name);
std::string sampler_form_name(SamplerForm form);

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& epsilon, const NoiseSchedule& s);
Tensor q_step(const Tensor& x_prev, std::size_t t, const NoiseSchedule& s, Rng& rng);
Tensor oracle_epsilon(const Tensor& x0, const Tensor& xt, std::size_t t, const NoiseSchedule& s);
Tensor reverse_step(const Tensor& xt, const Tensor& eps_hat, std::size_t t, const Tensor& z,
                    const NoiseSchedule& s, SamplerForm form = SamplerForm::standard);

/// (xt, ipre, ipost, t) -> predicted noise, same shape as xt.
using EpsPredictor =
    std::function<Tensor(const Tensor& xt, const Tensor& ipre, const Tensor& ipost, std::size_t t)>;

/// Runs the reverse chain from x_T ~ N(0, I) to x_0 and clamps to [-1, 1].
/// The map has one channel and the spatial size of `ipre`.
Tensor sample_cd_map(const EpsPredictor& conditioner, const Tensor& ipre, const Tensor& ipost,
                     const NoiseSchedule& s, Rng& rng, SamplerForm form = SamplerForm::standard);

Tensor diffusion_loss(const Tensor& eps_hat, const Tensor& epsilon);

}  // namespace maskapprox
