// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "maskapprox/error.hpp"
#include "maskapprox/ops.hpp"

namespace maskapprox {

namespace {

std::size_t checked_index(const NoiseSchedule& s, std::size_t t) {
  if (t < 1 || t > s.T) {
    throw IndexError("time step " + std::to_string(t) + " outside [1, " + std::to_string(s.T) +
                     "]");
  }
  return t - 1;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

}  // namespace

double NoiseSchedule::beta_at(std::size_t t) const { return beta[checked_index(*this, t)]; }
double NoiseSchedule::alpha_at(std::size_t t) const { return alpha[checked_index(*this, t)]; }
double NoiseSchedule::alpha_bar_at(std::size_t t) const {
  return alpha_bar[checked_index(*this, t)];
}
double NoiseSchedule::beta_tilde_at(std::size_t t) const {
  return beta_tilde[checked_index(*this, t)];
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"kind", "linear"},
          {"T", T},
          {"beta", beta},
          {"alpha", alpha},
          {"alpha_bar", alpha_bar},
          {"beta_tilde", beta_tilde}};
}

NoiseSchedule build_schedule(const std::string& kind, std::size_t T, double beta_start,
                             double beta_end) {
  if (kind != "linear") throw ConfigError("unknown schedule kind '" + kind + "'");
  if (T < 1) throw ConfigError("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1, got " +
                      std::to_string(beta_start) + ", " + std::to_string(beta_end));
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  s.beta_tilde.resize(T);
  double prev_bar = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    s.beta[i] = beta_start + frac * (beta_end - beta_start);
    s.alpha[i] = 1.0 - s.beta[i];
    s.alpha_bar[i] = prev_bar * s.alpha[i];
    s.beta_tilde[i] = (1.0 - prev_bar) / (1.0 - s.alpha_bar[i]) * s.beta[i];
    prev_bar = s.alpha_bar[i];
  }
  return s;
}

SamplerForm sampler_form_from_name(const std::string& name) {
  if (name == "standard") return SamplerForm::standard;
  if (name == "literal") return SamplerForm::literal;
  throw ConfigError("unknown sampler '" + name + "' (expected standard or literal)");
}

std::string sampler_form_name(SamplerForm form) {
  return form == SamplerForm::standard ? "standard" : "literal";
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& epsilon, const NoiseSchedule& s) {
  const double ab = s.alpha_bar_at(t);
  require_same_shape("q_sample", x0, epsilon);
  return add(scale(x0, std::sqrt(ab)), scale(epsilon, std::sqrt(1.0 - ab)));
}

Tensor q_step(const Tensor& x_prev, std::size_t t, const NoiseSchedule& s, Rng& rng) {
  const double b = s.beta_at(t);
  Tensor noise = Tensor::randn(x_prev.shape(), rng, 1.0, x_prev.dtype());
  return add(scale(x_prev, std::sqrt(1.0 - b)), scale(noise, std::sqrt(b)));
}

Tensor oracle_epsilon(const Tensor& x0, const Tensor& xt, std::size_t t, const NoiseSchedule& s) {
  if (t == 0) throw NumericError("oracle_epsilon: t = 0 has no noise to invert");
  const double ab = s.alpha_bar_at(t);
  if (!(ab < 1.0)) throw NumericError("oracle_epsilon: alpha_bar == 1 at t = " + std::to_string(t));
  require_same_shape("oracle_epsilon", x0, xt);
  return scale(sub(xt, scale(x0, std::sqrt(ab))), 1.0 / std::sqrt(1.0 - ab));
}

Tensor reverse_step(const Tensor& xt, const Tensor& eps_hat, std::size_t t, const Tensor& z,
                    const NoiseSchedule& s, SamplerForm form) {
  const double a = s.alpha_at(t);
  const double b = s.beta_at(t);
  const double ab = s.alpha_bar_at(t);
  const double bt = s.beta_tilde_at(t);
  require_same_shape("reverse_step", xt, eps_hat);
  require_same_shape("reverse_step", xt, z);
  if (t == 1) {
    for (double v : z.data()) {
      if (v != 0.0) throw ContractError("reverse_step: z must be zero at t = 1");
    }
  }
  if (form == SamplerForm::standard) {
    Tensor mean = scale(sub(xt, scale(eps_hat, b / std::sqrt(1.0 - ab))), 1.0 / std::sqrt(a));
    return add(mean, scale(z, std::sqrt(bt)));
  }
  Tensor mean =
      sub(scale(xt, std::sqrt(1.0 / a)), scale(eps_hat, std::sqrt((1.0 - a) / (1.0 - ab))));
  return add(mean, scale(z, bt));
}

Tensor sample_cd_map(const EpsPredictor& conditioner, const Tensor& ipre, const Tensor& ipost,
                     const NoiseSchedule& s, Rng& rng, SamplerForm form) {
  if (ipre.rank() != 3) {
    throw DimensionError("sample_cd_map: images must be C x H x W, got " +
                         shape_str(ipre.shape()));
  }
  NoGradGuard no_grad;
  const Shape shape{1, ipre.dim(1), ipre.dim(2)};
  Tensor x = Tensor::randn(shape, rng, 1.0, ipre.dtype());
  for (std::size_t t = s.T; t >= 1; --t) {
    Tensor eps_hat = conditioner(x, ipre, ipost, t);
    Tensor z = t > 1 ? Tensor::randn(shape, rng, 1.0, ipre.dtype())
                     : Tensor::zeros(shape, ipre.dtype());
    x = reverse_step(x, eps_hat, t, z, s, form);
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = std::clamp(v, -1.0, 1.0);
  return Tensor::from(shape, std::move(out), x.dtype());
}

Tensor diffusion_loss(const Tensor& eps_hat, const Tensor& epsilon) {
  return mse_loss(eps_hat, epsilon);
}

}  // namespace maskapprox
