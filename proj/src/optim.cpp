// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/optim.hpp"

#include <cmath>

namespace maskapprox {

Adam::Adam(const ParameterSet& params, AdamOptions options) : options_(options) {
  for (const auto& [name, p] : params.items()) {
    params_.push_back(p);
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  double scale = 1.0;
  if (options_.clip_norm > 0.0) {
    double sq = 0.0;
    for (auto& p : params_)
      if (p.has_grad())
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > options_.clip_norm) scale = options_.clip_norm / norm;
  }
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = grad[k] * scale;
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      data[k] -= options_.lr * ((m[k] / c1) / (std::sqrt(v[k] / c2) + options_.eps) +
                                options_.weight_decay * data[k]);
    }
    round_to_dtype(data, p.dtype());
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace maskapprox
