// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "maskapprox/nn.hpp"

namespace maskapprox {

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled: p shrinks by lr * weight_decay * p each step, outside the moment
  // estimates. A coupled L2 term is normalized by Adam like any gradient and
  // zeroes weights whose loss gradient is small.
  double weight_decay = 5e-4;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

class Adam {
 public:
  Adam(const ParameterSet& params, AdamOptions options);

  /// Applies one update from the accumulated grads. Grads are left untouched.
  void step();
  void zero_grad();
  std::size_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions options_;
  std::size_t steps_ = 0;
};

}  // namespace maskapprox
