// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "maskapprox/tensor.hpp"

namespace maskapprox {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded random subset per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool passed = true;
  std::size_t coords_checked = 0;
  // Location and values of the worst coordinate.
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central-difference check of the tape gradient of scalar f at x.
/// `x` is perturbed in place and restored.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double h = 1e-5, double tol = 1e-4);

/// Checks d loss / d p for every named tensor in `params`. The loss closure is
/// re-evaluated with each coordinate perturbed by +-h.
GradCheckReport grad_check_params(const std::function<Tensor()>& loss,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  const GradCheckOptions& options = {});

}  // namespace maskapprox
