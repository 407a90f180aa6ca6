// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maskapprox/error.hpp"

namespace maskapprox {

namespace {

double evaluate(const std::function<Tensor()>& loss) {
  NoGradGuard guard;
  Tensor out = loss();
  if (out.numel() != 1) {
    throw ContractError("grad_check: function must be scalar-valued, got shape " +
                        shape_str(out.shape()));
  }
  return out.item();
}

}  // namespace

GradCheckReport grad_check_params(const std::function<Tensor()>& loss,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  const GradCheckOptions& options) {
  std::vector<Tensor> tensors;
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.set_requires_grad(true);
    t.zero_grad();
    tensors.push_back(t);
  }
  Tensor out = loss();
  if (out.numel() != 1) {
    throw ContractError("grad_check: function must be scalar-valued, got shape " +
                        shape_str(out.shape()));
  }
  out.backward();

  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    Tensor& t = tensors[ti];
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    auto data = t.mutable_data();
    for (std::size_t idx : coords) {
      const double saved = data[idx];
      data[idx] = saved + options.h;
      const double plus = evaluate(loss);
      data[idx] = saved - options.h;
      const double minus = evaluate(loss);
      data[idx] = saved;
      const double numeric = (plus - minus) / (2.0 * options.h);
      const double a = analytic[idx];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), options.floor});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error || report.coords_checked == 1) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.max_rel_error) {
          report.worst_tensor = params[ti].first;
          report.worst_index = idx;
          report.analytic = a;
          report.numeric = numeric;
        }
      }
    }
  }
  report.passed = report.max_rel_error < options.tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h,
                           double tol) {
  GradCheckOptions options;
  options.h = h;
  options.tol = tol;
  return grad_check_params([&f, &x]() { return f(x); }, {{"x", x}}, options);
}

}  // namespace maskapprox
