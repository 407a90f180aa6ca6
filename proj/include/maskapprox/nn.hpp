// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter registry and the small layer types the models are assembled from.

#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "maskapprox/tensor.hpp"

namespace maskapprox {

/// Ordered, named collection of trainable leaf tensors. Layers hold handles to
/// the same storage, so optimizer updates are visible everywhere.
class ParameterSet {
 public:
  Tensor add(const std::string& name, Tensor value);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();
  /// Overwrites values from `other` (same names and shapes required).
  void copy_values_from(const ParameterSet& other);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Initializes a fan-in scaled normal tensor (std = gain / sqrt(fan_in)).
Tensor init_normal(Shape shape, std::size_t fan_in, Rng& rng, DType dtype, double gain = 1.0);

struct Conv2d {
  Tensor weight;  // Co x Ci x k x k
  Tensor bias;    // Co, may be undefined
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d create(ParameterSet& params, const std::string& name, std::size_t in_ch,
                       std::size_t out_ch, std::size_t kernel, std::size_t stride,
                       std::size_t pad, Rng& rng, DType dtype, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct ConvTranspose2d {
  Tensor weight;  // Ci x Co x k x k
  Tensor bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  static ConvTranspose2d create(ParameterSet& params, const std::string& name,
                                std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                                std::size_t stride, std::size_t pad, Rng& rng, DType dtype);
  Tensor operator()(const Tensor& x) const;
};

/// y = x W + b for x of shape n x in.
struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out, may be undefined

  static Linear create(ParameterSet& params, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, DType dtype, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma, beta;

  static LayerNorm create(ParameterSet& params, const std::string& name, std::size_t width,
                          DType dtype);
  Tensor operator()(const Tensor& x) const;
};

struct GroupNorm {
  Tensor gamma, beta;
  std::size_t groups = 1;

  static GroupNorm create(ParameterSet& params, const std::string& name, std::size_t channels,
                          std::size_t groups, DType dtype);
  Tensor operator()(const Tensor& x) const;
};

/// Largest divisor of `channels` that is <= `preferred`.
std::size_t pick_groups(std::size_t channels, std::size_t preferred);

}  // namespace maskapprox
