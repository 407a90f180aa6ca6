// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/nn.hpp"

#include <algorithm>
#include <cmath>

#include "maskapprox/error.hpp"
#include "maskapprox/ops.hpp"

namespace maskapprox {

Tensor ParameterSet::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  index_[name] = items_.size();
  items_.emplace_back(name, value);
  return value;
}

Tensor ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("no parameter named '" + name + "'");
  return items_[it->second].second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.size() != size()) throw ContractError("parameter sets differ in size");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& [name, src] = other.items_[i];
    auto& dst = items_[i].second;
    if (name != items_[i].first || src.shape() != dst.shape()) {
      throw ContractError("parameter '" + items_[i].first + "' does not match '" + name + "'");
    }
    auto d = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), d.begin());
    round_to_dtype(d, dst.dtype());
  }
}

Tensor init_normal(Shape shape, std::size_t fan_in, Rng& rng, DType dtype, double gain) {
  const double stddev = gain / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  return Tensor::randn(std::move(shape), rng, stddev, dtype);
}

Conv2d Conv2d::create(ParameterSet& params, const std::string& name, std::size_t in_ch,
                      std::size_t out_ch, std::size_t kernel, std::size_t stride,
                      std::size_t pad, Rng& rng, DType dtype, bool with_bias) {
  Conv2d c;
  c.weight = params.add(name + ".weight", init_normal({out_ch, in_ch, kernel, kernel},
                                                       in_ch * kernel * kernel, rng, dtype));
  if (with_bias) c.bias = params.add(name + ".bias", Tensor::zeros({out_ch}, dtype));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Tensor Conv2d::operator()(const Tensor& x) const {
  Tensor y = conv2d(x, weight, stride, pad);
  return bias.defined() ? add_bias(y, bias, 0) : y;
}

ConvTranspose2d ConvTranspose2d::create(ParameterSet& params, const std::string& name,
                                        std::size_t in_ch, std::size_t out_ch,
                                        std::size_t kernel, std::size_t stride, std::size_t pad,
                                        Rng& rng, DType dtype) {
  ConvTranspose2d c;
  // Each output pixel receives about in_ch * (kernel / stride)^2 contributions.
  const std::size_t overlap = std::max<std::size_t>(1, kernel / std::max<std::size_t>(stride, 1));
  c.weight = params.add(name + ".weight", init_normal({in_ch, out_ch, kernel, kernel},
                                                       in_ch * overlap * overlap, rng, dtype));
  c.bias = params.add(name + ".bias", Tensor::zeros({out_ch}, dtype));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Tensor ConvTranspose2d::operator()(const Tensor& x) const {
  return add_bias(transpose_conv2d(x, weight, stride, pad), bias, 0);
}

Linear Linear::create(ParameterSet& params, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng, DType dtype, bool with_bias) {
  Linear l;
  l.weight = params.add(name + ".weight", init_normal({in, out}, in, rng, dtype));
  if (with_bias) l.bias = params.add(name + ".bias", Tensor::zeros({out}, dtype));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias, 1) : y;
}

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& name, std::size_t width,
                            DType dtype) {
  LayerNorm n;
  n.gamma = params.add(name + ".gamma", Tensor::full({width}, 1.0, dtype));
  n.beta = params.add(name + ".beta", Tensor::zeros({width}, dtype));
  return n;
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

GroupNorm GroupNorm::create(ParameterSet& params, const std::string& name, std::size_t channels,
                            std::size_t groups, DType dtype) {
  GroupNorm n;
  n.gamma = params.add(name + ".gamma", Tensor::full({channels}, 1.0, dtype));
  n.beta = params.add(name + ".beta", Tensor::zeros({channels}, dtype));
  n.groups = groups;
  return n;
}

Tensor GroupNorm::operator()(const Tensor& x) const { return group_norm(x, groups, gamma, beta); }

std::size_t pick_groups(std::size_t channels, std::size_t preferred) {
  for (std::size_t g = std::min(preferred, channels); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

}  // namespace maskapprox
