// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "maskapprox/error.hpp"

namespace maskapprox {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::string dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType dtype_from_name(const std::string& name) {
  if (name == "f32" || name == "float32") return DType::f32;
  if (name == "f64" || name == "float64") return DType::f64;
  throw ConfigError("unknown dtype '" + name + "' (expected f32 or f64)");
}

void round_to_dtype(std::span<double> values, DType dtype) {
  if (dtype != DType::f32) return;
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

void TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void TensorImpl::accumulate_grad(std::span<const double> g) {
  ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor() = default;
Tensor::Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::from(Shape shape, std::vector<double> values, DType dtype) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  impl->data = std::move(values);
  round_to_dtype(impl->data, dtype);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  std::vector<double> v(shape_numel(shape), value);
  return from(std::move(shape), std::move(v), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return from({}, {value}, dtype); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, DType dtype) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return from(std::move(shape), std::move(v), dtype);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, DType dtype) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return from(std::move(shape), std::move(v), dtype);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }
DType Tensor::dtype() const { return impl_->dtype; }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const { return impl_->is_leaf(); }

Tensor Tensor::detach() const { return from(shape(), impl_->data, dtype()); }

Tensor Tensor::to(DType target) const { return from(shape(), impl_->data, target); }

Tensor make_op_result(std::string op, Shape shape, DType dtype, std::vector<double> data,
                      std::vector<Tensor> parents, BackwardFn backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  impl->data = std::move(data);
  round_to_dtype(impl->data, dtype);
  impl->op = std::move(op);
  if (grad_enabled()) {
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& p) { return p.defined() && p.requires_grad(); });
    if (any) {
      impl->requires_grad = true;
      for (auto& p : parents) {
        if (p.defined() && p.requires_grad()) impl->parents.push_back(p.impl());
      }
      impl->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(impl));
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  std::unordered_set<const TensorImpl*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

bool Tape::is_topological() const {
  std::unordered_map<const TensorImpl*, std::size_t> position;
  for (std::size_t i = 0; i < nodes_.size(); ++i) position[nodes_[i].get()] = i;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& p : nodes_[i]->parents) {
      auto it = position.find(p.get());
      if (it == position.end() || it->second >= i) return false;
    }
  }
  return true;
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!requires_grad()) throw ContractError("backward() on a tensor that does not require grad");
  Tape tape = Tape::record(*this);
  // Intermediate grads are per-sweep; only leaves accumulate across calls.
  for (auto& node : tape.nodes()) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
  }
  impl_->ensure_grad();
  impl_->grad[0] += 1.0;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto& node = *it;
    if (node->backward_fn) {
      node->backward_fn(*node);
    }
  }
}

}  // namespace maskapprox
