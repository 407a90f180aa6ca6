// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Storage is always double precision. A tensor tagged DType::f32 has every
// value rounded to the nearest float after each op that produces it, so f32
// runs see single-precision values while gradient math stays in double.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace maskapprox {

enum class DType { f32, f64 };

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::string dtype_name(DType dtype);
DType dtype_from_name(const std::string& name);

/// Result dtype of an op: f64 wins.
inline DType promote(DType a, DType b) {
  return (a == DType::f64 || b == DType::f64) ? DType::f64 : DType::f32;
}

struct TensorImpl;
/// Reads `self.grad` (and possibly `self.data`) and accumulates into the parents.
using BackwardFn = std::function<void(const TensorImpl& self)>;

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f64;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  // Graph edges. Empty for leaves and for tensors produced with grad disabled.
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  BackwardFn backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void accumulate_grad(std::span<const double> g);
  void ensure_grad();
};

class Tensor {
 public:
  Tensor();
  explicit Tensor(std::shared_ptr<TensorImpl> impl);

  static Tensor zeros(Shape shape, DType dtype = DType::f64);
  static Tensor full(Shape shape, double value, DType dtype = DType::f64);
  static Tensor from(Shape shape, std::vector<double> values, DType dtype = DType::f64);
  static Tensor scalar(double value, DType dtype = DType::f64);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, DType dtype = DType::f64);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, DType dtype = DType::f64);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  DType dtype() const;

  std::span<const double> data() const;
  // In-place access for optimizer updates and test perturbations.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  bool is_leaf() const;
  /// Same values, detached from the graph, fresh storage.
  Tensor detach() const;
  /// Copy converted to `dtype` (rounded when narrowing); detached.
  Tensor to(DType dtype) const;

  /// Reverse-mode sweep from this scalar. Leaf grads accumulate across calls.
  void backward() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Rounds every value to float precision when `dtype` is f32.
void round_to_dtype(std::span<double> values, DType dtype);

// Gradient recording mode (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op output. Records `parents` and `backward` only when grad mode is
/// on and at least one parent requires grad.
Tensor make_op_result(std::string op, Shape shape, DType dtype, std::vector<double> data,
                      std::vector<Tensor> parents, BackwardFn backward);

/// Topologically ordered record of the ops reachable from a root: every node
/// appears after all of the nodes that produced its inputs.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<TensorImpl>>& nodes() const { return nodes_; }
  /// True iff each node's parents appear earlier in the order.
  bool is_topological() const;

 private:
  std::vector<std::shared_ptr<TensorImpl>> nodes_;
};

}  // namespace maskapprox
