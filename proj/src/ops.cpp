// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "maskapprox/error.hpp"

namespace maskapprox {

namespace {

void acc(const Tensor& p, std::span<const double> g) {
  if (p.requires_grad()) p.impl()->accumulate_grad(g);
}

// C (M x N) = op(A) (M x K) * op(B) (K x N) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, double beta) {
  if (m == 0 || n == 0) return;
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const RowMajor>;
  const Eigen::Index M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
                     K = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMajor> out(c, M, N);
  if (beta == 0.0) {
    out.setZero();
  } else {
    out *= beta;
  }
  if (k == 0) return;
  const CMap A = trans_a ? CMap(a, K, M) : CMap(a, M, K);
  const CMap B = trans_b ? CMap(b, N, K) : CMap(b, K, N);
  if (trans_a && trans_b) {
    out.noalias() += A.transpose() * B.transpose();
  } else if (trans_a) {
    out.noalias() += A.transpose() * B;
  } else if (trans_b) {
    out.noalias() += A * B.transpose();
  } else {
    out.noalias() += A * B;
  }
}

void check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1) return;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " do not match");
}

template <class F, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  check_binary(name, a, b);
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  std::vector<double> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[a_scalar ? 0 : i], bd[b_scalar ? 0 : i]);
  return make_op_result(
      name, std::move(shape), promote(a.dtype(), b.dtype()), std::move(out), {a, b},
      [a, b, a_scalar, b_scalar, da, db](const TensorImpl& self) {
        const auto& g = self.grad;
        auto ad = a.data();
        auto bd = b.data();
        if (a.requires_grad()) {
          std::vector<double> ga(a.numel(), 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            double x = ad[a_scalar ? 0 : i], y = bd[b_scalar ? 0 : i];
            ga[a_scalar ? 0 : i] += g[i] * da(x, y);
          }
          acc(a, ga);
        }
        if (b.requires_grad()) {
          std::vector<double> gb(b.numel(), 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            double x = ad[a_scalar ? 0 : i], y = bd[b_scalar ? 0 : i];
            gb[b_scalar ? 0 : i] += g[i] * db(x, y);
          }
          acc(b, gb);
        }
      });
}

// df receives (input, output).
template <class F, class DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return make_op_result(name, x.shape(), x.dtype(), std::move(out), {x},
                        [x, df](const TensorImpl& self) {
                          auto xd = x.data();
                          std::vector<double> gx(xd.size());
                          for (std::size_t i = 0; i < xd.size(); ++i) {
                            gx[i] = self.grad[i] * df(xd[i], self.data[i]);
                          }
                          acc(x, gx);
                        });
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(x.shape()));
  }
}

struct ConvGeometry {
  std::size_t channels, height, width, kh, kw, stride, pad, out_h, out_w;
};

// cols: (C*kh*kw) x (out_h*out_w).
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          double* dst = row + oi * g.out_w;
          if (ii < 0 || ii >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.height + static_cast<std::size_t>(ii)) * g.width;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            dst[oj] = (jj < 0 || jj >= static_cast<long>(g.width))
                          ? 0.0
                          : src[static_cast<std::size_t>(jj)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters cols back into an image, accumulating.
void col2im(const ConvGeometry& g, const double* cols, double* x) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.height)) continue;
          double* dst = x + (c * g.height + static_cast<std::size_t>(ii)) * g.width;
          const double* src = row + oi * g.out_w;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            if (jj < 0 || jj >= static_cast<long>(g.width)) continue;
            dst[static_cast<std::size_t>(jj)] += src[oj];
          }
        }
      }
    }
  }
}

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                        const char* axis) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (k > in + 2 * pad) {
    throw ShapeError(std::string("conv2d: kernel ") + axis + " extent " + std::to_string(k) +
                     " exceeds padded input " + std::to_string(in + 2 * pad));
  }
  const std::size_t span = in + 2 * pad - k;
  if (span % stride != 0) {
    throw ShapeError(std::string("conv2d: non-integral output ") + axis + " extent ((" +
                     std::to_string(in) + " + 2*" + std::to_string(pad) + " - " +
                     std::to_string(k) + ") / " + std::to_string(stride) + ")");
  }
  return span / stride + 1;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_op_result("sum", {}, x.dtype(), {s}, {x}, [x](const TensorImpl& self) {
    std::vector<double> gx(x.numel(), self.grad[0]);
    acc(x, gx);
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_op_result("mean", {}, x.dtype(), {s / n}, {x}, [x, n](const TensorImpl& self) {
    std::vector<double> gx(x.numel(), self.grad[0] / n);
    acc(x, gx);
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis);
  if (s.extent == 0) throw ContractError("mean over an empty axis");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<long>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xd[(o * s.extent + e) * s.inner + i];
  const double inv = 1.0 / static_cast<double>(s.extent);
  for (auto& v : out) v *= inv;
  return make_op_result("mean_axis", std::move(shape), x.dtype(), std::move(out), {x},
                        [x, s, inv](const TensorImpl& self) {
                          std::vector<double> gx(x.numel());
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t e = 0; e < s.extent; ++e)
                              for (std::size_t i = 0; i < s.inner; ++i)
                                gx[(o * s.extent + e) * s.inner + i] =
                                    self.grad[o * s.inner + i] * inv;
                          acc(x, gx);
                        });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op_result("reshape", std::move(shape), x.dtype(), std::move(out), {x},
                        [x](const TensorImpl& self) { acc(x, self.grad); });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw IndexError("concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  DType dtype = parts.front().dtype();
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.shape()[i] != first[i]) {
        throw DimensionError("concat: shapes " + shape_str(first) + " and " +
                             shape_str(p.shape()) + " differ off the concat axis");
      }
    }
    shape[axis] += p.shape()[axis];
    dtype = promote(dtype, p.dtype());
  }
  const auto s = split_axis(shape, axis);
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.shape()[axis] * s.inner;
    auto pd = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy(pd.begin() + static_cast<long>(o * block),
                pd.begin() + static_cast<long>((o + 1) * block),
                out.begin() + static_cast<long>(o * s.extent * s.inner + offset * s.inner));
    }
    offset += p.shape()[axis];
  }
  return make_op_result("concat", shape, dtype, std::move(out), parts,
                        [parts, offsets, s, axis](const TensorImpl& self) {
                          for (std::size_t k = 0; k < parts.size(); ++k) {
                            const auto& p = parts[k];
                            if (!p.requires_grad()) continue;
                            const std::size_t block = p.shape()[axis] * s.inner;
                            std::vector<double> gp(p.numel());
                            for (std::size_t o = 0; o < s.outer; ++o) {
                              auto src = self.grad.begin() +
                                         static_cast<long>(o * s.extent * s.inner +
                                                           offsets[k] * s.inner);
                              std::copy(src, src + static_cast<long>(block),
                                        gp.begin() + static_cast<long>(o * block));
                            }
                            acc(p, gp);
                          }
                        });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end) {
  const auto s = split_axis(x.shape(), axis);
  if (start > end || end > s.extent) {
    throw IndexError("slice [" + std::to_string(start) + ", " + std::to_string(end) +
                     ") out of range for axis " + std::to_string(axis) + " of " +
                     shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = end - start;
  const std::size_t len = end - start;
  std::vector<double> out(shape_numel(shape));
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    auto src = xd.begin() + static_cast<long>((o * s.extent + start) * s.inner);
    std::copy(src, src + static_cast<long>(len * s.inner),
              out.begin() + static_cast<long>(o * len * s.inner));
  }
  return make_op_result("slice", std::move(shape), x.dtype(), std::move(out), {x},
                        [x, s, start, len](const TensorImpl& self) {
                          std::vector<double> gx(x.numel(), 0.0);
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            auto src = self.grad.begin() + static_cast<long>(o * len * s.inner);
                            std::copy(src, src + static_cast<long>(len * s.inner),
                                      gx.begin() +
                                          static_cast<long>((o * s.extent + start) * s.inner));
                          }
                          acc(x, gx);
                        });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xd[i * c + j];
  return make_op_result("transpose", {c, r}, x.dtype(), std::move(out), {x},
                        [x, r, c](const TensorImpl& self) {
                          std::vector<double> gx(r * c);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                              gx[i * c + j] = self.grad[j * r + i];
                          acc(x, gx);
                        });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank(table, 2, "embedding_lookup");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  std::vector<double> out(idv.size() * width);
  auto td = table.data();
  for (std::size_t r = 0; r < idv.size(); ++r) {
    if (idv[r] >= vocab) {
      throw IndexError("embedding id " + std::to_string(idv[r]) + " out of range for table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy(td.begin() + static_cast<long>(idv[r] * width),
              td.begin() + static_cast<long>((idv[r] + 1) * width),
              out.begin() + static_cast<long>(r * width));
  }
  return make_op_result("embedding_lookup", {idv.size(), width}, table.dtype(), std::move(out),
                        {table}, [table, idv, width](const TensorImpl& self) {
                          std::vector<double> gt(table.numel(), 0.0);
                          for (std::size_t r = 0; r < idv.size(); ++r)
                            for (std::size_t j = 0; j < width; ++j)
                              gt[idv[r] * width + j] += self.grad[r * width + j];
                          acc(table, gt);
                        });
}

Tensor add_bias(const Tensor& x, const Tensor& bias, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis);
  if (bias.numel() != s.extent) {
    throw DimensionError("add_bias: bias of " + std::to_string(bias.numel()) +
                         " values for axis extent " + std::to_string(s.extent));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e) {
      double* row = out.data() + (o * s.extent + e) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) row[i] += bd[e];
    }
  return make_op_result("add_bias", x.shape(), promote(x.dtype(), bias.dtype()), std::move(out),
                        {x, bias}, [x, bias, s](const TensorImpl& self) {
                          acc(x, self.grad);
                          if (bias.requires_grad()) {
                            std::vector<double> gb(s.extent, 0.0);
                            for (std::size_t o = 0; o < s.outer; ++o)
                              for (std::size_t e = 0; e < s.extent; ++e)
                                for (std::size_t i = 0; i < s.inner; ++i)
                                  gb[e] += self.grad[(o * s.extent + e) * s.inner + i];
                            acc(bias, gb);
                          }
                        });
}

Tensor scale_along(const Tensor& x, const Tensor& factors, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis);
  if (factors.numel() != s.extent) {
    throw DimensionError("scale_along: " + std::to_string(factors.numel()) +
                         " factors for axis extent " + std::to_string(s.extent));
  }
  std::vector<double> out(x.numel());
  auto xd = x.data();
  auto fd = factors.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t k = (o * s.extent + e) * s.inner + i;
        out[k] = xd[k] * fd[e];
      }
  return make_op_result(
      "scale_along", x.shape(), promote(x.dtype(), factors.dtype()), std::move(out), {x, factors},
      [x, factors, s](const TensorImpl& self) {
        auto xd = x.data();
        auto fd = factors.data();
        std::vector<double> gx(x.numel());
        std::vector<double> gf(s.extent, 0.0);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) {
              const std::size_t k = (o * s.extent + e) * s.inner + i;
              gx[k] = self.grad[k] * fd[e];
              gf[e] += self.grad[k] * xd[k];
            }
        acc(x, gx);
        acc(factors, gf);
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), 0.0);
  return make_op_result("matmul", {m, n}, promote(a.dtype(), b.dtype()), std::move(out), {a, b},
                        [a, b, m, k, n](const TensorImpl& self) {
                          if (a.requires_grad()) {
                            std::vector<double> ga(m * k, 0.0);
                            gemm(false, true, m, k, n, self.grad.data(), b.data().data(),
                                 ga.data(), 0.0);
                            acc(a, ga);
                          }
                          if (b.requires_grad()) {
                            std::vector<double> gb(k * n, 0.0);
                            gemm(true, false, k, n, m, a.data().data(), self.grad.data(),
                                 gb.data(), 0.0);
                            acc(b, gb);
                          }
                        });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad) {
  require_rank(x, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (kernel.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " +
                         std::to_string(kernel.dim(1)) + " input channels, input is " +
                         shape_str(x.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), kernel.dim(2), kernel.dim(3), stride, pad, 0, 0};
  g.out_h = conv_extent(g.height, g.kh, stride, pad, "height");
  g.out_w = conv_extent(g.width, g.kw, stride, pad, "width");
  const std::size_t cout = kernel.dim(0);
  const std::size_t patch = g.channels * g.kh * g.kw;
  const std::size_t plane = g.out_h * g.out_w;
  auto cols = std::make_shared<std::vector<double>>(patch * plane);
  im2col(g, x.data().data(), cols->data());
  std::vector<double> out(cout * plane, 0.0);
  gemm(false, false, cout, plane, patch, kernel.data().data(), cols->data(), out.data(), 0.0);
  return make_op_result(
      "conv2d", {cout, g.out_h, g.out_w}, promote(x.dtype(), kernel.dtype()), std::move(out),
      {x, kernel}, [x, kernel, g, cols, cout, patch, plane](const TensorImpl& self) {
        if (kernel.requires_grad()) {
          std::vector<double> gk(cout * patch, 0.0);
          gemm(false, true, cout, patch, plane, self.grad.data(), cols->data(), gk.data(), 0.0);
          acc(kernel, gk);
        }
        if (x.requires_grad()) {
          std::vector<double> gcols(patch * plane, 0.0);
          gemm(true, false, patch, plane, cout, kernel.data().data(), self.grad.data(),
               gcols.data(), 0.0);
          std::vector<double> gx(x.numel(), 0.0);
          col2im(g, gcols.data(), gx.data());
          acc(x, gx);
        }
      });
}

Tensor transpose_conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride,
                        std::size_t pad) {
  require_rank(x, 3, "transpose_conv2d input");
  require_rank(kernel, 4, "transpose_conv2d kernel");
  if (kernel.dim(0) != x.dim(0)) {
    throw DimensionError("transpose_conv2d: kernel " + shape_str(kernel.shape()) + " expects " +
                         std::to_string(kernel.dim(0)) + " input channels, input is " +
                         shape_str(x.shape()));
  }
  if (stride == 0) throw ShapeError("transpose_conv2d: stride must be positive");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  const long oh = static_cast<long>((h - 1) * stride + kh) - 2 * static_cast<long>(pad);
  const long ow = static_cast<long>((w - 1) * stride + kw) - 2 * static_cast<long>(pad);
  if (h == 0 || w == 0 || oh <= 0 || ow <= 0 || pad >= kh || pad >= kw) {
    throw ShapeError("transpose_conv2d: invalid geometry for input " + shape_str(x.shape()) +
                     ", kernel " + shape_str(kernel.shape()) + ", stride " +
                     std::to_string(stride) + ", pad " + std::to_string(pad));
  }
  // The output is the image whose conv2d (same kernel geometry) has extent h x w.
  ConvGeometry g{cout, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), kh, kw,
                 stride, pad, h, w};
  const std::size_t patch = cout * kh * kw;
  const std::size_t plane = h * w;
  std::vector<double> cols(patch * plane, 0.0);
  gemm(true, false, patch, plane, cin, kernel.data().data(), x.data().data(), cols.data(), 0.0);
  std::vector<double> out(cout * g.height * g.width, 0.0);
  col2im(g, cols.data(), out.data());
  return make_op_result(
      "transpose_conv2d", {cout, g.height, g.width}, promote(x.dtype(), kernel.dtype()),
      std::move(out), {x, kernel}, [x, kernel, g, cin, patch, plane](const TensorImpl& self) {
        std::vector<double> gcols(patch * plane);
        im2col(g, self.grad.data(), gcols.data());
        if (x.requires_grad()) {
          std::vector<double> gx(cin * plane, 0.0);
          gemm(false, false, cin, plane, patch, kernel.data().data(), gcols.data(), gx.data(),
               0.0);
          acc(x, gx);
        }
        if (kernel.requires_grad()) {
          std::vector<double> gk(cin * patch, 0.0);
          gemm(false, true, cin, patch, plane, x.data().data(), gcols.data(), gk.data(), 0.0);
          acc(kernel, gk);
        }
      });
}

Tensor avg_pool2d(const Tensor& x, std::size_t factor) {
  require_rank(x, 3, "avg_pool2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (factor == 0 || h % factor != 0 || w % factor != 0) {
    throw ShapeError("avg_pool2d: " + shape_str(x.shape()) + " not divisible by factor " +
                     std::to_string(factor));
  }
  if (factor == 1) return reshape(x, x.shape());
  const std::size_t oh = h / factor, ow = w / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  std::vector<double> out(c * oh * ow, 0.0);
  auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[(ch * oh + i / factor) * ow + j / factor] += xd[(ch * h + i) * w + j] * inv;
  return make_op_result("avg_pool2d", {c, oh, ow}, x.dtype(), std::move(out), {x},
                        [x, c, h, w, oh, ow, factor, inv](const TensorImpl& self) {
                          std::vector<double> gx(x.numel());
                          for (std::size_t ch = 0; ch < c; ++ch)
                            for (std::size_t i = 0; i < h; ++i)
                              for (std::size_t j = 0; j < w; ++j)
                                gx[(ch * h + i) * w + j] =
                                    self.grad[(ch * oh + i / factor) * ow + j / factor] * inv;
                          acc(x, gx);
                        });
}

namespace {

struct BilinearTap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<BilinearTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "resize_bilinear");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == 0 || w == 0 || out_h == 0 || out_w == 0) {
    throw ShapeError("resize_bilinear: empty extent");
  }
  if (h == out_h && w == out_w) return reshape(x, x.shape());
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  std::vector<double> out(c * out_h * out_w);
  auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xd.data() + ch * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& b = tx[j];
        const double top = src[a.i0 * w + b.i0] * (1 - b.w1) + src[a.i0 * w + b.i1] * b.w1;
        const double bot = src[a.i1 * w + b.i0] * (1 - b.w1) + src[a.i1 * w + b.i1] * b.w1;
        out[(ch * out_h + i) * out_w + j] = top * (1 - a.w1) + bot * a.w1;
      }
    }
  }
  return make_op_result("resize_bilinear", {c, out_h, out_w}, x.dtype(), std::move(out), {x},
                        [x, c, h, w, out_h, out_w, ty, tx](const TensorImpl& self) {
                          std::vector<double> gx(x.numel(), 0.0);
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            double* dst = gx.data() + ch * h * w;
                            for (std::size_t i = 0; i < out_h; ++i) {
                              const auto& a = ty[i];
                              for (std::size_t j = 0; j < out_w; ++j) {
                                const auto& b = tx[j];
                                const double g = self.grad[(ch * out_h + i) * out_w + j];
                                dst[a.i0 * w + b.i0] += g * (1 - a.w1) * (1 - b.w1);
                                dst[a.i0 * w + b.i1] += g * (1 - a.w1) * b.w1;
                                dst[a.i1 * w + b.i0] += g * a.w1 * (1 - b.w1);
                                dst[a.i1 * w + b.i1] += g * a.w1 * b.w1;
                              }
                            }
                          }
                          acc(x, gx);
                        });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis);
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -INFINITY;
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, xd[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(xd[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  return make_op_result("softmax", x.shape(), x.dtype(), std::move(out), {x},
                        [x, s](const TensorImpl& self) {
                          std::vector<double> gx(x.numel());
                          const auto& y = self.data;
                          const auto& g = self.grad;
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t i = 0; i < s.inner; ++i) {
                              const std::size_t base = o * s.extent * s.inner + i;
                              double dot = 0.0;
                              for (std::size_t e = 0; e < s.extent; ++e)
                                dot += g[base + e * s.inner] * y[base + e * s.inner];
                              for (std::size_t e = 0; e < s.extent; ++e) {
                                const std::size_t k = base + e * s.inner;
                                gx[k] = y[k] * (g[k] - dot);
                              }
                            }
                          acc(x, gx);
                        });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis);
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -INFINITY;
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, xd[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) z += std::exp(xd[base + e * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t e = 0; e < s.extent; ++e)
        out[base + e * s.inner] = xd[base + e * s.inner] - lse;
    }
  return make_op_result("log_softmax", x.shape(), x.dtype(), std::move(out), {x},
                        [x, s](const TensorImpl& self) {
                          std::vector<double> gx(x.numel());
                          const auto& y = self.data;
                          const auto& g = self.grad;
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t i = 0; i < s.inner; ++i) {
                              const std::size_t base = o * s.extent * s.inner + i;
                              double total = 0.0;
                              for (std::size_t e = 0; e < s.extent; ++e)
                                total += g[base + e * s.inner];
                              for (std::size_t e = 0; e < s.extent; ++e) {
                                const std::size_t k = base + e * s.inner;
                                gx[k] = g[k] - std::exp(y[k]) * total;
                              }
                            }
                          acc(x, gx);
                        });
}

namespace {

// Normalizes `groups` contiguous blocks of `block` values each; gain/shift are
// indexed by channel = (flat index within the whole tensor) / channel_size.
Tensor normalize_blocks(const char* name, const Tensor& x, std::size_t groups, std::size_t block,
                        const Tensor& gamma, const Tensor& beta, double eps,
                        std::size_t channel_size, std::size_t param_stride) {
  // param index for flat k: (k / channel_size) % param_stride
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(groups);
  std::vector<double> out(x.numel());
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t base = gi * block;
    double mu = 0.0;
    for (std::size_t k = 0; k < block; ++k) mu += xd[base + k];
    mu /= static_cast<double>(block);
    double var = 0.0;
    for (std::size_t k = 0; k < block; ++k) {
      const double d = xd[base + k] - mu;
      var += d * d;
    }
    var /= static_cast<double>(block);
    const double r = 1.0 / std::sqrt(var + eps);
    (*rstd)[gi] = r;
    for (std::size_t k = 0; k < block; ++k) {
      const std::size_t flat = base + k;
      const std::size_t p = (flat / channel_size) % param_stride;
      const double xh = (xd[flat] - mu) * r;
      (*xhat)[flat] = xh;
      out[flat] = xh * gd[p] + bd[p];
    }
  }
  DType dtype = promote(x.dtype(), promote(gamma.dtype(), beta.dtype()));
  return make_op_result(
      name, x.shape(), dtype, std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, rstd, groups, block, channel_size,
       param_stride](const TensorImpl& self) {
        const auto& g = self.grad;
        auto gd = gamma.data();
        std::vector<double> ggamma(gamma.numel(), 0.0), gbeta(beta.numel(), 0.0);
        std::vector<double> gx(x.numel());
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t base = gi * block;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t k = 0; k < block; ++k) {
            const std::size_t flat = base + k;
            const std::size_t p = (flat / channel_size) % param_stride;
            const double dxh = g[flat] * gd[p];
            mean_d += dxh;
            mean_dx += dxh * (*xhat)[flat];
            ggamma[p] += g[flat] * (*xhat)[flat];
            gbeta[p] += g[flat];
          }
          mean_d /= static_cast<double>(block);
          mean_dx /= static_cast<double>(block);
          for (std::size_t k = 0; k < block; ++k) {
            const std::size_t flat = base + k;
            const std::size_t p = (flat / channel_size) % param_stride;
            const double dxh = g[flat] * gd[p];
            gx[flat] = (*rstd)[gi] * (dxh - mean_d - (*xhat)[flat] * mean_dx);
          }
        }
        acc(x, gx);
        acc(gamma, ggamma);
        acc(beta, gbeta);
      });
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm of a scalar");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gain/shift length must equal feature width " +
                         std::to_string(d));
  }
  if (d == 0) throw DimensionError("layer_norm over empty features");
  return normalize_blocks("layer_norm", x, x.numel() / d, d, gamma, beta, eps, 1, d);
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_rank(x, 3, "group_norm");
  const std::size_t c = x.dim(0);
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("group_norm: gain/shift length must equal channel count");
  }
  const std::size_t plane = x.dim(1) * x.dim(2);
  return normalize_blocks("group_norm", x, groups, (c / groups) * plane, gamma, beta, eps, plane,
                          c);
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_str(prediction.shape()) +
                         " vs target " + shape_str(target.shape()));
  }
  return mean(square(sub(prediction, target)));
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     std::size_t ignore_index) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  if (targets.size() != n) {
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(n) + " rows");
  }
  std::vector<std::size_t> tv(targets.begin(), targets.end());
  auto lsm = std::make_shared<std::vector<double>>(n * m);
  auto xd = logits.data();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xd.data() + r * m;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) (*lsm)[r * m + j] = row[j] - lse;
    if (tv[r] == ignore_index) continue;
    if (tv[r] >= m) throw IndexError("cross_entropy: target id out of range");
    total -= (*lsm)[r * m + tv[r]];
    ++count;
  }
  const double denom = count ? static_cast<double>(count) : 1.0;
  return make_op_result("cross_entropy", {}, logits.dtype(), {total / denom}, {logits},
                        [logits, tv, lsm, n, m, ignore_index, denom](const TensorImpl& self) {
                          std::vector<double> gx(n * m, 0.0);
                          const double g = self.grad[0] / denom;
                          for (std::size_t r = 0; r < n; ++r) {
                            if (tv[r] == ignore_index) continue;
                            for (std::size_t j = 0; j < m; ++j)
                              gx[r * m + j] = g * std::exp((*lsm)[r * m + j]);
                            gx[r * m + tv[r]] -= g;
                          }
                          acc(logits, gx);
                        });
}

}  // namespace maskapprox
