// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/fgcf.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

#include "maskapprox/error.hpp"
#include "maskapprox/ops.hpp"

namespace maskapprox {

namespace {

using cd = std::complex<double>;

// Plans and aligned buffers for one H x W grid. FFTW planning is not
// thread-safe, so every transform runs under the cache mutex.
struct Workspace {
  std::size_t h, w, wh;
  double* real = nullptr;
  fftw_complex* half = nullptr;
  fftw_complex* full_in = nullptr;
  fftw_complex* full_out = nullptr;
  fftw_plan r2c = nullptr;
  fftw_plan c2c_inv = nullptr;

  Workspace(std::size_t h_, std::size_t w_) : h(h_), w(w_), wh(w_ / 2 + 1) {
    real = fftw_alloc_real(h * w);
    half = fftw_alloc_complex(h * wh);
    full_in = fftw_alloc_complex(h * w);
    full_out = fftw_alloc_complex(h * w);
    const int hi = static_cast<int>(h), wi = static_cast<int>(w);
    r2c = fftw_plan_dft_r2c_2d(hi, wi, real, half, FFTW_ESTIMATE);
    c2c_inv = fftw_plan_dft_2d(hi, wi, full_in, full_out, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~Workspace() {
    fftw_destroy_plan(r2c);
    fftw_destroy_plan(c2c_inv);
    fftw_free(real);
    fftw_free(half);
    fftw_free(full_in);
    fftw_free(full_out);
  }
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  // Half-spectrum column multiplicity: 1 for self-conjugate columns, else 2.
  double column_weight(std::size_t l) const {
    return (l == 0 || (w % 2 == 0 && l == w / 2)) ? 1.0 : 2.0;
  }

  void forward(const double* x, cd* out) {
    std::copy(x, x + h * w, real);
    fftw_execute(r2c);
    for (std::size_t i = 0; i < h * wh; ++i) out[i] = cd(half[i][0], half[i][1]);
  }

  // out[n] = scale * Re(sum over half bins of m_l * Y[k,l] * e^{+i theta}),
  // with m_l the column weight when `weighted`, else 1.
  void synthesize(const cd* y, bool weighted, double scale, double* out) {
    for (std::size_t i = 0; i < h * w; ++i) full_in[i][0] = full_in[i][1] = 0.0;
    for (std::size_t k = 0; k < h; ++k)
      for (std::size_t l = 0; l < wh; ++l) {
        const cd v = y[k * wh + l] * (weighted ? column_weight(l) : 1.0);
        full_in[k * w + l][0] = v.real();
        full_in[k * w + l][1] = v.imag();
      }
    fftw_execute(c2c_inv);
    for (std::size_t i = 0; i < h * w; ++i) out[i] = full_out[i][0] * scale;
  }
};

std::mutex& cache_mutex() {
  static std::mutex m;
  return m;
}

Workspace& workspace(std::size_t h, std::size_t w) {
  static std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<Workspace>> cache;
  auto& slot = cache[{h, w}];
  if (!slot) slot = std::make_unique<Workspace>(h, w);
  return *slot;
}

void require_chw(const char* op, const Tensor& x) {
  if (x.rank() != 3 || x.numel() == 0) {
    throw DimensionError(std::string(op) + ": expected non-empty C x H x W, got " +
                         shape_str(x.shape()));
  }
}

}  // namespace

Spectrum dft_channels(const Tensor& x) {
  require_chw("dft_channels", x);
  Spectrum s;
  s.channels = x.dim(0);
  s.height = x.dim(1);
  s.width = x.dim(2);
  const std::size_t plane = s.height * s.width, hplane = s.height * s.half_width();
  s.bins.resize(s.channels * hplane);
  std::lock_guard lock(cache_mutex());
  auto& ws = workspace(s.height, s.width);
  for (std::size_t c = 0; c < s.channels; ++c)
    ws.forward(x.data().data() + c * plane, s.bins.data() + c * hplane);
  return s;
}

Tensor idft_channels(const Spectrum& xhat) {
  const std::size_t plane = xhat.height * xhat.width, hplane = xhat.height * xhat.half_width();
  if (xhat.bins.size() != xhat.channels * hplane || plane == 0) {
    throw DimensionError("idft_channels: spectrum size does not match its header");
  }
  std::vector<double> out(xhat.channels * plane);
  std::lock_guard lock(cache_mutex());
  auto& ws = workspace(xhat.height, xhat.width);
  for (std::size_t c = 0; c < xhat.channels; ++c)
    ws.synthesize(xhat.bins.data() + c * hplane, true, 1.0 / static_cast<double>(plane),
                  out.data() + c * plane);
  return Tensor::from({xhat.channels, xhat.height, xhat.width}, std::move(out));
}

Tensor spectral_weights(const Tensor& filter, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("fgcf alpha must be positive");
  return exp(scale(square(filter), -alpha));
}

Spectrum weight_spectrum(const Spectrum& xhat, const Tensor& weights) {
  const Shape expect{xhat.channels, xhat.height, xhat.half_width()};
  if (weights.shape() != expect) {
    throw DimensionError("weight_spectrum: weights " + shape_str(weights.shape()) +
                         " do not match spectrum grid " + shape_str(expect));
  }
  Spectrum out = xhat;
  auto w = weights.data();
  for (std::size_t i = 0; i < out.bins.size(); ++i) out.bins[i] *= w[i];
  return out;
}

Tensor spectral_filter(const Tensor& x, const Tensor& weights) {
  require_chw("spectral_filter", x);
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), Wh = W / 2 + 1;
  if (weights.shape() != Shape{C, H, Wh}) {
    throw DimensionError("spectral_filter: weights " + shape_str(weights.shape()) +
                         " do not match half spectrum " + shape_str({C, H, Wh}));
  }
  auto spectrum = std::make_shared<Spectrum>(dft_channels(x));
  Tensor y = idft_channels(weight_spectrum(*spectrum, weights));
  std::vector<double> out(y.data().begin(), y.data().end());
  return make_op_result(
      "spectral_filter", x.shape(), promote(x.dtype(), weights.dtype()), std::move(out),
      {x, weights}, [x, weights, spectrum, C, H, W, Wh](const TensorImpl& self) {
        const std::size_t plane = H * W, hplane = H * Wh;
        std::vector<cd> g(C * hplane);
        std::vector<double> gw(C * hplane), gx(C * plane);
        auto wd = weights.data();
        std::lock_guard lock(cache_mutex());
        auto& ws = workspace(H, W);
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t c = 0; c < C; ++c) {
          cd* gc = g.data() + c * hplane;
          ws.forward(self.grad.data() + c * plane, gc);
          for (std::size_t k = 0; k < H; ++k)
            for (std::size_t l = 0; l < Wh; ++l) {
              const std::size_t i = k * Wh + l;
              gc[i] *= ws.column_weight(l) * inv;
              const cd xv = spectrum->bins[c * hplane + i];
              gw[c * hplane + i] = gc[i].real() * xv.real() + gc[i].imag() * xv.imag();
              gc[i] *= wd[c * hplane + i];
            }
          ws.synthesize(gc, false, 1.0, gx.data() + c * plane);
        }
        if (x.requires_grad()) x.impl()->accumulate_grad(gx);
        if (weights.requires_grad()) weights.impl()->accumulate_grad(gw);
      });
}

Tensor channel_attention(const Tensor& xprime, const Tensor& attn_weight,
                         const Tensor& attn_bias) {
  require_chw("channel_attention", xprime);
  const std::size_t C = xprime.dim(0);
  if (attn_weight.shape() != Shape{C, C} || attn_bias.shape() != Shape{C}) {
    throw DimensionError("channel_attention: " + std::to_string(C) + " channels but W_a " +
                         shape_str(attn_weight.shape()) + ", b_a " +
                         shape_str(attn_bias.shape()));
  }
  Tensor gap = mean_axis(reshape(xprime, {C, xprime.dim(1) * xprime.dim(2)}), 1);
  Tensor logits = add(reshape(matmul(attn_weight, reshape(gap, {C, 1})), {C}), attn_bias);
  return sigmoid(logits);
}

FuseMode fuse_mode_from_name(const std::string& name) {
  if (name == "sum_collapse") return FuseMode::sum_collapse;
  if (name == "per_channel") return FuseMode::per_channel;
  throw ConfigError("unknown fuse mode '" + name + "' (expected sum_collapse or per_channel)");
}

std::string fuse_mode_name(FuseMode mode) {
  return mode == FuseMode::sum_collapse ? "sum_collapse" : "per_channel";
}

Tensor fuse(const Tensor& xprime, const Tensor& attention, FuseMode mode) {
  require_chw("fuse", xprime);
  const std::size_t C = xprime.dim(0);
  if (attention.shape() != Shape{C}) {
    throw DimensionError("fuse: attention " + shape_str(attention.shape()) + " for " +
                         std::to_string(C) + " channels");
  }
  Tensor weighted = scale_along(xprime, attention, 0);
  if (mode == FuseMode::per_channel) return weighted;
  Tensor total = scale(mean_axis(weighted, 0), static_cast<double>(C));
  return reshape(total, {1, xprime.dim(1), xprime.dim(2)});
}

FgcfParams FgcfParams::create(ParameterSet& params, const std::string& name,
                              std::size_t channels, std::size_t height, std::size_t width,
                              double alpha, Rng& rng, DType dtype) {
  if (!(alpha > 0.0)) throw ConfigError("fgcf alpha must be positive");
  FgcfParams p;
  p.alpha = alpha;
  // A zero filter has zero gradient, so start slightly off it.
  p.filter = params.add(name + ".filter",
                        Tensor::randn({channels, height, width / 2 + 1}, rng, 0.1, dtype));
  p.attn_weight = params.add(name + ".attn_weight", init_normal({channels, channels}, channels,
                                                                rng, dtype));
  p.attn_bias = params.add(name + ".attn_bias", Tensor::zeros({channels}, dtype));
  return p;
}

nlohmann::json FgcfParams::filter_json() const {
  const std::size_t C = filter.dim(0), H = filter.dim(1), Wh = filter.dim(2);
  Tensor weights;
  {
    NoGradGuard no_grad;
    weights = spectral_weights(filter, alpha);
  }
  auto grid = [&](const Tensor& t) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t c = 0; c < C; ++c) {
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t k = 0; k < H; ++k) {
        auto begin = t.data().begin() + static_cast<long>((c * H + k) * Wh);
        rows.push_back(std::vector<double>(begin, begin + static_cast<long>(Wh)));
      }
      out.push_back(std::move(rows));
    }
    return out;
  };
  return {{"channels", C},        {"height", H},
          {"half_width", Wh},     {"alpha", alpha},
          {"filter", grid(filter)}, {"weights", grid(weights)}};
}

Tensor fgcf_apply(const Tensor& x, const FgcfParams& params, FuseMode mode) {
  Tensor xprime = spectral_filter(x, spectral_weights(params.filter, params.alpha));
  Tensor attention = channel_attention(xprime, params.attn_weight, params.attn_bias);
  return fuse(xprime, attention, mode);
}

}  // namespace maskapprox
