#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "jcae/autodiff.hpp"
#include "jcae/kernels.hpp"
#include "jcae/tensor.hpp"

namespace jcae {

/// Weights and SSIM constants of the reconstruction objective.
struct LossConfig {
  double lambda = 100.0;
  std::size_t ssim_window = 11;
  double ssim_sigma = 1.5;
  double dynamic_range = 1.0;

  double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
  double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValueError("loss: lambda must be >= 0");
    if (ssim_window == 0 || ssim_window % 2 == 0) throw ValueError("loss: ssim window must be odd");
    if (!(ssim_sigma > 0.0)) throw ValueError("loss: ssim sigma must be positive");
  }
};

namespace detail {

/// Normalized 1-D Gaussian of odd length `size`.
inline std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  std::vector<double> k(size);
  const double center = static_cast<double>(size - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - center;
    k[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

/// Window actually used for an h x w image: the configured size, or the
/// largest odd size that fits when the image is smaller (with a warning).
inline std::size_t effective_window(std::size_t h, std::size_t w, const LossConfig& cfg,
                                    bool emit_warning = true) {
  std::size_t size = std::min({cfg.ssim_window, h, w});
  if (size % 2 == 0) --size;
  if (size == 0) throw ShapeError("ssim: image is empty");
  if (size < cfg.ssim_window && emit_warning) {
    warn("ssim: " + std::to_string(h) + "x" + std::to_string(w) + " image is smaller than the " +
         std::to_string(cfg.ssim_window) + "x" + std::to_string(cfg.ssim_window) +
         " window; using a cropped " + std::to_string(size) + "x" + std::to_string(size) +
         " window");
  }
  return size;
}

/// Mean SSIM of one plane over the valid window positions. When grad_x /
/// grad_y are non-null they receive d(mean)/dx and d(mean)/dy scaled by
/// `upstream`.
inline double ssim_plane(const double* x, const double* y, std::size_t h, std::size_t w,
                         const std::vector<double>& kernel, double c1, double c2,
                         double upstream = 0.0, double* grad_x = nullptr,
                         double* grad_y = nullptr) {
  const std::size_t k = kernel.size();
  const std::size_t oh = h - k + 1, ow = w - k + 1, count = oh * ow;
  const std::size_t n = h * w;
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  std::vector<double> mx(count), my(count), exx(count), eyy(count), exy(count);
  kernels::filter_valid_separable(x, h, w, kernel, mx.data());
  kernels::filter_valid_separable(y, h, w, kernel, my.data());
  kernels::filter_valid_separable(xx.data(), h, w, kernel, exx.data());
  kernels::filter_valid_separable(yy.data(), h, w, kernel, eyy.data());
  kernels::filter_valid_separable(xy.data(), h, w, kernel, exy.data());

  const bool want_grad = grad_x || grad_y;
  std::vector<double> g_mx, g_my, g_exx, g_eyy, g_exy;
  if (want_grad) {
    g_mx.resize(count);
    g_my.resize(count);
    g_exx.resize(count);
    g_eyy.resize(count);
    g_exy.resize(count);
  }
  double total = 0.0;
  const double scale = upstream / static_cast<double>(count);
  for (std::size_t p = 0; p < count; ++p) {
    const double ux = mx[p], uy = my[p];
    const double a1 = 2.0 * ux * uy + c1;
    const double a2 = 2.0 * (exy[p] - ux * uy) + c2;
    const double b1 = ux * ux + uy * uy + c1;
    const double b2 = (exx[p] - ux * ux) + (eyy[p] - uy * uy) + c2;
    const double s = (a1 * a2) / (b1 * b2);
    total += s;
    if (want_grad) {
      const double gs = scale * s;
      g_mx[p] = gs * (2.0 * uy / a1 - 2.0 * uy / a2 - 2.0 * ux / b1 + 2.0 * ux / b2);
      g_my[p] = gs * (2.0 * ux / a1 - 2.0 * ux / a2 - 2.0 * uy / b1 + 2.0 * uy / b2);
      g_exx[p] = -gs / b2;
      g_eyy[p] = -gs / b2;
      g_exy[p] = 2.0 * gs / a2;
    }
  }
  if (want_grad) {
    std::vector<double> back_m(n), back_sq(n), back_xy(n);
    kernels::filter_valid_separable_adjoint(g_exy.data(), h, w, kernel, back_xy.data());
    if (grad_x) {
      kernels::filter_valid_separable_adjoint(g_mx.data(), h, w, kernel, back_m.data());
      kernels::filter_valid_separable_adjoint(g_exx.data(), h, w, kernel, back_sq.data());
      for (std::size_t i = 0; i < n; ++i)
        grad_x[i] = back_m[i] + 2.0 * x[i] * back_sq[i] + y[i] * back_xy[i];
    }
    if (grad_y) {
      kernels::filter_valid_separable_adjoint(g_my.data(), h, w, kernel, back_m.data());
      kernels::filter_valid_separable_adjoint(g_eyy.data(), h, w, kernel, back_sq.data());
      for (std::size_t i = 0; i < n; ++i)
        grad_y[i] = back_m[i] + 2.0 * y[i] * back_sq[i] + x[i] * back_xy[i];
    }
  }
  return total / static_cast<double>(count);
}

/// Splits a rank-2 (H,W) or rank-4 (N,C,H,W) shape into planes.
inline void plane_layout(const Shape& s, std::size_t& planes, std::size_t& h, std::size_t& w,
                         const char* op) {
  if (s.size() == 2) {
    planes = 1;
    h = s[0];
    w = s[1];
  } else if (s.size() == 4) {
    planes = s[0] * s[1];
    h = s[2];
    w = s[3];
  } else {
    throw ShapeError(std::string(op) + ": expected (H,W) or (N,C,H,W), got " + shape_str(s));
  }
  if (h == 0 || w == 0) throw ShapeError(std::string(op) + ": empty image " + shape_str(s));
}

}  // namespace detail

/// Mean of squared differences over every element.
template <class T>
double mse_loss(const Tensor<T>& output, const Tensor<T>& input) {
  ops::detail::require_same_shape(output.shape(), input.shape(), "mse_loss");
  if (output.empty()) throw ShapeError("mse_loss: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double d = static_cast<double>(input[i]) - static_cast<double>(output[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(output.size());
}

/// Mean local SSIM; for batched tensors the per-plane values are averaged.
template <class T>
double ssim(const Tensor<T>& x, const Tensor<T>& y, const LossConfig& cfg = {}) {
  ops::detail::require_same_shape(x.shape(), y.shape(), "ssim");
  std::size_t planes = 0, h = 0, w = 0;
  detail::plane_layout(x.shape(), planes, h, w, "ssim");
  const auto kernel = detail::gaussian_kernel(detail::effective_window(h, w, cfg), cfg.ssim_sigma);
  std::vector<double> px(h * w), py(h * w);
  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < h * w; ++i) {
      px[i] = static_cast<double>(x[p * h * w + i]);
      py[i] = static_cast<double>(y[p * h * w + i]);
    }
    total += detail::ssim_plane(px.data(), py.data(), h, w, kernel, cfg.c1(), cfg.c2());
  }
  return total / static_cast<double>(planes);
}

namespace ops {

/// Differentiable mean squared error; result shape (1).
template <class T>
Var<T> mse_loss(Var<T> output, Var<T> input) {
  detail::same_tape(output, input, "mse_loss");
  Tape<T>& tape = *output.tape;
  const double value = jcae::mse_loss(output.value(), input.value());
  const bool rg = tape.requires_grad(output) || tape.requires_grad(input);
  return tape.push(Tensor<T>(Shape{1}, static_cast<T>(value)), rg,
                   [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
                     const auto& o = t.value(output);
                     const auto& i = t.value(input);
                     const double c = 2.0 * static_cast<double>(g[0]) / static_cast<double>(o.size());
                     if (t.requires_grad(output)) {
                       auto d = t.grad_buffer(output);
                       for (std::size_t k = 0; k < d.size(); ++k)
                         d[k] += static_cast<T>(c * (static_cast<double>(o[k]) - static_cast<double>(i[k])));
                     }
                     if (t.requires_grad(input)) {
                       auto d = t.grad_buffer(input);
                       for (std::size_t k = 0; k < d.size(); ++k)
                         d[k] += static_cast<T>(c * (static_cast<double>(i[k]) - static_cast<double>(o[k])));
                     }
                   });
}

/// Differentiable mean SSIM; result shape (1).
template <class T>
Var<T> ssim(Var<T> x, Var<T> y, const LossConfig& cfg = {}) {
  detail::same_tape(x, y, "ssim");
  Tape<T>& tape = *x.tape;
  const double value = jcae::ssim(x.value(), y.value(), cfg);
  const bool rg = tape.requires_grad(x) || tape.requires_grad(y);
  return tape.push(
      Tensor<T>(Shape{1}, static_cast<T>(value)), rg,
      [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
        const auto& xv = t.value(x);
        const auto& yv = t.value(y);
        std::size_t planes = 0, h = 0, w = 0;
        jcae::detail::plane_layout(xv.shape(), planes, h, w, "ssim");
        const auto kernel = jcae::detail::gaussian_kernel(
            jcae::detail::effective_window(h, w, cfg, false), cfg.ssim_sigma);
        const std::size_t n = h * w;
        std::vector<double> px(n), py(n), gx(n), gy(n);
        const bool need_x = t.requires_grad(x), need_y = t.requires_grad(y);
        const double upstream = static_cast<double>(g[0]) / static_cast<double>(planes);
        for (std::size_t p = 0; p < planes; ++p) {
          for (std::size_t i = 0; i < n; ++i) {
            px[i] = static_cast<double>(xv[p * n + i]);
            py[i] = static_cast<double>(yv[p * n + i]);
          }
          jcae::detail::ssim_plane(px.data(), py.data(), h, w, kernel, cfg.c1(), cfg.c2(), upstream,
                                   need_x ? gx.data() : nullptr, need_y ? gy.data() : nullptr);
          if (need_x) {
            auto d = t.grad_buffer(x);
            for (std::size_t i = 0; i < n; ++i) d[p * n + i] += static_cast<T>(gx[i]);
          }
          if (need_y) {
            auto d = t.grad_buffer(y);
            for (std::size_t i = 0; i < n; ++i) d[p * n + i] += static_cast<T>(gy[i]);
          }
        }
      });
}

/// 1 - SSIM(output, input).
template <class T>
Var<T> ssim_loss(Var<T> output, Var<T> input, const LossConfig& cfg = {}) {
  Tape<T>& tape = *output.tape;
  return add(tape.constant(Tensor<T>(Shape{1}, T{1})), scale(ssim(output, input, cfg), -1.0));
}

}  // namespace ops

template <class T>
double ssim_loss(const Tensor<T>& output, const Tensor<T>& input, const LossConfig& cfg = {}) {
  return 1.0 - ssim(output, input, cfg);
}

/// Optimized objective plus its logged components.
template <class T>
struct LossTerms {
  Var<T> total;
  /// Sum over both images of the mean squared error.
  double mse = 0.0;
  /// Sum over both images of (1 - SSIM), before lambda weighting.
  double ssim = 0.0;
};

/// Sum over both images of mse + lambda * (1 - ssim). With lambda == 0 the
/// SSIM terms are still evaluated for logging but kept out of the graph.
template <class T>
LossTerms<T> combined_loss(Var<T> recon_a, Var<T> a, Var<T> recon_b, Var<T> b,
                           const LossConfig& cfg = {}) {
  cfg.validate();
  LossTerms<T> terms;
  Var<T> mse_a = ops::mse_loss(recon_a, a);
  Var<T> mse_b = ops::mse_loss(recon_b, b);
  Var<T> total = ops::add(mse_a, mse_b);
  terms.mse = static_cast<double>(mse_a.value()[0]) + static_cast<double>(mse_b.value()[0]);
  if (cfg.lambda > 0.0) {
    Var<T> ssim_a = ops::ssim_loss(recon_a, a, cfg);
    Var<T> ssim_b = ops::ssim_loss(recon_b, b, cfg);
    terms.ssim = static_cast<double>(ssim_a.value()[0]) + static_cast<double>(ssim_b.value()[0]);
    total = ops::add(total, ops::scale(ops::add(ssim_a, ssim_b), cfg.lambda));
  } else {
    terms.ssim = ssim_loss(recon_a.value(), a.value(), cfg) + ssim_loss(recon_b.value(), b.value(), cfg);
  }
  terms.total = total;
  return terms;
}

}  // namespace jcae
