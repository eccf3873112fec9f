#pragma once

// Straight-line reference implementations used only by tests. They share no
// code with the library beyond the Tensor and Image containers.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "jcae/image_io.hpp"
#include "jcae/tensor.hpp"

namespace jcae::oracle {

/// Direct 3x3 same-padded convolution, double accumulation.
template <class T>
std::vector<double> conv3x3(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b) {
  const std::size_t n = x.extent(0), ci = x.extent(1), h = x.extent(2), w = x.extent(3), co = k.extent(0);
  std::vector<double> out(n * co * h * w, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          double acc = static_cast<double>(b[o]);
          for (std::size_t c = 0; c < ci; ++c)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(xx) + dx;
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
                acc += static_cast<double>(k[((o * ci + c) * 3 + static_cast<std::size_t>(dy + 1)) * 3 +
                                             static_cast<std::size_t>(dx + 1)]) *
                       static_cast<double>(x.at(s, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)));
              }
          out[((s * co + o) * h + y) * w + xx] = acc;
        }
  return out;
}

/// Elementwise max with ties on the first argument, by explicit triple loop.
template <class T>
Tensor<T> fuse_private(const Tensor<T>& fa, const Tensor<T>& fb) {
  const std::size_t maps = fa.extent(fa.rank() - 3), h = fa.extent(fa.rank() - 2), w = fa.extent(fa.rank() - 1);
  Tensor<T> out(fa.shape());
  for (std::size_t m = 0; m < maps; ++m)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = (m * h + y) * w + x;
        if (fa[i] >= fb[i]) {
          out[i] = fa[i];
        } else {
          out[i] = fb[i];
        }
      }
  return out;
}

/// Gated common-feature fusion written from the rule text.
template <class T>
Tensor<T> fuse_common(const Tensor<T>& fa, const Tensor<T>& fb) {
  const std::size_t maps = fa.extent(fa.rank() - 3), h = fa.extent(fa.rank() - 2), w = fa.extent(fa.rank() - 1);
  const double threshold = static_cast<double>(h) * static_cast<double>(w) * 3.0 / 5.0;
  Tensor<T> out(fa.shape());
  for (std::size_t m = 0; m < maps; ++m) {
    std::size_t count_a = 0, count_b = 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (fa[(m * h + y) * w + x] != T{0}) ++count_a;
        if (fb[(m * h + y) * w + x] != T{0}) ++count_b;
      }
    const bool choose_max = static_cast<double>(std::min(count_a, count_b)) < threshold;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = (m * h + y) * w + x;
        if (choose_max) {
          out[i] = fa[i] >= fb[i] ? fa[i] : fb[i];
          continue;
        }
        double ca = 0.0, cb = 0.0;
        for (std::size_t k = 0; k < maps; ++k) {
          ca += static_cast<double>(fa[(k * h + y) * w + x]);
          cb += static_cast<double>(fb[(k * h + y) * w + x]);
        }
        double w1 = 0.5, w2 = 0.5;
        if (ca + cb != 0.0) {
          w1 = ca / (ca + cb);
          w2 = cb / (ca + cb);
        }
        out[i] = static_cast<T>(w1 * static_cast<double>(fa[i]) + w2 * static_cast<double>(fb[i]));
      }
  }
  return out;
}

inline std::vector<double> gaussian_1d(int radius, double sigma) {
  std::vector<double> g;
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    g.push_back(std::exp(-(i * i) / (2.0 * sigma * sigma)));
    total += g.back();
  }
  for (double& v : g) v /= total;
  return g;
}

/// Mean SSIM over valid window positions, with direct 2-D window sums.
inline double ssim(const std::vector<double>& x, const std::vector<double>& y, std::size_t h, std::size_t w,
                   int window = 11, double sigma = 1.5) {
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int r = window / 2;
  const auto g = gaussian_1d(r, sigma);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t py = 0; py + static_cast<std::size_t>(window) <= h; ++py)
    for (std::size_t px = 0; px + static_cast<std::size_t>(window) <= w; ++px) {
      double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
      for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
          const double wt = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
          const double a = x[(py + static_cast<std::size_t>(i)) * w + px + static_cast<std::size_t>(j)];
          const double b = y[(py + static_cast<std::size_t>(i)) * w + px + static_cast<std::size_t>(j)];
          mx += wt * a;
          my += wt * b;
          exx += wt * a * a;
          eyy += wt * b * b;
          exy += wt * a * b;
        }
      const double vx = exx - mx * mx, vy = eyy - my * my, cxy = exy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

inline int level(double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline double mutual_information(const Image& a, const Image& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{level(a.pixels[i]), level(b.pixels[i])}] += 1;
    pa[level(a.pixels[i])] += 1;
    pb[level(b.pixels[i])] += 1;
  }
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    const double pxy = c / n;
    mi += pxy * std::log2(pxy / ((pa[key.first] / n) * (pb[key.second] / n)));
  }
  return mi;
}

inline double entropy(const Image& a) {
  std::map<int, double> p;
  for (double v : a.pixels) p[level(v)] += 1;
  double h = 0.0;
  for (const auto& [unused, c] : p) {
    const double q = c / static_cast<double>(a.size());
    h -= q * std::log2(q);
  }
  return h;
}

inline double correlation(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline std::vector<double> minus(const Image& a, const Image& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a.pixels[i] - b.pixels[i];
  return d;
}

inline double qcv_single(const Image& src, const Image& fused) {
  const long h = static_cast<long>(src.height), w = static_cast<long>(src.width);
  const auto px = [&](const std::vector<double>& v, long y, long x) {
    y = std::clamp(y, 0L, h - 1);
    x = std::clamp(x, 0L, w - 1);
    return v[static_cast<std::size_t>(y * w + x)];
  };
  std::vector<double> s(src.size()), d(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    s[i] = 255.0 * src.pixels[i];
    d[i] = 255.0 * (src.pixels[i] - fused.pixels[i]);
  }
  const int sx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const auto g = gaussian_1d(6, 2.0);
  std::vector<double> sal(src.size()), dist(src.size());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double gx = 0, gy = 0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          gx += sx[i][j] * px(s, y + i - 1, x + j - 1);
          gy += sx[j][i] * px(s, y + i - 1, x + j - 1);
        }
      sal[static_cast<std::size_t>(y * w + x)] = gx * gx + gy * gy;
      double acc = 0;
      for (int i = -6; i <= 6; ++i)
        for (int j = -6; j <= 6; ++j)
          acc += g[static_cast<std::size_t>(i + 6)] * g[static_cast<std::size_t>(j + 6)] * px(d, y + i, x + j);
      dist[static_cast<std::size_t>(y * w + x)] = acc;
    }
  double num = 0, den = 0, plain = 0;
  int regions = 0;
  for (long y0 = 0; y0 < h; y0 += 16)
    for (long x0 = 0; x0 < w; x0 += 16) {
      double lam = 0, dd = 0;
      int cnt = 0;
      for (long y = y0; y < std::min(h, y0 + 16); ++y)
        for (long x = x0; x < std::min(w, x0 + 16); ++x) {
          lam += sal[static_cast<std::size_t>(y * w + x)];
          dd += dist[static_cast<std::size_t>(y * w + x)] * dist[static_cast<std::size_t>(y * w + x)];
          ++cnt;
        }
      dd /= cnt;
      num += lam * dd;
      den += lam;
      plain += dd;
      ++regions;
    }
  return den > 0 ? num / den : plain / regions;
}

/// P(|T| >= t) for integer degrees of freedom from the closed-form
/// trigonometric series of the Student t distribution.
inline double student_t_two_sided(double t, int df) {
  const double theta = std::atan(std::abs(t) / std::sqrt(static_cast<double>(df)));
  const double c2 = std::cos(theta) * std::cos(theta);
  double a;
  if (df % 2 == 1) {
    double series = 0.0;
    if (df > 1) {
      double term = 1.0;
      series = 1.0;
      for (int k = 2; k <= df - 3; k += 2) {
        term *= c2 * k / (k + 1.0);
        series += term;
      }
    }
    a = 2.0 / std::numbers::pi * (theta + std::sin(theta) * std::cos(theta) * series);
  } else {
    double term = 1.0, series = 1.0;
    for (int k = 1; k <= df - 3; k += 2) {
      term *= c2 * k / (k + 1.0);
      series += term;
    }
    a = std::sin(theta) * series;
  }
  return 1.0 - a;
}

}  // namespace jcae::oracle
