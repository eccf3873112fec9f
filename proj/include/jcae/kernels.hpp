#pragma once

// Low-level loops behind the differentiable ops. Every reduction runs in a
// fixed order with 64-bit accumulators, so results are bit-reproducible.

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace jcae::kernels {

inline constexpr std::size_t kPanelCols = 32;
inline constexpr std::size_t kPanelRows = 6;

namespace detail {

/// Copies columns [n0, n0 + 32) of the k x n matrix B into a k x 32 double
/// panel, zero-filling past the last column.
template <class T>
void pack_panel(const T* b, std::size_t k, std::size_t n, std::size_t n0, double* panel) {
  const std::size_t nt = std::min(kPanelCols, n - n0);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* src = b + kk * n + n0;
    double* dst = panel + kk * kPanelCols;
    for (std::size_t p = 0; p < nt; ++p) dst[p] = static_cast<double>(src[p]);
    for (std::size_t p = nt; p < kPanelCols; ++p) dst[p] = 0.0;
  }
}

/// R rows of A times one packed panel. acc[r][p] starts at the row's bias and
/// takes one fused multiply-add per k, in increasing k.
template <std::size_t R, class T>
void panel_kernel(const T* a, std::size_t k, const double* panel, const double* init,
                  double (*acc)[kPanelCols]) {
#if defined(__AVX512F__)
  __m512d c[R][4];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t q = 0; q < 4; ++q) c[r][q] = _mm512_set1_pd(init[r]);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* bp = panel + kk * kPanelCols;
    const __m512d b0 = _mm512_loadu_pd(bp), b1 = _mm512_loadu_pd(bp + 8);
    const __m512d b2 = _mm512_loadu_pd(bp + 16), b3 = _mm512_loadu_pd(bp + 24);
    for (std::size_t r = 0; r < R; ++r) {
      const __m512d w = _mm512_set1_pd(static_cast<double>(a[r * k + kk]));
      c[r][0] = _mm512_fmadd_pd(w, b0, c[r][0]);
      c[r][1] = _mm512_fmadd_pd(w, b1, c[r][1]);
      c[r][2] = _mm512_fmadd_pd(w, b2, c[r][2]);
      c[r][3] = _mm512_fmadd_pd(w, b3, c[r][3]);
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t q = 0; q < 4; ++q) _mm512_storeu_pd(acc[r] + 8 * q, c[r][q]);
#else
  for (std::size_t r = 0; r < R; ++r) std::fill_n(acc[r], kPanelCols, init[r]);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* bp = panel + kk * kPanelCols;
    for (std::size_t r = 0; r < R; ++r) {
      const double w = static_cast<double>(a[r * k + kk]);
      for (std::size_t p = 0; p < kPanelCols; ++p) acc[r][p] = std::fma(w, bp[p], acc[r][p]);
    }
  }
#endif
}

template <class T>
void panel_rows(std::size_t rows, const T* a, std::size_t k, const double* panel, const double* init,
                double (*acc)[kPanelCols]) {
  switch (rows) {
    case 6: return panel_kernel<6>(a, k, panel, init, acc);
    case 5: return panel_kernel<5>(a, k, panel, init, acc);
    case 4: return panel_kernel<4>(a, k, panel, init, acc);
    case 3: return panel_kernel<3>(a, k, panel, init, acc);
    case 2: return panel_kernel<2>(a, k, panel, init, acc);
    default: return panel_kernel<1>(a, k, panel, init, acc);
  }
}

}  // namespace detail

/// C[m][n] = bias[m] + sum_k A[m][k] * B[k][n]; A is m x k, B is k x n, all
/// row-major. Each output is one double-precision fused multiply-add chain in
/// increasing k, so results are identical with or without AVX-512.
template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          const T* bias = nullptr) {
  std::vector<double> panel(k * kPanelCols);
  double acc[kPanelRows][kPanelCols];
  double init[kPanelRows];
  for (std::size_t n0 = 0; n0 < n; n0 += kPanelCols) {
    const std::size_t nt = std::min(kPanelCols, n - n0);
    detail::pack_panel(b, k, n, n0, panel.data());
    for (std::size_t m0 = 0; m0 < m; m0 += kPanelRows) {
      const std::size_t rows = std::min(kPanelRows, m - m0);
      for (std::size_t r = 0; r < rows; ++r) init[r] = bias ? static_cast<double>(bias[m0 + r]) : 0.0;
      detail::panel_rows(rows, a + m0 * k, k, panel.data(), init, acc);
      for (std::size_t r = 0; r < rows; ++r) {
        T* crow = c + (m0 + r) * n + n0;
        for (std::size_t p = 0; p < nt; ++p) crow[p] = static_cast<T>(acc[r][p]);
      }
    }
  }
}

/// Unfolds one C x H x W image into a (C*9) x (H*W) patch matrix for a 3x3,
/// stride-1, zero-padded-by-one convolution.
template <class T>
void im2col3x3(const T* img, std::size_t channels, std::size_t h, std::size_t w, T* col) {
  const std::size_t plane = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = img + c * plane;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* dst = col + ((c * 3 + ky) * 3 + kx) * plane;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          T* drow = dst + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill_n(drow, w, T{0});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            drow[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w))
                          ? T{0}
                          : srow[static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
}

/// Same patches, laid out (H*W) x (C*9).
template <class T>
void im2col3x3_transposed(const T* img, std::size_t channels, std::size_t h, std::size_t w,
                          T* colt) {
  const std::size_t kdim = channels * 9;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      T* row = colt + (y * w + x) * kdim;
      for (std::size_t c = 0; c < channels; ++c) {
        const T* src = img + c * h * w;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
                                sx < static_cast<std::ptrdiff_t>(w);
            row[(c * 3 + ky) * 3 + kx] =
                inside ? src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] : T{0};
          }
        }
      }
    }
  }
}

/// Adjoint of im2col3x3: scatters (C*9) x (H*W) patch gradients back onto the
/// image, adding into `img`. Accumulates per pixel in double.
template <class T>
void col2im3x3_add(const T* col, std::size_t channels, std::size_t h, std::size_t w, T* img) {
  const std::size_t plane = h * w;
  std::vector<double> acc(plane);
  for (std::size_t c = 0; c < channels; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* src = col + ((c * 3 + ky) * 3 + kx) * plane;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            acc[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] +=
                static_cast<double>(src[y * w + x]);
          }
        }
      }
    }
    T* dst = img + c * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] += static_cast<T>(acc[i]);
  }
}

/// Separable valid-mode correlation of an h x w plane with a 1-D kernel
/// applied along both axes. Output is (h-k+1) x (w-k+1).
inline void filter_valid_separable(const double* src, std::size_t h, std::size_t w,
                                   const std::vector<double>& kernel, double* dst) {
  const std::size_t k = kernel.size();
  const std::size_t oh = h - k + 1;
  const std::size_t ow = w - k + 1;
  std::vector<double> tmp(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += kernel[i] * src[y * w + x + i];
      tmp[y * ow + x] = s;
    }
  }
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += kernel[i] * tmp[(y + i) * ow + x];
      dst[y * ow + x] = s;
    }
  }
}

/// Adjoint of filter_valid_separable: maps an (h-k+1) x (w-k+1) gradient back
/// to h x w (overwrites dst).
inline void filter_valid_separable_adjoint(const double* grad, std::size_t h, std::size_t w,
                                           const std::vector<double>& kernel, double* dst) {
  const std::size_t k = kernel.size();
  const std::size_t oh = h - k + 1;
  const std::size_t ow = w - k + 1;
  std::vector<double> tmp(h * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t x = 0; x < ow; ++x) tmp[(y + i) * ow + x] += kernel[i] * grad[y * ow + x];
    }
  }
  std::fill_n(dst, h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const double g = tmp[y * ow + x];
      for (std::size_t i = 0; i < k; ++i) dst[y * w + x + i] += kernel[i] * g;
    }
  }
}

}  // namespace jcae::kernels
