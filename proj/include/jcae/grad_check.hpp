#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "jcae/autodiff.hpp"

namespace jcae {

/// A scalar function recorded onto a tape given its input leaf.
template <class T>
using ScalarFn = std::function<Var<T>(Tape<T>&, Var<T>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckOptions {
  double step = 1e-3;
  /// Denominator floor: relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-2;
  /// When set, only this many coordinates (spread evenly) are probed.
  std::optional<std::size_t> max_coords;
  /// When the forward and backward one-sided slopes disagree by more than
  /// `kink_tolerance` (relative), the probe straddles a kink and the step is
  /// divided by 10, at most `max_refinements` times.
  double kink_tolerance = 1e-3;
  int max_refinements = 3;
};

namespace detail {

inline std::vector<std::size_t> probe_coords(std::size_t n, const GradCheckOptions& options) {
  std::vector<std::size_t> coords;
  if (options.max_coords && *options.max_coords < n) {
    const std::size_t k = *options.max_coords;
    for (std::size_t i = 0; i < k; ++i) coords.push_back(i * n / k + (n / k) / 2);
  } else {
    for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
  }
  return coords;
}

/// Central differences of `eval` around `probe` at `coords`, compared with
/// `analytic`. `probe` is restored on return.
template <class R, class Eval>
GradCheckResult compare_central(Tensor<R>& probe, const std::vector<double>& analytic,
                                const std::vector<std::size_t>& coords, const GradCheckOptions& options,
                                Eval&& eval) {
  GradCheckResult result;
  const double center = options.max_refinements > 0 ? eval() : 0.0;
  for (std::size_t i : coords) {
    const R original = probe[i];
    double numeric = 0.0;
    double step = options.step;
    for (int round = 0;; ++round) {
      const R up = static_cast<R>(static_cast<double>(original) + step);
      const R down = static_cast<R>(static_cast<double>(original) - step);
      probe[i] = up;
      const double f_plus = eval();
      probe[i] = down;
      const double f_minus = eval();
      probe[i] = original;
      // Divide by the representable step, not the requested one.
      numeric = (f_plus - f_minus) / (static_cast<double>(up) - static_cast<double>(down));
      if (round >= options.max_refinements) break;
      const double forward = (f_plus - center) / (static_cast<double>(up) - static_cast<double>(original));
      const double backward = (center - f_minus) / (static_cast<double>(original) - static_cast<double>(down));
      const double scale = std::max({std::abs(forward), std::abs(backward), options.floor});
      const double next = step / 10.0;
      const double resolution = 1e4 * std::numeric_limits<R>::epsilon() * std::max(1.0, std::abs(double(original)));
      if (std::abs(forward - backward) <= options.kink_tolerance * scale || next < resolution) break;
      step = next;
    }
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
    const double err = std::abs(a - numeric) / denom;
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = a;
      result.numeric = numeric;
    }
  }
  return result;
}

}  // namespace detail

/// Compares the reverse-mode gradient of `fn` at `point`, evaluated in T,
/// against central finite differences of the same function evaluated in R.
/// `fn` is called as fn(Tape<U>&, Var<U>) for U = T and U = R.
template <class T, class R = T, class Fn = ScalarFn<T>>
GradCheckResult grad_check(Fn&& fn, const Tensor<T>& point, GradCheckOptions options = {}) {
  std::vector<double> analytic;
  {
    Tape<T> tape;
    Var<T> x = tape.input(point);
    Var<T> y = fn(tape, x);
    tape.backward(y);
    for (T g : tape.grad(x)) analytic.push_back(static_cast<double>(g));
  }
  Tensor<R> probe = point.template cast<R>();
  return detail::compare_central(probe, analytic, detail::probe_coords(point.size(), options), options, [&] {
    Tape<R> tape;
    return static_cast<double>(fn(tape, tape.constant(probe)).value()[0]);
  });
}

/// Gradient check for a parameter read through Tape::parameter inside `fn`,
/// called as fn(Tape<U>&). The analytic gradient is taken on `param` (type T);
/// finite differences perturb `reference` (type R) in place, which must hold
/// the same values and is restored afterwards. `param`'s grad buffer is
/// overwritten.
template <class T, class R, class Fn>
GradCheckResult grad_check_parameter(Fn&& fn, Tensor<T>& param, Tensor<R>& reference,
                                     GradCheckOptions options = {}) {
  ops::detail::require_same_shape(param.shape(), reference.shape(), "grad_check_parameter");
  param.enable_grad();
  param.zero_grad();
  {
    Tape<T> tape;
    tape.backward(fn(tape));
  }
  std::vector<double> analytic;
  for (T g : param.grad()) analytic.push_back(static_cast<double>(g));
  return detail::compare_central(reference, analytic, detail::probe_coords(param.size(), options), options, [&] {
    Tape<R> tape;
    return static_cast<double>(fn(tape).value()[0]);
  });
}

/// Single-precision-type form: perturbs `param` itself.
template <class T, class Fn>
GradCheckResult grad_check_parameter(Fn&& fn, Tensor<T>& param, GradCheckOptions options = {}) {
  Tensor<T> reference = param;
  param.enable_grad();
  param.zero_grad();
  {
    Tape<T> tape;
    tape.backward(fn(tape));
  }
  std::vector<double> analytic;
  for (T g : param.grad()) analytic.push_back(static_cast<double>(g));
  const auto coords = detail::probe_coords(param.size(), options);
  GradCheckResult result = detail::compare_central(reference, analytic, coords, options, [&] {
    std::copy(reference.data().begin(), reference.data().end(), param.data().begin());
    Tape<T> tape;
    return static_cast<double>(fn(tape).value()[0]);
  });
  std::copy(reference.data().begin(), reference.data().end(), param.data().begin());
  return result;
}

}  // namespace jcae
