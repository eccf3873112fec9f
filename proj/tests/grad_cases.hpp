#pragma once

// Gradient-check instances for every differentiable op and for the full
// training loss. Analytic gradients are taken in single precision and compared
// with double-precision central differences of the same function.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "jcae/grad_check.hpp"
#include "jcae/loss.hpp"
#include "jcae/model.hpp"
#include "test_support.hpp"

namespace jcae::testing {

struct GradCase {
  std::string name;
  /// Runs one random instance (spatial extent at most 16x16) and reports the
  /// worst relative error.
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

inline constexpr double kGradStep = 1e-5;

inline GradCheckOptions grad_options(std::optional<std::size_t> max_coords = std::nullopt) {
  GradCheckOptions o;
  o.step = kGradStep;
  o.max_coords = max_coords;
  return o;
}

/// Random spatial extent in [lo, hi] per axis.
inline std::pair<std::size_t, std::size_t> random_extent(Rng& rng, std::size_t lo, std::size_t hi) {
  return {lo + rng.below(hi - lo + 1), lo + rng.below(hi - lo + 1)};
}

/// Values spaced at least 0.01 apart and 0.005 away from zero, in random
/// order, so no probe crosses a ReLU or max-pool kink.
inline Tensor<float> kink_free_tensor(const Shape& shape, std::uint64_t seed) {
  Tensor<float> t(shape);
  const std::size_t n = t.size();
  std::vector<std::size_t> order = shuffled_indices(n, seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = -0.5 * static_cast<double>(n) * 0.01 + 0.01 * static_cast<double>(order[i]) + 0.005;
    t[i] = static_cast<float>(v);
  }
  return t;
}

/// dot(op(x), w) with fixed random weights w, so every output element
/// contributes with a distinct weight.
template <class Op>
GradCheckResult check_unary(Op op, const Tensor<float>& x, std::uint64_t seed,
                            std::optional<std::size_t> max_coords = std::nullopt) {
  Tensor<float> probe_shape_source;
  {
    Tape<float> tape;
    probe_shape_source = op(tape.constant(x)).value();
  }
  const Tensor<double> weights = random_tensor<double>(probe_shape_source.shape(), seed ^ 0x5A5A, -1.0, 1.0);
  const Tensor<float> weights_f = weights.cast<float>();
  const Tensor<double> weights_d = weights_f.cast<double>();
  auto fn = [&](auto& tape, auto v) {
    using U = typename std::remove_reference_t<decltype(tape)>::value_type;
    (void)tape;
    if constexpr (std::is_same_v<U, float>) {
      return ops::dot(op(v), weights_f);
    } else {
      return ops::dot(op(v), weights_d);
    }
  };
  return grad_check<float, double>(fn, x, grad_options(max_coords));
}

template <class U>
const JcaeModel<U>& select_model(const JcaeModel<float>& f, const JcaeModel<double>& d) {
  if constexpr (std::is_same_v<U, float>) {
    (void)d;
    return f;
  } else {
    (void)f;
    return d;
  }
}

template <class U>
JcaeModel<U>& select_model(JcaeModel<float>& f, JcaeModel<double>& d) {
  if constexpr (std::is_same_v<U, float>) {
    (void)d;
    return f;
  } else {
    (void)f;
    return d;
  }
}

inline JcaeModel<double> widen(const JcaeModel<float>& m) {
  JcaeModel<double> out;
  auto dst = out.named_parameters();
  const auto src = m.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<double>();
  return out;
}

/// Image in (0.05, 0.95) from smooth structure plus noise.
inline Tensor<float> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> img(Shape{1, 1, h, w});
  const double fx = rng.uniform(0.2, 0.9), fy = rng.uniform(0.2, 0.9);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      img.at(0, 0, y, x) = static_cast<float>(
          std::clamp(0.5 + 0.3 * std::sin(fx * x + fy * y) + rng.uniform(-0.1, 0.1), 0.05, 0.95));
  return img;
}

inline std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;

  cases.push_back({"conv2d/input", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 3, 16);
                     const std::size_t c = 1 + rng.below(3), o = 1 + rng.below(4);
                     const auto x = random_tensor<float>({1, c, h, w}, seed + 1);
                     const auto k = random_tensor<double>({o, c, 3, 3}, seed + 2).cast<float>();
                     const auto b = random_tensor<double>({o}, seed + 3).cast<float>();
                     const auto kd = k.cast<double>(), bd = b.cast<double>();
                     return check_unary(
                         [&](auto v) {
                           using U = typename decltype(v)::value_type;
                           if constexpr (std::is_same_v<U, float>)
                             return ops::conv2d(v, v.tape->constant(k), v.tape->constant(b));
                           else
                             return ops::conv2d(v, v.tape->constant(kd), v.tape->constant(bd));
                         },
                         x, seed, 64);
                   }});

  cases.push_back({"conv2d/kernel+bias", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 3, 16);
                     const std::size_t c = 1 + rng.below(3), o = 1 + rng.below(4);
                     const auto x = random_tensor<float>({1, c, h, w}, seed + 1);
                     const auto weights = random_tensor<float>({1, o, h, w}, seed + 4);
                     Tensor<float> k = random_tensor<float>({o, c, 3, 3}, seed + 2);
                     Tensor<float> b = random_tensor<float>({o}, seed + 3);
                     Tensor<double> kd = k.cast<double>(), bd = b.cast<double>();
                     const auto xd = x.cast<double>(), wd = weights.cast<double>();
                     auto fn = [&](auto& tape) {
                       using U = typename std::remove_reference_t<decltype(tape)>::value_type;
                       if constexpr (std::is_same_v<U, float>)
                         return ops::dot(ops::conv2d(tape.constant(x), tape.parameter(k), tape.parameter(b)), weights);
                       else
                         return ops::dot(ops::conv2d(tape.constant(xd), tape.parameter(kd), tape.parameter(bd)), wd);
                     };
                     GradCheckResult rk = grad_check_parameter(fn, k, kd, grad_options());
                     GradCheckResult rb = grad_check_parameter(fn, b, bd, grad_options());
                     return rk.max_rel_error >= rb.max_rel_error ? rk : rb;
                   }});

  cases.push_back({"relu", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 1, 16);
                     return check_unary([](auto v) { return ops::relu(v); }, kink_free_tensor({1, 2, h, w}, seed),
                                        seed);
                   }});

  cases.push_back({"sigmoid", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 1, 16);
                     return check_unary([](auto v) { return ops::sigmoid(v); },
                                        random_tensor<float>({1, 2, h, w}, seed, -4.0, 4.0), seed);
                   }});

  cases.push_back({"maxpool2", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 1, 16);
                     return check_unary([](auto v) { return ops::maxpool2(v).out; },
                                        kink_free_tensor({1, 2, h, w}, seed), seed);
                   }});

  cases.push_back({"upsample_nearest2", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 1, 8);
                     const std::size_t oh = 2 * h - rng.below(2), ow = 2 * w - rng.below(2);
                     return check_unary([=](auto v) { return ops::upsample_nearest2(v, oh, ow); },
                                        random_tensor<float>({1, 2, h, w}, seed), seed);
                   }});

  cases.push_back({"concat_channels", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 1, 16);
                     return check_unary([](auto v) { return ops::concat_channels(v, ops::scale(v, 2.0)); },
                                        random_tensor<float>({1, 2, h, w}, seed), seed);
                   }});

  cases.push_back({"replicate_channels", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 1, 16);
                     return check_unary([](auto v) { return ops::replicate_channels(v, 3); },
                                        random_tensor<float>({1, 1, h, w}, seed), seed);
                   }});

  cases.push_back({"add+scale", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 1, 16);
                     return check_unary([](auto v) { return ops::add(ops::scale(v, -2.5), ops::scale(v, 0.75)); },
                                        random_tensor<float>({1, 1, h, w}, seed), seed);
                   }});

  cases.push_back({"sum", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 1, 16);
                     const auto x = random_tensor<float>({1, 1, h, w}, seed);
                     return grad_check<float, double>([](auto&, auto v) { return ops::sum(v); }, x, grad_options());
                   }});

  cases.push_back({"mse_loss", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 1, 16);
                     const auto target = random_tensor<float>({1, 1, h, w}, seed + 1, 0.0, 1.0);
                     const auto target_d = target.cast<double>();
                     const auto x = random_tensor<float>({1, 1, h, w}, seed, 0.0, 1.0);
                     return grad_check<float, double>(
                         [&](auto& tape, auto v) {
                           using U = typename std::remove_reference_t<decltype(tape)>::value_type;
                           if constexpr (std::is_same_v<U, float>)
                             return ops::mse_loss(v, tape.constant(target));
                           else
                             return ops::mse_loss(v, tape.constant(target_d));
                         },
                         x, grad_options());
                   }});

  for (const bool as_loss : {false, true}) {
    cases.push_back({as_loss ? "ssim_loss" : "ssim", [as_loss](std::uint64_t seed) {
                       Rng rng(seed);
                       const auto [h, w] = random_extent(rng, 11, 16);
                       const auto target = random_image(h, w, seed + 1);
                       const auto target_d = target.cast<double>();
                       const auto x = random_image(h, w, seed);
                       return grad_check<float, double>(
                           [&](auto& tape, auto v) {
                             using U = typename std::remove_reference_t<decltype(tape)>::value_type;
                             Var<U> t;
                             if constexpr (std::is_same_v<U, float>)
                               t = tape.constant(target);
                             else
                               t = tape.constant(target_d);
                             return as_loss ? ops::ssim_loss(v, t) : ops::ssim(t, v);
                           },
                           x, grad_options());
                     }});
  }

  cases.push_back({"ssim/cropped-window", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 5, 10);
                     const auto target = random_image(h, w, seed + 1);
                     const auto target_d = target.cast<double>();
                     const auto x = random_image(h, w, seed);
                     ScopedWarningSink quiet([](const std::string&) {});
                     return grad_check<float, double>(
                         [&](auto& tape, auto v) {
                           using U = typename std::remove_reference_t<decltype(tape)>::value_type;
                           if constexpr (std::is_same_v<U, float>)
                             return ops::ssim(v, tape.constant(target));
                           else
                             return ops::ssim(v, tape.constant(target_d));
                         },
                         x, grad_options());
                   }});

  cases.push_back({"combined_loss/model", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 11, 12);
                     JcaeModel<float> mf = init_random<float>(seed + 100);
                     JcaeModel<double> md = widen(mf);
                     const auto a = random_image(h, w, seed + 1), b = random_image(h, w, seed + 2);
                     const auto ad = a.cast<double>(), bd = b.cast<double>();
                     auto loss = [&](auto& tape) {
                       using U = typename std::remove_reference_t<decltype(tape)>::value_type;
                       auto& model = select_model<U>(mf, md);
                       Var<U> va, vb;
                       if constexpr (std::is_same_v<U, float>) {
                         va = tape.constant(a);
                         vb = tape.constant(b);
                       } else {
                         va = tape.constant(ad);
                         vb = tape.constant(bd);
                       }
                       Var<U> ra = graph::reconstruct(tape, model, va, Side::A);
                       Var<U> rb = graph::reconstruct(tape, model, vb, Side::B);
                       return combined_loss(ra, va, rb, vb).total;
                     };
                     // Two parameter tensors per instance, rotating through all 24.
                     GradCheckResult worst;
                     auto pf = mf.named_parameters();
                     auto pd = md.named_parameters();
                     for (std::size_t j = 0; j < 2; ++j) {
                       const std::size_t idx = (2 * seed + j) % pf.size();
                       mf.zero_grad();
                       const auto r = grad_check_parameter(loss, *pf[idx].tensor, *pd[idx].tensor, grad_options(6));
                       if (r.max_rel_error >= worst.max_rel_error) worst = r;
                     }
                     return worst;
                   }});

  cases.push_back({"combined_loss/image", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto [h, w] = random_extent(rng, 11, 12);
                     const JcaeModel<float> mf = init_random<float>(seed + 200);
                     const JcaeModel<double> md = widen(mf);
                     const auto b = random_image(h, w, seed + 2);
                     const auto bd = b.cast<double>();
                     return grad_check<float, double>(
                         [&](auto& tape, auto va) {
                           using U = typename std::remove_reference_t<decltype(tape)>::value_type;
                           const auto& model = select_model<U>(mf, md);
                           Var<U> vb;
                           if constexpr (std::is_same_v<U, float>)
                             vb = tape.constant(b);
                           else
                             vb = tape.constant(bd);
                           Var<U> ra = graph::reconstruct(tape, model, va, Side::A);
                           Var<U> rb = graph::reconstruct(tape, model, vb, Side::B);
                           return combined_loss(ra, va, rb, vb).total;
                         },
                         random_image(h, w, seed + 1), grad_options(10));
                   }});

  return cases;
}

}  // namespace jcae::testing
