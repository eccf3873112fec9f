#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace jcae {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when tensor extents do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a value is NaN/Inf or outside the range an operation accepts.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Warnings go through a replaceable sink so tests can capture them.
using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(const std::string& msg) {
  if (warning_sink()) warning_sink()(msg);
}

/// Installs a warning sink for the lifetime of the guard.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(WarningSink sink) : previous_(std::move(warning_sink())) {
    warning_sink() = std::move(sink);
  }
  ~ScopedWarningSink() { warning_sink() = std::move(previous_); }
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  WarningSink previous_;
};

/// Portable deterministic generator. The standard distributions are
/// implementation-defined, so sampling is done here on top of splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % bound;
  }

  /// Standard normal via Box-Muller; caches the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace jcae
