#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jcae/tensor.hpp"

namespace jcae {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers and step counter for bias-corrected ADAM. Buffers are bound
/// to parameters by position on the first step; later steps must pass the
/// same parameter list.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {
    if (!(config_.lr > 0.0)) throw ValueError("adam: learning rate must be positive");
  }

  const AdamConfig& config() const noexcept { return config_; }
  std::uint64_t steps() const noexcept { return steps_; }

  /// One update using each parameter's grad buffer. A parameter whose grad is
  /// not enabled is treated as having zero gradient. Throws ValueError, with
  /// no parameter modified, if any gradient is NaN/Inf.
  template <class T>
  void step(std::span<Tensor<T>* const> params) {
    if (first_.empty()) {
      for (const Tensor<T>* p : params) {
        first_.emplace_back(p->size(), 0.0);
        second_.emplace_back(p->size(), 0.0);
      }
    }
    if (first_.size() != params.size()) {
      throw ShapeError("adam: parameter count changed from " + std::to_string(first_.size()) +
                       " to " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->size() != first_[i].size()) {
        throw ShapeError("adam: parameter " + std::to_string(i) + " changed size");
      }
      if (!params[i]->has_grad()) continue;
      for (T g : params[i]->grad()) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw ValueError("adam: non-finite gradient in parameter " + std::to_string(i) +
                           "; step aborted");
        }
      }
    }

    ++steps_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = *params[i];
      std::vector<double>& m = first_[i];
      std::vector<double>& v = second_[i];
      const bool has_grad = p.has_grad();
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = has_grad ? static_cast<double>(p.grad()[j]) : 0.0;
        m[j] = b1 * m[j] + (1.0 - b1) * g;
        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
        const double m_hat = m[j] / correction1;
        const double v_hat = v[j] / correction2;
        p[j] = static_cast<T>(static_cast<double>(p[j]) -
                              config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps));
      }
    }
  }

  const std::vector<std::vector<double>>& first_moments() const noexcept { return first_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return second_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

template <class T>
void adam_step(std::span<Tensor<T>* const> params, AdamState& state) {
  state.step(params);
}

}  // namespace jcae
