#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "jcae/adam.hpp"
#include "jcae/dataset.hpp"
#include "jcae/loss.hpp"
#include "jcae/model.hpp"

namespace jcae {

/// Mean loss components over one epoch.
struct EpochRecord {
  std::size_t epoch = 0;
  double total = 0.0;
  /// Summed MSE of both reconstructions.
  double mse = 0.0;
  /// Summed (1 - SSIM) of both reconstructions, unweighted.
  double ssim = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// `epoch=<n> total=<x> mse=<x> ssim=<x>`, values printed round-trip exact.
inline std::string format_epoch_record(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch=%zu total=%.17g mse=%.17g ssim=%.17g", r.epoch, r.total, r.mse,
                r.ssim);
  return buf;
}

inline EpochRecord parse_epoch_record(std::string_view line) {
  std::istringstream in{std::string(line)};
  std::map<std::string, std::string> kv;
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw Error("loss log: bad field '" + token + "'");
    kv[token.substr(0, eq)] = token.substr(eq + 1);
  }
  for (const char* key : {"epoch", "total", "mse", "ssim"}) {
    if (!kv.count(key)) throw Error(std::string("loss log: missing ") + key + " in '" + std::string(line) + "'");
  }
  return {static_cast<std::size_t>(std::stoull(kv["epoch"])), std::stod(kv["total"]), std::stod(kv["mse"]),
          std::stod(kv["ssim"])};
}

inline std::vector<EpochRecord> parse_loss_log(std::string_view text) {
  std::vector<EpochRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_epoch_record(line));
  }
  return out;
}

struct TrainOptions {
  std::size_t epochs = 1;
  AdamConfig adam;
  LossConfig loss;
  /// Seed of the per-epoch shuffle; epoch e uses shuffle_seed + e.
  std::uint64_t shuffle_seed = 0;

  void validate() const {
    if (epochs < 1) throw ValueError("epochs must be at least 1");
    if (!(adam.lr > 0.0) || !std::isfinite(adam.lr)) throw ValueError("learning rate must be positive");
    if (!(loss.lambda >= 0.0) || !std::isfinite(loss.lambda)) throw ValueError("lambda must be nonnegative");
    loss.validate();
  }
};

struct StepTerms {
  double total = 0.0;
  double mse = 0.0;
  double ssim = 0.0;
};

/// Unsupervised reconstruction training: each step reconstructs A through the
/// A-side branches and B through the B-side branches and takes one ADAM step
/// on the combined loss (batch size 1).
template <class T>
class Trainer {
 public:
  Trainer(JcaeModel<T>& model, const TrainOptions& options) : model_(model), options_(options), adam_(options.adam) {
    options_.validate();
  }

  StepTerms step(const Tensor<T>& a, const Tensor<T>& b) {
    ops::detail::require_same_shape(a.shape(), b.shape(), "train step");
    validate_image(a, "train step");
    validate_image(b, "train step");
    model_.zero_grad();
    Tape<T> tape;
    Var<T> va = tape.constant(a);
    Var<T> vb = tape.constant(b);
    Var<T> ra = graph::reconstruct(tape, model_, va, Side::A);
    Var<T> rb = graph::reconstruct(tape, model_, vb, Side::B);
    const LossTerms<T> terms = combined_loss(ra, va, rb, vb, options_.loss);
    const double total = static_cast<double>(terms.total.value()[0]);
    if (!std::isfinite(total)) throw ValueError("non-finite training loss");
    tape.backward(terms.total);
    std::vector<Tensor<T>*> params = model_.parameters();
    adam_.step(std::span<Tensor<T>* const>(params));
    return {total, terms.mse, terms.ssim};
  }

  /// One pass over `pairs` in the shuffled order of `epoch` (1-based).
  EpochRecord run_epoch(const std::vector<std::pair<Tensor<T>, Tensor<T>>>& pairs, std::size_t epoch) {
    if (pairs.empty()) throw Error("training corpus is empty");
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t i : shuffled_indices(pairs.size(), options_.shuffle_seed + epoch)) {
      const StepTerms s = step(pairs[i].first, pairs[i].second);
      rec.total += s.total;
      rec.mse += s.mse;
      rec.ssim += s.ssim;
    }
    const double n = static_cast<double>(pairs.size());
    rec.total /= n;
    rec.mse /= n;
    rec.ssim /= n;
    return rec;
  }

  const AdamState& optimizer() const { return adam_; }

 private:
  JcaeModel<T>& model_;
  TrainOptions options_;
  AdamState adam_;
};

template <class T>
std::vector<std::pair<Tensor<T>, Tensor<T>>> to_training_pairs(const std::vector<ImagePair>& corpus) {
  std::vector<std::pair<Tensor<T>, Tensor<T>>> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus) out.emplace_back(to_tensor<T>(p.a), to_tensor<T>(p.b));
  return out;
}

/// Runs `options.epochs` epochs, calling `on_epoch` after each one.
template <class T>
std::vector<EpochRecord> train(JcaeModel<T>& model, const std::vector<std::pair<Tensor<T>, Tensor<T>>>& pairs,
                               const TrainOptions& options,
                               const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  Trainer<T> trainer(model, options);
  if (pairs.empty()) throw Error("training corpus is empty");
  std::vector<EpochRecord> log;
  for (std::size_t e = 1; e <= options.epochs; ++e) {
    log.push_back(trainer.run_epoch(pairs, e));
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

}  // namespace jcae
