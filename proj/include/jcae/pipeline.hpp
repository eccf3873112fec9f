#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "jcae/dataset.hpp"
#include "jcae/fusion.hpp"
#include "jcae/image_io.hpp"
#include "jcae/metrics.hpp"
#include "jcae/train.hpp"
#include "jcae/weights_io.hpp"

namespace jcae {

struct RunConfig {
  std::filesystem::path data_dir;
  std::size_t epochs = 0;
  double lr = 3e-4;
  double lambda = 100.0;
  std::uint64_t seed = 0;
  DatasetOptions resolution;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> vgg;
  std::optional<std::filesystem::path> loss_log;

  TrainOptions train_options() const {
    TrainOptions t;
    t.epochs = epochs;
    t.adam.lr = lr;
    t.loss.lambda = lambda;
    t.shuffle_seed = seed;
    return t;
  }

  void validate() const {
    train_options().validate();
    if (checkpoint.empty()) throw ValueError("checkpoint path is required");
    if ((resolution.width == 0) != (resolution.height == 0)) {
      throw ValueError("target width and height must both be set or both be 0");
    }
  }
};

/// Trains from random init (or VGG-initialized encoders) on the corpus in
/// `data_dir`. The checkpoint is written before the first epoch and after
/// every epoch, so a failure leaves the last good model on disk. Each epoch
/// record goes to `log_stream` and, if configured, the loss log file.
inline std::vector<EpochRecord> cmd_train(const RunConfig& config, std::ostream* log_stream = nullptr) {
  config.validate();
  const auto corpus = load_corpus(config.data_dir, config.resolution);
  if (corpus.empty()) throw Error("no complete image pairs in " + config.data_dir.string());
  for (const auto& p : corpus) {
    if (!p.a.same_size(corpus.front().a)) {
      throw ImageError("pair '" + p.name + "' differs in size; set a target resolution");
    }
  }

  JcaeModel<float> model = init_random<float>(config.seed);
  if (config.vgg) init_from_vgg(model, *config.vgg);
  save_checkpoint(model, config.checkpoint);

  std::ofstream log_file;
  if (config.loss_log) {
    log_file.open(*config.loss_log, std::ios::trunc);
    if (!log_file) throw Error("cannot write " + config.loss_log->string());
  }
  const auto pairs = to_training_pairs<float>(corpus);
  return train(model, pairs, config.train_options(), [&](const EpochRecord& rec) {
    const std::string line = format_epoch_record(rec);
    if (log_stream) *log_stream << line << '\n' << std::flush;
    if (log_file.is_open()) log_file << line << '\n' << std::flush;
    save_checkpoint(model, config.checkpoint);
  });
}

inline void require_same_size(const Image& a, const Image& b, const std::string& a_name,
                              const std::string& b_name) {
  if (!a.same_size(b)) {
    throw ImageError(a_name + " is " + std::to_string(a.width) + "x" + std::to_string(a.height) + " but " +
                     b_name + " is " + std::to_string(b.width) + "x" + std::to_string(b.height));
  }
}

/// Fuses one registered pair with a trained model and writes the result
/// (format by extension).
inline Image cmd_fuse(const std::filesystem::path& model_path, const std::filesystem::path& ir_path,
                      const std::filesystem::path& vis_path, const std::filesystem::path& out_path) {
  const JcaeModel<float> model = load_checkpoint<float>(model_path);
  const Image ir = read_image(ir_path);
  const Image vis = read_image(vis_path);
  require_same_size(ir, vis, ir_path.string(), vis_path.string());
  const Image fused = to_image(fuse_images(model, to_tensor<float>(ir), to_tensor<float>(vis)));
  write_image(out_path, fused);
  return fused;
}

struct EvalConfig {
  std::filesystem::path fused_dir;
  std::filesystem::path ir_dir;
  std::filesystem::path vis_dir;
  std::optional<std::filesystem::path> baseline;
};

namespace detail {

inline std::optional<std::filesystem::path> find_source(const std::filesystem::path& dir, const std::string& stem,
                                                        const std::string& suffix) {
  if (auto p = find_with_suffix(dir, stem, suffix)) return p;
  return find_with_suffix(dir, stem, "");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Metrics for every fused image in `fused_dir` (an optional `_fused` suffix
/// is stripped from its stem), paired with `<stem>_ir` / `<stem>` in `ir_dir`
/// and `<stem>_vis` / `<stem>` in `vis_dir`. Rows are in sorted-name order.
inline MetricReport cmd_eval(const EvalConfig& config) {
  if (!std::filesystem::is_directory(config.fused_dir)) throw Error("not a directory: " + config.fused_dir.string());
  std::vector<std::filesystem::path> fused_files;
  for (const auto& entry : std::filesystem::directory_iterator(config.fused_dir)) {
    if (entry.is_regular_file() && is_supported_image(entry.path())) fused_files.push_back(entry.path());
  }
  std::sort(fused_files.begin(), fused_files.end());

  std::vector<PairMetrics> rows;
  for (const auto& path : fused_files) {
    std::string stem = path.stem().string();
    if (stem.size() > 6 && stem.ends_with("_fused")) stem.resize(stem.size() - 6);
    const auto ir_path = detail::find_source(config.ir_dir, stem, "_ir");
    const auto vis_path = detail::find_source(config.vis_dir, stem, "_vis");
    if (!ir_path || !vis_path) {
      warn("no " + std::string(ir_path ? "visible" : "infrared") + " source for " + path.filename().string() +
           "; skipped");
      continue;
    }
    const Image fused = read_image(path);
    const Image ir = read_image(*ir_path);
    const Image vis = read_image(*vis_path);
    require_same_size(fused, ir, path.string(), ir_path->string());
    require_same_size(fused, vis, path.string(), vis_path->string());
    rows.push_back({stem, evaluate_triple(fused, ir, vis)});
  }
  if (rows.empty()) throw Error("no fused images with matching sources in " + config.fused_dir.string());
  MetricReport report = make_report(std::move(rows));
  if (config.baseline) attach_significance(report, parse_key_value(detail::read_text(*config.baseline)));
  return report;
}

enum class FeatureBranch { PrivateA, PrivateB, Common };

inline FeatureBranch parse_feature_branch(const std::string& name) {
  if (name == "private-a") return FeatureBranch::PrivateA;
  if (name == "private-b") return FeatureBranch::PrivateB;
  if (name == "common") return FeatureBranch::Common;
  throw ValueError("unknown branch '" + name + "' (expected private-a, private-b or common)");
}

inline const char* feature_branch_name(FeatureBranch b) {
  switch (b) {
    case FeatureBranch::PrivateA: return "private-a";
    case FeatureBranch::PrivateB: return "private-b";
    case FeatureBranch::Common: return "common";
  }
  return "?";
}

struct InspectConfig {
  std::filesystem::path model;
  std::filesystem::path ir;
  std::filesystem::path vis;
  FeatureBranch branch = FeatureBranch::PrivateA;
  std::size_t channel = 0;
  std::filesystem::path out_dir;
};

struct InspectResult {
  Image ir;
  Image vis;
  Image fused;
  std::vector<std::filesystem::path> files;
};

namespace detail {

inline Image feature_channel(const Tensor<float>& f, std::size_t channel) {
  const std::size_t h = f.extent(2), w = f.extent(3);
  Image img(w, h);
  for (std::size_t i = 0; i < h * w; ++i) img.pixels[i] = static_cast<double>(f[channel * h * w + i]);
  return img;
}

}  // namespace detail

/// Min-max normalizes the maps jointly to [0,1]; a constant input maps to mid-gray.
inline std::vector<Image> normalize_jointly(std::vector<Image> maps) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& m : maps)
    for (double v : m.pixels) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  for (auto& m : maps)
    for (double& v : m.pixels) v = hi > lo ? (v - lo) / (hi - lo) : 0.5;
  return maps;
}

/// Writes one channel of the selected feature stack for both sources and for
/// their fused stack, as `<branch>_c<K>_{ir,vis,fused}.png` in `out_dir`.
/// private-a and private-b both select the private stacks (infrared through
/// branch A, visible through branch B); the fused map is the fusion rule of
/// that stack.
inline InspectResult cmd_inspect(const InspectConfig& config) {
  if (config.channel >= JcaeModel<float>::kFeatureChannels) {
    throw ValueError("channel " + std::to_string(config.channel) + " out of range [0, " +
                     std::to_string(JcaeModel<float>::kFeatureChannels) + ")");
  }
  const JcaeModel<float> model = load_checkpoint<float>(config.model);
  const Image ir = read_image(config.ir);
  const Image vis = read_image(config.vis);
  require_same_size(ir, vis, config.ir.string(), config.vis.string());
  const FeatureBundle<float> fa = encode(model, to_tensor<float>(ir), Side::A);
  const FeatureBundle<float> fb = encode(model, to_tensor<float>(vis), Side::B);

  const bool common = config.branch == FeatureBranch::Common;
  const Tensor<float>& sa = common ? fa.common_features : fa.private_features;
  const Tensor<float>& sb = common ? fb.common_features : fb.private_features;
  const Tensor<float> fused = common ? fuse_common(sa, sb) : fuse_private(sa, sb);

  auto maps = normalize_jointly({detail::feature_channel(sa, config.channel),
                                 detail::feature_channel(sb, config.channel),
                                 detail::feature_channel(fused, config.channel)});
  std::filesystem::create_directories(config.out_dir);
  InspectResult result{maps[0], maps[1], maps[2], {}};
  const std::string base = std::string(feature_branch_name(config.branch)) + "_c" + std::to_string(config.channel);
  const char* roles[3] = {"ir", "vis", "fused"};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto path = config.out_dir / (base + "_" + roles[i] + ".png");
    write_image(path, maps[i]);
    result.files.push_back(path);
  }
  return result;
}

}  // namespace jcae
