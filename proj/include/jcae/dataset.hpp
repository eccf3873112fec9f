#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jcae/common.hpp"
#include "jcae/image_io.hpp"

namespace jcae {

/// Registered infrared (a) / visible (b) pair sharing a file stem.
struct ImagePair {
  Image a;
  Image b;
  std::string name;
};

struct DatasetOptions {
  /// Target resolution; 0 keeps the native size (both images must then match).
  std::size_t width = 360;
  std::size_t height = 280;
};

namespace detail {

inline std::optional<std::filesystem::path> find_with_suffix(const std::filesystem::path& dir,
                                                             const std::string& stem,
                                                             const std::string& suffix) {
  for (const char* ext : {".pgm", ".png", ".PGM", ".PNG"}) {
    auto p = dir / (stem + suffix + ext);
    if (std::filesystem::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

inline Image prepare(Image img, const DatasetOptions& options) {
  if (options.width && options.height) return resize_bilinear(img, options.width, options.height);
  return img;
}

}  // namespace detail

/// Loads `<stem>_ir.<ext>` and `<stem>_vis.<ext>` (ext pgm or png), resized to
/// the configured target. Returns nullopt, with a warning, if either file is
/// missing; a corrupt file throws ImageError.
inline std::optional<ImagePair> load_pair(const std::filesystem::path& dir, const std::string& stem,
                                          const DatasetOptions& options = {}) {
  const auto ir = detail::find_with_suffix(dir, stem, "_ir");
  const auto vis = detail::find_with_suffix(dir, stem, "_vis");
  if (!ir || !vis) {
    warn("pair '" + stem + "' in " + dir.string() + " is missing its " +
         (ir ? "visible" : "infrared") + " image; skipped");
    return std::nullopt;
  }
  ImagePair pair{detail::prepare(read_image(*ir), options), detail::prepare(read_image(*vis), options),
                 stem};
  if (!pair.a.same_size(pair.b)) {
    throw ImageError("pair '" + stem + "': infrared and visible images differ in size");
  }
  return pair;
}

/// Stems of every `_ir`/`_vis` file in `dir`, sorted, including incomplete ones.
inline std::vector<std::string> list_stems(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::map<std::string, int> stems;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_supported_image(entry.path())) continue;
    const std::string base = entry.path().stem().string();
    for (const std::string suffix : {"_ir", "_vis"}) {
      if (base.size() > suffix.size() && base.ends_with(suffix)) {
        stems[base.substr(0, base.size() - suffix.size())] = 1;
      }
    }
  }
  std::vector<std::string> out;
  for (const auto& [stem, unused] : stems) out.push_back(stem);
  return out;
}

/// Fisher-Yates permutation of [0, n) from a portable generator.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

/// Every complete pair in `dir`, loaded, in sorted-stem order.
inline std::vector<ImagePair> load_corpus(const std::filesystem::path& dir,
                                          const DatasetOptions& options = {}) {
  std::vector<ImagePair> pairs;
  for (const auto& stem : list_stems(dir)) {
    if (auto pair = load_pair(dir, stem, options)) pairs.push_back(std::move(*pair));
  }
  return pairs;
}

/// Complete pairs of `dir` in a deterministic order for `shuffle_seed`.
inline std::vector<ImagePair> corpus_iter(const std::filesystem::path& dir, std::uint64_t shuffle_seed,
                                          const DatasetOptions& options = {}) {
  std::vector<ImagePair> sorted = load_corpus(dir, options);
  std::vector<ImagePair> out;
  out.reserve(sorted.size());
  for (std::size_t i : shuffled_indices(sorted.size(), shuffle_seed)) out.push_back(std::move(sorted[i]));
  return out;
}

}  // namespace jcae
