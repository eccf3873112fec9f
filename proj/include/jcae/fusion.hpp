#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "jcae/model.hpp"
#include "jcae/tensor.hpp"

namespace jcae {

namespace detail {

/// Interprets (M,h,w) or (1,M,h,w) as M maps of h x w.
struct MapLayout {
  std::size_t maps = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t plane() const { return height * width; }
};

inline MapLayout map_layout(const Shape& s, const char* op) {
  if (s.size() == 3) return {s[0], s[1], s[2]};
  if (s.size() == 4 && s[0] == 1) return {s[1], s[2], s[3]};
  throw ShapeError(std::string(op) + ": expected (M,h,w) or (1,M,h,w) feature stack, got " +
                   shape_str(s));
}

template <class T>
MapLayout checked_pair(const Tensor<T>& fa, const Tensor<T>& fb, const char* op) {
  if (fa.shape() != fb.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(fa.shape()) + " vs " +
                     shape_str(fb.shape()));
  }
  return map_layout(fa.shape(), op);
}

}  // namespace detail

/// Per-map and per-location activity of a post-ReLU feature stack.
struct ActivityProfile {
  /// Number of strictly positive entries in each map.
  std::vector<std::size_t> layer_activity;
  /// Channel sum at each location, row-major h x w.
  std::vector<double> location_activity;
  /// Gate threshold: 3/5 of the positions in one map.
  double threshold = 0.0;
};

/// Threshold for maps of h x w positions.
inline double activity_threshold(std::size_t height, std::size_t width) {
  return static_cast<double>(height * width) * 3.0 / 5.0;
}

/// Count of strictly positive entries per map.
template <class T>
std::vector<std::size_t> layer_activity(const Tensor<T>& f) {
  const auto layout = detail::map_layout(f.shape(), "layer_activity");
  std::vector<std::size_t> counts(layout.maps, 0);
  for (std::size_t m = 0; m < layout.maps; ++m)
    for (std::size_t p = 0; p < layout.plane(); ++p)
      if (f[m * layout.plane() + p] > T{0}) ++counts[m];
  return counts;
}

/// Sum over maps at each location, accumulated in map order.
template <class T>
std::vector<double> location_activity(const Tensor<T>& f) {
  const auto layout = detail::map_layout(f.shape(), "location_activity");
  std::vector<double> sums(layout.plane(), 0.0);
  for (std::size_t m = 0; m < layout.maps; ++m)
    for (std::size_t p = 0; p < layout.plane(); ++p)
      sums[p] += static_cast<double>(f[m * layout.plane() + p]);
  return sums;
}

template <class T>
ActivityProfile activity_profile(const Tensor<T>& f) {
  const auto layout = detail::map_layout(f.shape(), "activity_profile");
  return {layer_activity(f), location_activity(f), activity_threshold(layout.height, layout.width)};
}

/// Choose-max of private features; equal values take the A side.
template <class T>
Tensor<T> fuse_private(const Tensor<T>& fa, const Tensor<T>& fb) {
  detail::checked_pair(fa, fb, "fuse_private");
  Tensor<T> out(fa.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fb[i] > fa[i] ? fb[i] : fa[i];
  return out;
}

/// Activity-gated fusion of common features. For each map m: when
/// min(L_A[m], L_B[m]) < T the map is fused by choose-max; otherwise by the
/// per-location weighted sum w1*fa + w2*fb with w1 = C_A/(C_A+C_B),
/// w2 = C_B/(C_A+C_B), and w1 = w2 = 0.5 where C_A + C_B = 0.
template <class T>
Tensor<T> fuse_common(const Tensor<T>& fa, const Tensor<T>& fb) {
  const auto layout = detail::checked_pair(fa, fb, "fuse_common");
  for (std::size_t i = 0; i < fa.size(); ++i) {
    if (!(fa[i] >= T{0}) || !(fb[i] >= T{0})) {
      throw ValueError("fuse_common: feature stacks must be nonnegative (post-ReLU)");
    }
  }
  const ActivityProfile pa = activity_profile(fa);
  const ActivityProfile pb = activity_profile(fb);
  const std::size_t plane = layout.plane();

  std::vector<double> w1(plane), w2(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    const double denom = pa.location_activity[p] + pb.location_activity[p];
    if (denom == 0.0) {
      w1[p] = 0.5;
      w2[p] = 0.5;
    } else {
      w1[p] = pa.location_activity[p] / denom;
      w2[p] = pb.location_activity[p] / denom;
    }
  }

  Tensor<T> out(fa.shape());
  for (std::size_t m = 0; m < layout.maps; ++m) {
    const bool sparse = static_cast<double>(std::min(pa.layer_activity[m], pb.layer_activity[m])) <
                        pa.threshold;
    const std::size_t base = m * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      const T a = fa[base + p], b = fb[base + p];
      if (sparse) {
        out[base + p] = b > a ? b : a;
      } else {
        out[base + p] = static_cast<T>(w1[p] * static_cast<double>(a) + w2[p] * static_cast<double>(b));
      }
    }
  }
  return out;
}

template <class T>
FeatureBundle<T> fuse_pair_features(const FeatureBundle<T>& a, const FeatureBundle<T>& b) {
  if (a.image_height != b.image_height || a.image_width != b.image_width) {
    throw ShapeError("fuse_pair_features: bundles come from images of different sizes");
  }
  return {fuse_private(a.private_features, b.private_features),
          fuse_common(a.common_features, b.common_features), a.image_height, a.image_width};
}

/// Full fusion path: encode both sources, fuse features, decode.
template <class T>
Tensor<T> fuse_images(const JcaeModel<T>& model, const Tensor<T>& infrared, const Tensor<T>& visible) {
  ops::detail::require_same_shape(infrared.shape(), visible.shape(), "fuse_images");
  return decode(model, fuse_pair_features(encode(model, infrared, Side::A),
                                          encode(model, visible, Side::B)));
}

}  // namespace jcae
