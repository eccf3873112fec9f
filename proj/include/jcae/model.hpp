#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "jcae/autodiff.hpp"
#include "jcae/common.hpp"
#include "jcae/tensor.hpp"

namespace jcae {

/// 3x3 stride-1 same-padding convolution parameters.
template <class T>
struct ConvLayer {
  Tensor<T> kernel;  // (O, I, 3, 3)
  Tensor<T> bias;    // (O)

  ConvLayer() = default;
  ConvLayer(std::size_t in, std::size_t out) : kernel(Shape{out, in, 3, 3}), bias(Shape{out}) {}

  std::size_t in_channels() const { return kernel.extent(1); }
  std::size_t out_channels() const { return kernel.extent(0); }
};

/// conv1 (3->64), conv2 (64->64), 2x2 max pool, conv3 (64->128), each conv
/// followed by ReLU. Layer shapes match VGG19 block1_conv1, block1_conv2 and
/// block2_conv1.
template <class T>
struct EncoderBranch {
  ConvLayer<T> conv1{3, 64};
  ConvLayer<T> conv2{64, 64};
  ConvLayer<T> conv3{64, 128};
};

/// conv1 (256->128) + ReLU, nearest 2x upsample, conv2 (128->64) + ReLU,
/// conv3 (64->1) + sigmoid.
template <class T>
struct Decoder {
  ConvLayer<T> conv1{256, 128};
  ConvLayer<T> conv2{128, 64};
  ConvLayer<T> conv3{64, 1};
};

enum class Side { A, B };

inline const char* side_name(Side side) { return side == Side::A ? "A" : "B"; }

/// Two private encoder branches, one common branch used for both inputs, and
/// one decoder used for both inputs.
template <class T>
struct JcaeModel {
  EncoderBranch<T> private_a;
  EncoderBranch<T> private_b;
  EncoderBranch<T> common;
  Decoder<T> decoder;

  static constexpr std::size_t kFeatureChannels = 128;

  EncoderBranch<T>& private_branch(Side side) { return side == Side::A ? private_a : private_b; }
  const EncoderBranch<T>& private_branch(Side side) const {
    return side == Side::A ? private_a : private_b;
  }

  struct NamedParameter {
    std::string name;
    Tensor<T>* tensor;
  };
  struct NamedConstParameter {
    std::string name;
    const Tensor<T>* tensor;
  };

  /// All 24 parameter tensors in canonical order, named
  /// `<branch>.conv<k>.<kernel|bias>`.
  std::vector<NamedParameter> named_parameters() {
    std::vector<NamedParameter> out;
    const auto add_layer = [&](const std::string& prefix, ConvLayer<T>& layer) {
      out.push_back({prefix + ".kernel", &layer.kernel});
      out.push_back({prefix + ".bias", &layer.bias});
    };
    const auto add_branch = [&](const std::string& name, EncoderBranch<T>& b) {
      add_layer(name + ".conv1", b.conv1);
      add_layer(name + ".conv2", b.conv2);
      add_layer(name + ".conv3", b.conv3);
    };
    add_branch("private_a", private_a);
    add_branch("private_b", private_b);
    add_branch("common", common);
    add_layer("decoder.conv1", decoder.conv1);
    add_layer("decoder.conv2", decoder.conv2);
    add_layer("decoder.conv3", decoder.conv3);
    return out;
  }

  std::vector<NamedConstParameter> named_parameters() const {
    std::vector<NamedConstParameter> out;
    for (auto& p : const_cast<JcaeModel*>(this)->named_parameters()) out.push_back({p.name, p.tensor});
    return out;
  }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

  void zero_grad() {
    for (Tensor<T>* p : parameters()) {
      p->enable_grad();
      p->zero_grad();
    }
  }

  friend bool operator==(const JcaeModel& a, const JcaeModel& b) {
    const auto pa = a.named_parameters();
    const auto pb = b.named_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
      if (!(*pa[i].tensor == *pb[i].tensor)) return false;
    return true;
  }
};

/// Encoder output for one image: private and common stacks of 128 maps at
/// half resolution, plus the source extent the decoder restores.
template <class T>
struct FeatureBundle {
  Tensor<T> private_features;  // (1, 128, ceil(H/2), ceil(W/2))
  Tensor<T> common_features;   // same shape
  std::size_t image_height = 0;
  std::size_t image_width = 0;

  friend bool operator==(const FeatureBundle& a, const FeatureBundle& b) {
    return a.private_features == b.private_features && a.common_features == b.common_features &&
           a.image_height == b.image_height && a.image_width == b.image_width;
  }
};

/// He-style initialization: kernels ~ N(0, 2 / fan_in), zero biases.
/// Deterministic per seed.
template <class T>
JcaeModel<T> init_random(std::uint64_t seed) {
  JcaeModel<T> model;
  Rng rng(seed);
  for (auto& p : model.named_parameters()) {
    Tensor<T>& t = *p.tensor;
    if (t.rank() == 4) {
      const double fan_in = static_cast<double>(t.extent(1) * t.extent(2) * t.extent(3));
      const double stddev = std::sqrt(2.0 / fan_in);
      for (T& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
    } else {
      t.fill(T{0});
    }
  }
  return model;
}

/// Checks that `image` is (N,1,H,W), finite and within [0,1].
template <class T>
void validate_image(const Tensor<T>& image, const char* op) {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != 1 || s[0] == 0) {
    throw ShapeError(std::string(op) + ": expected a grayscale (N,1,H,W) image, got " + shape_str(s));
  }
  if (s[2] < 5 || s[3] < 5) {
    throw ShapeError(std::string(op) + ": image must be at least 5x5, got " + shape_str(s));
  }
  for (T v : image.data()) {
    if (!(v >= T{0} && v <= T{1})) {
      throw ValueError(std::string(op) + ": image values must be finite and normalized to [0,1]");
    }
  }
}

namespace graph {

/// Binds a layer's tensors as trainable parameters, or as frozen leaves when
/// the layer is const.
template <class T, class Layer>
Var<T> conv(Tape<T>& tape, Var<T> x, Layer& layer) {
  if constexpr (std::is_const_v<Layer>) {
    return ops::conv2d(x, tape.frozen(layer.kernel), tape.frozen(layer.bias));
  } else {
    return ops::conv2d(x, tape.parameter(layer.kernel), tape.parameter(layer.bias));
  }
}

template <class T, class Branch>
Var<T> encode_branch(Tape<T>& tape, Var<T> rgb, Branch& branch) {
  Var<T> h = ops::relu(conv<T>(tape, rgb, branch.conv1));
  h = ops::relu(conv<T>(tape, h, branch.conv2));
  h = ops::maxpool2(h).out;
  return ops::relu(conv<T>(tape, h, branch.conv3));
}

template <class T>
struct FeatureVars {
  Var<T> private_features;
  Var<T> common_features;
};

/// Private branch of `side` and the common branch, both applied to the
/// image replicated to three channels.
template <class T, class Model>
FeatureVars<T> encode(Tape<T>& tape, Model& model, Var<T> image, Side side) {
  Var<T> rgb = ops::replicate_channels(image, 3);
  auto& priv = side == Side::A ? model.private_a : model.private_b;
  return {encode_branch<T>(tape, rgb, priv), encode_branch<T>(tape, rgb, model.common)};
}

/// Decoder on the channel concatenation [common | private].
template <class T, class Model>
Var<T> decode(Tape<T>& tape, Model& model, Var<T> private_features, Var<T> common_features,
              std::size_t out_h, std::size_t out_w) {
  ops::detail::require_same_shape(private_features.shape(), common_features.shape(), "decode");
  Var<T> h = ops::concat_channels(common_features, private_features);
  h = ops::relu(conv<T>(tape, h, model.decoder.conv1));
  h = ops::upsample_nearest2(h, out_h, out_w);
  h = ops::relu(conv<T>(tape, h, model.decoder.conv2));
  return ops::sigmoid(conv<T>(tape, h, model.decoder.conv3));
}

/// decode(encode(image, side)).
template <class T, class Model>
Var<T> reconstruct(Tape<T>& tape, Model& model, Var<T> image, Side side) {
  const FeatureVars<T> f = encode(tape, model, image, side);
  return decode(tape, model, f.private_features, f.common_features, image.shape()[2],
                image.shape()[3]);
}

}  // namespace graph

template <class T>
FeatureBundle<T> encode(const JcaeModel<T>& model, const Tensor<T>& image, Side side) {
  validate_image(image, "encode");
  Tape<T> tape;
  const auto f = graph::encode(tape, model, tape.frozen(image), side);
  return {f.private_features.value(), f.common_features.value(), image.extent(2), image.extent(3)};
}

template <class T>
Tensor<T> decode(const JcaeModel<T>& model, const FeatureBundle<T>& bundle) {
  const Shape& ps = bundle.private_features.shape();
  if (ps.size() != 4 || ps[1] != JcaeModel<T>::kFeatureChannels) {
    throw ShapeError("decode: expected (N,128,h,w) features, got " + shape_str(ps));
  }
  ops::detail::require_same_shape(ps, bundle.common_features.shape(), "decode");
  const auto fits = [](std::size_t full, std::size_t half) {
    return full == 2 * half || full + 1 == 2 * half;
  };
  if (!fits(bundle.image_height, ps[2]) || !fits(bundle.image_width, ps[3])) {
    throw ShapeError("decode: features " + shape_str(ps) + " do not match image extent " +
                     std::to_string(bundle.image_height) + "x" + std::to_string(bundle.image_width));
  }
  Tape<T> tape;
  return graph::decode(tape, model, tape.frozen(bundle.private_features),
                       tape.frozen(bundle.common_features), bundle.image_height,
                       bundle.image_width)
      .value();
}

/// Reconstructions (decode(encode(a, A)), decode(encode(b, B))).
template <class T>
std::pair<Tensor<T>, Tensor<T>> reconstruct_pair(const JcaeModel<T>& model, const Tensor<T>& a,
                                                 const Tensor<T>& b) {
  ops::detail::require_same_shape(a.shape(), b.shape(), "reconstruct_pair");
  return {decode(model, encode(model, a, Side::A)), decode(model, encode(model, b, Side::B))};
}

}  // namespace jcae
