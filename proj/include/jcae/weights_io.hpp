#pragma once

// Weight file layout (all integers little-endian):
//
//   magic        8 bytes  "JCAEW1\0\0"
//   layer count  u32
//   per layer:
//     name length  u16
//     name         UTF-8 bytes
//     rank         u8
//     extents      rank x u32
//     values       prod(extents) x IEEE-754 binary32
//
// Kernels are ordered (O, I, kH, kW); biases are rank 1.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jcae/model.hpp"
#include "jcae/tensor.hpp"

namespace jcae {

inline constexpr std::array<char, 8> kWeightMagic = {'J', 'C', 'A', 'E', 'W', '1', '\0', '\0'};

/// Error while reading or validating a weight file. `layer()` names the
/// offending layer when one is known.
class WeightFileError : public Error {
 public:
  WeightFileError(const std::string& message, std::string layer = {})
      : Error(layer.empty() ? message : "layer '" + layer + "': " + message), layer_(std::move(layer)) {}
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

struct WeightRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct WeightFile {
  std::vector<WeightRecord> layers;

  const WeightRecord* find(std::string_view name) const {
    for (const auto& l : layers)
      if (l.name == name) return &l;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t u8() { return bytes_[pos_++]; }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_weight_file(const WeightFile& file) {
  detail::ByteWriter w;
  w.raw(kWeightMagic.data(), kWeightMagic.size());
  w.u32(static_cast<std::uint32_t>(file.layers.size()));
  std::set<std::string> seen;
  for (const auto& layer : file.layers) {
    if (!seen.insert(layer.name).second) throw WeightFileError("duplicate layer name", layer.name);
    if (layer.name.size() > 0xFFFF) throw WeightFileError("name too long", layer.name);
    if (layer.shape.empty() || layer.shape.size() > 0xFF) throw WeightFileError("invalid rank", layer.name);
    if (shape_numel(layer.shape) != layer.values.size()) {
      throw WeightFileError("extent product does not match value count", layer.name);
    }
    w.u16(static_cast<std::uint16_t>(layer.name.size()));
    w.raw(layer.name.data(), layer.name.size());
    w.u8(static_cast<std::uint8_t>(layer.shape.size()));
    for (std::size_t e : layer.shape) w.u32(static_cast<std::uint32_t>(e));
    for (float v : layer.values) w.f32(v);
  }
  return w.take();
}

inline WeightFile decode_weight_file(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (!r.has(kWeightMagic.size() + 4) ||
      std::memcmp(bytes.data(), kWeightMagic.data(), kWeightMagic.size()) != 0) {
    throw WeightFileError("bad magic: not a JCAEW1 weight file");
  }
  r.str(kWeightMagic.size());
  const std::uint32_t count = r.u32();
  WeightFile file;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string ordinal = "#" + std::to_string(i);
    if (!r.has(2)) throw WeightFileError("truncated before name length", ordinal);
    const std::uint16_t name_len = r.u16();
    if (!r.has(name_len)) throw WeightFileError("truncated inside name", ordinal);
    WeightRecord rec;
    rec.name = r.str(name_len);
    if (!seen.insert(rec.name).second) throw WeightFileError("duplicate layer name", rec.name);
    if (!r.has(1)) throw WeightFileError("truncated before rank", rec.name);
    const std::uint8_t rank = r.u8();
    if (rank == 0) throw WeightFileError("rank must be at least 1", rec.name);
    if (!r.has(4u * rank)) throw WeightFileError("truncated inside extents", rec.name);
    std::uint64_t total = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::uint32_t e = r.u32();
      rec.shape.push_back(e);
      total *= e;
      if (total > (std::uint64_t{1} << 34)) throw WeightFileError("extents too large", rec.name);
    }
    if (r.remaining() / 4 < total) {
      throw WeightFileError("truncated payload: expected " + std::to_string(total) + " values, " +
                                std::to_string(r.remaining() / 4) + " available",
                            rec.name);
    }
    rec.values.resize(static_cast<std::size_t>(total));
    for (float& v : rec.values) v = r.f32();
    file.layers.push_back(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw WeightFileError(std::to_string(r.remaining()) + " trailing bytes after last layer");
  }
  return file;
}

inline void write_weight_file(const std::filesystem::path& path, const WeightFile& file) {
  const auto bytes = encode_weight_file(file);
  // Written beside the target and renamed, so a failed write keeps the old file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw WeightFileError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw WeightFileError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline WeightFile read_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightFileError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_weight_file(bytes);
}

template <class T>
WeightFile to_weight_file(const JcaeModel<T>& model) {
  WeightFile file;
  for (const auto& p : model.named_parameters()) {
    WeightRecord rec{p.name, p.tensor->shape(), {}};
    rec.values.reserve(p.tensor->size());
    for (T v : p.tensor->data()) rec.values.push_back(static_cast<float>(v));
    file.layers.push_back(std::move(rec));
  }
  return file;
}

namespace detail {

template <class T>
void assign_checked(Tensor<T>& dst, const WeightRecord* rec, const std::string& name) {
  if (!rec) throw WeightFileError("missing (expected shape " + shape_str(dst.shape()) + ")", name);
  if (rec->shape != dst.shape()) {
    throw WeightFileError("expected shape " + shape_str(dst.shape()) + ", found " + shape_str(rec->shape),
                          name);
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec->values[i]);
}

}  // namespace detail

/// Builds a model from a checkpoint; every canonical parameter must be present
/// with its exact shape.
template <class T>
JcaeModel<T> from_weight_file(const WeightFile& file) {
  JcaeModel<T> model;
  for (auto& p : model.named_parameters()) detail::assign_checked(*p.tensor, file.find(p.name), p.name);
  return model;
}

template <class T>
void save_checkpoint(const JcaeModel<T>& model, const std::filesystem::path& path) {
  write_weight_file(path, to_weight_file(model));
}

template <class T = float>
JcaeModel<T> load_checkpoint(const std::filesystem::path& path) {
  return from_weight_file<T>(read_weight_file(path));
}

/// Source layer names of the transferred VGG19 head, in encoder order.
inline constexpr std::array<const char*, 3> kVggLayers = {"vgg.block1_conv1", "vgg.block1_conv2",
                                                          "vgg.block2_conv1"};

/// Copies VGG19 block1_conv1, block1_conv2 and block2_conv1 (kernels and
/// biases) into conv1..conv3 of all three encoder branches. The decoder is
/// left untouched. Validates everything before modifying the model.
template <class T>
void init_from_vgg(JcaeModel<T>& model, const WeightFile& file) {
  JcaeModel<T> staged = model;
  EncoderBranch<T>& head = staged.common;
  ConvLayer<T>* layers[3] = {&head.conv1, &head.conv2, &head.conv3};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string base = kVggLayers[i];
    detail::assign_checked(layers[i]->kernel, file.find(base + ".kernel"), base + ".kernel");
    detail::assign_checked(layers[i]->bias, file.find(base + ".bias"), base + ".bias");
  }
  model.common = head;
  model.private_a = head;
  model.private_b = head;
}

template <class T>
void init_from_vgg(JcaeModel<T>& model, const std::filesystem::path& path) {
  init_from_vgg(model, read_weight_file(path));
}

}  // namespace jcae
