#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "jcae/common.hpp"
#include "jcae/tensor.hpp"

namespace jcae {

class ImageError : public Error {
 public:
  using Error::Error;
};

/// Single-channel image, row-major, values nominally in [0,1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h, fill) {}

  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t size() const { return pixels.size(); }
  bool same_size(const Image& o) const { return width == o.width && height == o.height; }
};

/// round(v * 255) clamped to [0,255].
inline std::uint8_t quantize_pixel(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

inline std::vector<std::uint8_t> quantize(const Image& img) {
  std::vector<std::uint8_t> out(img.size());
  std::transform(img.pixels.begin(), img.pixels.end(), out.begin(), quantize_pixel);
  return out;
}

inline Image from_bytes(std::size_t width, std::size_t height, const std::vector<std::uint8_t>& bytes,
                        double max_value = 255.0) {
  Image img(width, height);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<double>(bytes[i]) / max_value;
  return img;
}

namespace detail {

inline std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

inline std::size_t pgm_header_field(const std::string& data, std::size_t& pos, const std::string& path) {
  for (;;) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos < data.size() && data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t value = 0;
  std::size_t digits = 0;
  while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) {
    value = value * 10 + static_cast<std::size_t>(data[pos] - '0');
    ++pos;
    if (++digits > 9) throw ImageError(path + ": PGM header field too large");
  }
  if (digits == 0) throw ImageError(path + ": malformed PGM header");
  return value;
}

}  // namespace detail

/// Binary PGM (P5), 8- or 16-bit; values divided by maxval.
inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (data.size() < 2 || data[0] != 'P' || data[1] != '5') {
    throw ImageError(name + ": not a binary PGM (P5) file");
  }
  std::size_t pos = 2;
  const std::size_t width = detail::pgm_header_field(data, pos, name);
  const std::size_t height = detail::pgm_header_field(data, pos, name);
  const std::size_t maxval = detail::pgm_header_field(data, pos, name);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
    throw ImageError(name + ": invalid PGM dimensions or maxval");
  }
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
    throw ImageError(name + ": malformed PGM header");
  }
  ++pos;
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  if (data.size() - pos < width * height * bytes_per) {
    throw ImageError(name + ": truncated PGM payload");
  }
  Image img(width, height);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + pos);
  for (std::size_t i = 0; i < width * height; ++i) {
    const unsigned v = bytes_per == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
    if (v > maxval) throw ImageError(name + ": PGM sample exceeds maxval");
    img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  const auto bytes = quantize(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("failed writing " + path.string());
}

/// Any PNG, converted to 8-bit grayscale by libpng.
inline Image read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw ImageError(path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageError(path.string() + ": " + msg);
  }
  return from_bytes(image.width, image.height, bytes);
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  const auto bytes = quantize(img);
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw ImageError(path.string() + ": " + image.message);
  }
}

inline bool is_supported_image(const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  return ext == ".pgm" || ext == ".png";
}

/// Reads PGM or PNG, selected by extension.
inline Image read_image(const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".png") return read_png(path);
  throw ImageError(path.string() + ": unsupported image extension (expected .pgm or .png)");
}

/// Writes PGM or PNG, selected by extension, quantized to 8 bits.
inline void write_image(const std::filesystem::path& path, const Image& img) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".pgm") return write_pgm(path, img);
  if (ext == ".png") return write_png(path, img);
  throw ImageError(path.string() + ": unsupported image extension (expected .pgm or .png)");
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
inline Image resize_bilinear(const Image& src, std::size_t width, std::size_t height) {
  if (src.width == 0 || src.height == 0 || width == 0 || height == 0) {
    throw ImageError("resize_bilinear: empty image or target");
  }
  if (src.width == width && src.height == height) return src;
  Image out(width, height);
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  const auto coord = [](std::size_t dst, double scale, std::size_t extent, std::size_t& i0,
                        std::size_t& i1, double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, extent - 1);
    frac = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, sy, src.height, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, sx, src.width, x0, x1, fx);
      const double top = src.at(y0, x0) + fx * (src.at(y0, x1) - src.at(y0, x0));
      const double bottom = src.at(y1, x0) + fx * (src.at(y1, x1) - src.at(y1, x0));
      out.at(y, x) = top + fy * (bottom - top);
    }
  }
  return out;
}

/// (1,1,H,W) tensor view of an image.
template <class T>
Tensor<T> to_tensor(const Image& img) {
  std::vector<T> data(img.size());
  std::transform(img.pixels.begin(), img.pixels.end(), data.begin(),
                 [](double v) { return static_cast<T>(v); });
  return Tensor<T>(Shape{1, 1, img.height, img.width}, std::move(data));
}

template <class T>
Image to_image(const Tensor<T>& t) {
  const Shape& s = t.shape();
  if (!(s.size() == 4 && s[0] == 1 && s[1] == 1) && s.size() != 2) {
    throw ShapeError("to_image: expected (1,1,H,W) or (H,W), got " + shape_str(s));
  }
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  Image img(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<double>(t[i]);
  return img;
}

}  // namespace jcae
