#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "istapp/error.hpp"
#include "istapp/tensor.hpp"

namespace istapp {

/// Grayscale image as a 1 x H x W tensor with intensities in [0, 1].
using ImagePlane = Tensor;

namespace pgm {

namespace detail {

struct Cursor {
  const std::vector<unsigned char>& bytes;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::size_t read_uint(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      if (v > (std::numeric_limits<std::uint32_t>::max() - 9) / 10) throw FormatError(std::string(what) + " overflows", start);
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("expected ") + what, start);
    return v;
  }
};

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decodes a binary (P5) graymap, 8- or 16-bit, scaling by 1/maxval.
inline ImagePlane decode(const std::vector<unsigned char>& bytes) {
  detail::Cursor cur{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary graymap (P5)", 0);
  cur.pos = 2;
  const std::size_t width = cur.read_uint("width");
  const std::size_t height = cur.read_uint("height");
  const std::size_t maxval = cur.read_uint("maxval");
  if (width == 0 || height == 0) throw FormatError("zero image dimension", cur.pos);
  if (maxval == 0 || maxval > 65535) throw FormatError("maxval must be in [1, 65535]", cur.pos);
  if (width > (1u << 16) || height > (1u << 16)) throw FormatError("image dimensions too large", cur.pos);
  if (cur.pos >= bytes.size() || !std::isspace(bytes[cur.pos])) throw FormatError("missing header terminator", cur.pos);
  ++cur.pos;

  const std::size_t bpp = maxval < 256 ? 1 : 2;
  const std::size_t need = width * height * bpp;
  if (bytes.size() - cur.pos < need) {
    throw FormatError("short payload: need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - cur.pos),
                      bytes.size());
  }
  ImagePlane img({1, height, width});
  const auto scale = static_cast<double>(maxval);
  const unsigned char* p = bytes.data() + cur.pos;
  for (std::size_t i = 0; i < width * height; ++i) {
    const std::size_t v = bpp == 1 ? p[i] : (static_cast<std::size_t>(p[2 * i]) << 8) | p[2 * i + 1];
    if (v > maxval) throw FormatError("sample exceeds maxval", cur.pos + i * bpp);
    img[i] = static_cast<double>(v) / scale;
  }
  return img;
}

inline ImagePlane read(const std::filesystem::path& path) {
  try {
    return decode(detail::slurp(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.reason(), e.offset());
  }
}

/// clamp to [0, 1], scale by 255, round half away from zero.
inline unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<unsigned char> encode(const ImagePlane& img) {
  if (img.rank() != 3 || img.dim(0) != 1) throw ShapeError("pgm: image must be 1 x H x W, got " + shape_string(img.shape()));
  const std::string header = "P5\n" + std::to_string(img.dim(2)) + " " + std::to_string(img.dim(1)) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(header.size() + img.size());
  for (double v : img.data()) out.push_back(quantize(v));
  return out;
}

inline void write(const std::filesystem::path& path, const ImagePlane& img) {
  const auto bytes = encode(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

/// The image as it would come back from write() followed by read().
inline ImagePlane quantized(const ImagePlane& img) {
  ImagePlane out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<double>(quantize(img[i])) / 255.0;
  return out;
}

}  // namespace pgm

/// Index into [0, n) under symmetric reflection without edge repeat
/// (..., 2, 1, 0, 1, 2, ..., n-1, n-2, ...).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

struct PaddedImage {
  ImagePlane image;
  std::size_t height = 0;  // original extent
  std::size_t width = 0;
};

/// Reflect-pads right and bottom up to the next multiples of the block size.
inline PaddedImage pad_to_blocks(const ImagePlane& img, std::size_t block_size) {
  if (block_size < 2) throw DomainError("block size must be at least 2");
  if (img.rank() != 3 || img.dim(0) != 1) throw ShapeError("pad_to_blocks: image must be 1 x H x W");
  const std::size_t H = img.dim(1), W = img.dim(2);
  const std::size_t PH = (H + block_size - 1) / block_size * block_size;
  const std::size_t PW = (W + block_size - 1) / block_size * block_size;
  PaddedImage out{ImagePlane({1, PH, PW}), H, W};
  for (std::size_t y = 0; y < PH; ++y)
    for (std::size_t x = 0; x < PW; ++x)
      out.image.at(0, y, x) =
          img.at(0, reflect_index(static_cast<std::ptrdiff_t>(y), H), reflect_index(static_cast<std::ptrdiff_t>(x), W));
  return out;
}

inline ImagePlane crop_back(const ImagePlane& padded, std::size_t height, std::size_t width) {
  if (padded.rank() != 3 || padded.dim(0) != 1 || height > padded.dim(1) || width > padded.dim(2)) {
    throw ShapeError("crop_back: " + std::to_string(height) + "x" + std::to_string(width) + " outside " +
                     shape_string(padded.shape()));
  }
  ImagePlane out({1, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) out.at(0, y, x) = padded.at(0, y, x);
  return out;
}

}  // namespace istapp
