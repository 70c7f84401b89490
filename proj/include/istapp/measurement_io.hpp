#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "istapp/error.hpp"
#include "istapp/sampling.hpp"
#include "istapp/serialization.hpp"
#include "istapp/tensor.hpp"

namespace istapp {

/// Block measurements of one (padded) image plus what is needed to rebuild
/// the operator and undo the padding.
struct MeasurementFile {
  std::size_t block_size = 0;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  bool orthonormal = false;
  std::size_t image_height = 0;  // before padding
  std::size_t image_width = 0;
  Tensor values;  // M x rows x cols

  std::size_t measurements() const { return values.dim(0); }
  std::size_t rows() const { return values.dim(1); }
  std::size_t cols() const { return values.dim(2); }

  /// Regenerates the Gaussian operator from (B, ratio, seed).
  SamplingOperator regenerate_operator() const { return make_operator(block_size, ratio, seed, orthonormal); }
};

namespace measurement_io {

inline constexpr std::string_view magic = "ISTAMEAS";

/// "ISTAMEAS" | u64 LE header length | key=value header | f64 LE payload (M * rows * cols).
inline std::vector<unsigned char> encode(const MeasurementFile& m) {
  if (m.values.rank() != 3) throw ShapeError("measurements must be M x rows x cols");
  serial::KeyValues kv;
  kv.set("block_size", std::to_string(m.block_size));
  kv.set("ratio", serial::format_double(m.ratio));
  kv.set("measurements", std::to_string(m.measurements()));
  kv.set("seed", std::to_string(m.seed));
  kv.set("orthonormal", m.orthonormal ? "1" : "0");
  kv.set("rows", std::to_string(m.rows()));
  kv.set("cols", std::to_string(m.cols()));
  kv.set("image_height", std::to_string(m.image_height));
  kv.set("image_width", std::to_string(m.image_width));
  auto out = serial::frame(magic, kv.to_string());
  serial::put_f64(out, m.values.data());
  return out;
}

inline MeasurementFile decode(std::span<const unsigned char> bytes) {
  serial::Reader in(bytes);
  const serial::KeyValues kv = serial::unframe(in, magic, "measurement");
  MeasurementFile m;
  m.block_size = kv.get_uint("block_size");
  m.ratio = kv.get_double("ratio");
  m.seed = kv.get_uint("seed");
  m.orthonormal = kv.get_bool("orthonormal");
  m.image_height = kv.get_uint("image_height");
  m.image_width = kv.get_uint("image_width");
  const std::size_t M = kv.get_uint("measurements"), rows = kv.get_uint("rows"), cols = kv.get_uint("cols");
  if (m.block_size < 2 || !(m.ratio > 0.0 && m.ratio <= 1.0)) {
    throw FormatError("invalid block size or ratio", kv.offset_of("block_size"));
  }
  if (M != measurement_count(m.block_size, m.ratio)) {
    throw FormatError("measurement count does not match block size and ratio", kv.offset_of("measurements"));
  }
  if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 16) || m.image_height > rows * m.block_size ||
      m.image_width > cols * m.block_size || m.image_height == 0 || m.image_width == 0) {
    throw FormatError("inconsistent measurement grid", kv.offset_of("rows"));
  }
  const std::size_t count = M * rows * cols;
  if (in.remaining() / 8 < count) in.need(8 * count, "measurement payload");
  if (in.remaining() != 8 * count) throw FormatError("trailing bytes after measurement payload", in.pos() + 8 * count);
  m.values = Tensor({M, rows, cols});
  in.f64(m.values.data(), "measurement payload");
  return m;
}

inline void save(const std::filesystem::path& path, const MeasurementFile& m) {
  serial::write_file_atomic(path, encode(m));
}

inline MeasurementFile load(const std::filesystem::path& path) {
  const auto bytes = serial::read_file(path);
  try {
    return decode(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.reason(), e.offset());
  }
}

}  // namespace measurement_io

}  // namespace istapp
