#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "istapp/image_io.hpp"

namespace istapp::testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("istapp_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Smooth synthetic scene: a few random sinusoids, edges and a disc, already
/// quantized to 8 bits so it survives a write/read cycle unchanged.
inline ImagePlane synthetic_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fx = 1.0 + 4.0 * u(rng), fy = 1.0 + 4.0 * u(rng), ph = 6.28 * u(rng);
  const double cx = u(rng) * static_cast<double>(w), cy = u(rng) * static_cast<double>(h);
  const double rad = (0.15 + 0.25 * u(rng)) * static_cast<double>(std::min(h, w));
  const double edge = u(rng) * static_cast<double>(w), base = 0.2 + 0.3 * u(rng);
  ImagePlane img({1, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double xs = static_cast<double>(x) / static_cast<double>(w);
      const double ys = static_cast<double>(y) / static_cast<double>(h);
      double v = base + 0.15 * std::sin(6.28 * fx * xs + ph) * std::cos(6.28 * fy * ys);
      if (static_cast<double>(x) > edge) v += 0.2;
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      if (dx * dx + dy * dy < rad * rad) v += 0.25;
      img.at(0, y, x) = v;
    }
  return pgm::quantized(img);
}

/// Writes `count` synthetic images named img00.pgm, img01.pgm, ... into dir.
inline std::vector<std::filesystem::path> write_image_set(const std::filesystem::path& dir, std::size_t count,
                                                          std::size_t h, std::size_t w, std::uint64_t seed) {
  std::vector<std::filesystem::path> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = std::string("img") + (i < 10 ? "0" : "") + std::to_string(i) + ".pgm";
    out.push_back(dir / name);
    pgm::write(out.back(), synthetic_image(h, w, seed + i));
  }
  return out;
}

}  // namespace istapp::testing
