#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>

#include "istapp/error.hpp"
#include "istapp/image_io.hpp"
#include "istapp/tensor.hpp"

namespace istapp {

/// PSNR in dB with peak 1.0. A perfect match is flagged rather than
/// represented by a floating-point infinity.
struct Psnr {
  double db = 0.0;
  bool infinite = false;

  std::string to_string(int precision = 2) const {
    if (infinite) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, db);
    return buf;
  }

  friend bool operator<(const Psnr& a, const Psnr& b) {
    if (a.infinite || b.infinite) return !a.infinite && b.infinite;
    return a.db < b.db;
  }
};

inline double mean_squared_error(const ImagePlane& x, const ImagePlane& ref) {
  if (x.shape() != ref.shape()) {
    throw ShapeError("psnr: " + shape_string(x.shape()) + " vs " + shape_string(ref.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - ref[i];
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

inline Psnr psnr_from_mse(double mse) {
  if (mse == 0.0) return Psnr{0.0, true};
  return Psnr{10.0 * std::log10(1.0 / mse), false};
}

inline Psnr psnr(const ImagePlane& x, const ImagePlane& ref) { return psnr_from_mse(mean_squared_error(x, ref)); }

/// Mean |difference| over neighbour pairs straddling block boundaries minus
/// the same mean over pairs inside blocks. Positive values mean seams.
struct BlockArtifactScore {
  double raw = 0.0;
  double clamped() const { return raw > 0.0 ? raw : 0.0; }
};

inline BlockArtifactScore block_artifact_score(const ImagePlane& img, std::size_t block_size) {
  if (img.rank() != 3 || img.dim(0) != 1) throw ShapeError("block_artifact_score: image must be 1 x H x W");
  const std::size_t H = img.dim(1), W = img.dim(2);
  if (block_size < 1 || H % block_size != 0 || W % block_size != 0) {
    throw ShapeError("block_artifact_score: image " + shape_string(img.shape()) + " is not a multiple of block size " +
                     std::to_string(block_size));
  }
  double boundary = 0.0, interior = 0.0;
  std::size_t nb = 0, ni = 0;
  auto visit = [&](double a, double b, bool straddles) {
    if (straddles) {
      boundary += std::abs(a - b);
      ++nb;
    } else {
      interior += std::abs(a - b);
      ++ni;
    }
  };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x + 1 < W; ++x) visit(img.at(0, y, x), img.at(0, y, x + 1), (x + 1) % block_size == 0);
  for (std::size_t y = 0; y + 1 < H; ++y)
    for (std::size_t x = 0; x < W; ++x) visit(img.at(0, y, x), img.at(0, y + 1, x), (y + 1) % block_size == 0);
  const double mb = nb ? boundary / static_cast<double>(nb) : 0.0;
  const double mi = ni ? interior / static_cast<double>(ni) : 0.0;
  return BlockArtifactScore{nb ? mb - mi : 0.0};
}

}  // namespace istapp
