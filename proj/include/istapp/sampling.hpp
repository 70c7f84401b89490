#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "istapp/autodiff.hpp"
#include "istapp/error.hpp"
#include "istapp/ops.hpp"
#include "istapp/tensor.hpp"

namespace istapp {

/// A fixed block sensing matrix and its two convolutional realizations.
///
/// `phi` is M x N with N = B*B. `w_phi` holds the same values viewed as M
/// kernels of size 1 x B x B (row-major block flattening), and `w_phi_t` is
/// phi transposed, viewed as N pointwise kernels over the M measurement channels.
struct SamplingOperator {
  std::size_t block_size = 0;
  double ratio = 0.0;
  std::size_t measurements = 0;
  std::uint64_t seed = 0;
  bool orthonormal = false;
  Tensor phi;
  Tensor w_phi;
  Tensor w_phi_t;

  std::size_t signal_size() const { return block_size * block_size; }
};

inline std::size_t measurement_count(std::size_t block_size, double ratio) {
  const auto n = static_cast<double>(block_size * block_size);
  const auto m = static_cast<long long>(std::llround(ratio * n));
  return static_cast<std::size_t>(std::clamp<long long>(m, 1, static_cast<long long>(block_size * block_size)));
}

namespace detail {

inline void orthonormalize_rows(Tensor& phi) {
  const std::size_t M = phi.dim(0), N = phi.dim(1);
  // Modified Gram-Schmidt, applied twice for a clean orthonormal set.
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < M; ++i) {
      double* ri = phi.raw() + i * N;
      for (std::size_t j = 0; j < i; ++j) {
        const double* rj = phi.raw() + j * N;
        double d = 0.0;
        for (std::size_t k = 0; k < N; ++k) d += ri[k] * rj[k];
        for (std::size_t k = 0; k < N; ++k) ri[k] -= d * rj[k];
      }
      double nrm = 0.0;
      for (std::size_t k = 0; k < N; ++k) nrm += ri[k] * ri[k];
      nrm = std::sqrt(nrm);
      if (nrm == 0.0) throw NumericError("orthonormalize: rank-deficient sampling matrix");
      for (std::size_t k = 0; k < N; ++k) ri[k] /= nrm;
    }
  }
}

}  // namespace detail

/// Builds the kernels from an explicit M x N matrix.
inline SamplingOperator operator_from_matrix(std::size_t block_size, double ratio, std::uint64_t seed, Tensor phi,
                                             bool orthonormal = false) {
  const std::size_t N = block_size * block_size;
  if (phi.rank() != 2 || phi.dim(1) != N || phi.dim(0) < 1 || phi.dim(0) > N) {
    throw ShapeError("sampling matrix " + shape_string(phi.shape()) + " incompatible with block size " +
                     std::to_string(block_size));
  }
  const std::size_t M = phi.dim(0);
  SamplingOperator op;
  op.block_size = block_size;
  op.ratio = ratio;
  op.measurements = M;
  op.seed = seed;
  op.orthonormal = orthonormal;
  op.w_phi = phi.reshaped({M, 1, block_size, block_size});
  op.w_phi_t = Tensor({N, M, 1, 1});
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t c = 0; c < N; ++c) op.w_phi_t[c * M + r] = phi[r * N + c];
  op.phi = std::move(phi);
  return op;
}

/// Gaussian sensing matrix with i.i.d. N(0, 1/N) entries, M = round(ratio * N).
/// `orthonormalize` replaces the rows by an orthonormal basis of their span
/// (test fixture: then phi * phi^T = I).
inline SamplingOperator make_operator(std::size_t block_size, double ratio, std::uint64_t seed,
                                      bool orthonormalize = false) {
  if (block_size < 2) throw DomainError("block size must be at least 2, got " + std::to_string(block_size));
  if (!(ratio > 0.0 && ratio <= 1.0)) throw DomainError("CS ratio must lie in (0, 1], got " + std::to_string(ratio));
  const std::size_t N = block_size * block_size;
  const std::size_t M = measurement_count(block_size, ratio);
  Tensor phi({M, N});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(N)));
  for (double& v : phi.data()) v = gauss(rng);
  if (orthonormalize) detail::orthonormalize_rows(phi);
  return operator_from_matrix(block_size, ratio, seed, std::move(phi), orthonormalize);
}

/// One independent operator per ratio; operator i is seeded with master_seed + i.
inline std::vector<SamplingOperator> make_ratio_set(std::size_t block_size, const std::vector<double>& ratios,
                                                    std::uint64_t master_seed, bool orthonormalize = false) {
  if (ratios.empty()) throw DomainError("ratio set must not be empty");
  std::vector<SamplingOperator> ops;
  ops.reserve(ratios.size());
  for (std::size_t i = 0; i < ratios.size(); ++i)
    ops.push_back(make_operator(block_size, ratios[i], master_seed + i, orthonormalize));
  return ops;
}

/// Y = W_phi * X with stride B: every B x B block maps to phi * vec(block).
inline Var measure(const SamplingOperator& op, const Var& image) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != 1) throw ShapeError("measure: image must be 1 x H x W, got " + shape_string(s));
  if (s[1] % op.block_size != 0 || s[2] % op.block_size != 0 || s[1] == 0 || s[2] == 0) {
    throw ShapeError("measure: image " + shape_string(s) + " is not a multiple of block size " +
                     std::to_string(op.block_size));
  }
  const auto b = static_cast<int>(op.block_size);
  return ops::conv2d(image, Var(op.w_phi), std::nullopt, b, 0);
}

/// X0 = PixelShuffle(W_phi^T * Y): every measurement column maps to phi^T y.
inline Var init_transpose(const SamplingOperator& op, const Var& measurements) {
  const auto& s = measurements.shape();
  if (s.size() != 3 || s[0] != op.measurements) {
    throw ShapeError("init_transpose: expected " + std::to_string(op.measurements) +
                     " measurement channels, got " + shape_string(s));
  }
  return ops::pixel_shuffle(ops::conv1x1(measurements, Var(op.w_phi_t)), static_cast<int>(op.block_size));
}

inline Tensor measure(const SamplingOperator& op, const Tensor& image) { return measure(op, Var(image)).value(); }

inline Tensor init_transpose(const SamplingOperator& op, const Tensor& measurements) {
  return init_transpose(op, Var(measurements)).value();
}

/// Largest eigenvalue of phi^T phi by power iteration.
inline double lipschitz_constant(const SamplingOperator& op, int iterations = 50, std::uint64_t seed = 7) {
  const std::size_t M = op.measurements, N = op.signal_size();
  std::vector<double> x(N), y(M);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : x) v = gauss(rng);
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    double nrm = std::sqrt(squared_norm(x));
    for (double& v : x) v /= nrm;
    for (std::size_t r = 0; r < M; ++r) y[r] = dot(op.phi.data().subspan(r * N, N), x);
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t r = 0; r < M; ++r)
      for (std::size_t c = 0; c < N; ++c) x[c] += op.phi[r * N + c] * y[r];
    lambda = std::sqrt(squared_norm(x));
  }
  return lambda;
}

}  // namespace istapp
