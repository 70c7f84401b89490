#pragma once

// Independent reference implementations used only by tests. Nothing here
// calls into the im2col/GEMM path or the autodiff graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "istapp/tensor.hpp"

namespace istapp::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

/// Quadruple loop cross-correlation with explicit zero padding.
inline Tensor naive_conv2d(const Tensor& in, const Tensor& k, const Tensor* bias, std::size_t stride,
                           std::size_t pad) {
  const std::size_t C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const std::size_t Co = k.dim(0), ks = k.dim(2);
  const std::size_t Ho = (H + 2 * pad - ks) / stride + 1, Wo = (W + 2 * pad - ks) / stride + 1;
  Tensor out({Co, Ho, Wo});
  for (std::size_t co = 0; co < Co; ++co)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double s = bias ? (*bias)[co] : 0.0;
        for (std::size_t ci = 0; ci < C; ++ci)
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const long y = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long x = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) continue;
              s += k[((co * C + ci) * ks + ky) * ks + kx] * in.at(ci, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            }
        out.at(co, oy, ox) = s;
      }
  return out;
}

/// Adjoint of naive_conv2d with respect to its input, written as the
/// explicit transpose: scatter each output gradient back along the kernel.
inline Tensor naive_conv2d_adjoint(const Tensor& gout, const Tensor& k, std::size_t H, std::size_t W,
                                   std::size_t stride, std::size_t pad) {
  const std::size_t Co = k.dim(0), C = k.dim(1), ks = k.dim(2);
  Tensor gin({C, H, W});
  for (std::size_t co = 0; co < Co; ++co)
    for (std::size_t oy = 0; oy < gout.dim(1); ++oy)
      for (std::size_t ox = 0; ox < gout.dim(2); ++ox)
        for (std::size_t ci = 0; ci < C; ++ci)
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const long y = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long x = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) continue;
              gin.at(ci, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) +=
                  k[((co * C + ci) * ks + ky) * ks + kx] * gout.at(co, oy, ox);
            }
  return gin;
}

/// y = A x for A stored row-major m x n.
inline std::vector<double> matvec(const Tensor& a, const std::vector<double>& x) {
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> y(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i] += a[i * n + j] * x[j];
  return y;
}

/// y = A^T x.
inline std::vector<double> matvec_t(const Tensor& a, const std::vector<double>& x) {
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j] += a[i * n + j] * x[i];
  return y;
}

/// Block (bi, bj) of a 1 x H x W image flattened row-major.
inline std::vector<double> block_vector(const Tensor& img, std::size_t bi, std::size_t bj, std::size_t B) {
  std::vector<double> v;
  v.reserve(B * B);
  for (std::size_t y = 0; y < B; ++y)
    for (std::size_t x = 0; x < B; ++x) v.push_back(img.at(0, bi * B + y, bj * B + x));
  return v;
}

/// Blockwise phi * vec(block) for every block; result is M x (H/B) x (W/B).
inline Tensor blockwise_measure(const Tensor& phi, const Tensor& img, std::size_t B) {
  const std::size_t M = phi.dim(0), h = img.dim(1) / B, w = img.dim(2) / B;
  Tensor out({M, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto y = matvec(phi, block_vector(img, i, j, B));
      for (std::size_t r = 0; r < M; ++r) out.at(r, i, j) = y[r];
    }
  return out;
}

/// Blockwise phi^T y written back row-major into each block.
inline Tensor blockwise_transpose(const Tensor& phi, const Tensor& meas, std::size_t B) {
  const std::size_t M = phi.dim(0), h = meas.dim(1), w = meas.dim(2);
  Tensor out({1, h * B, w * B});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      std::vector<double> y(M);
      for (std::size_t r = 0; r < M; ++r) y[r] = meas.at(r, i, j);
      const auto x = matvec_t(phi, y);
      for (std::size_t p = 0; p < B * B; ++p) out.at(0, i * B + p / B, j * B + p % B) = x[p];
    }
  return out;
}

/// Central finite difference of f at entry i of x.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double saved = x;
  x = saved + h;
  const double fp = f();
  x = saved - h;
  const double fm = f();
  x = saved;
  return (fp - fm) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Scalar Adam recurrence straight from its textbook statement.
struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0.0, v = 0.0;
  int t = 0;

  double step(double p, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return p - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace istapp::testing
