#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "istapp/autodiff.hpp"
#include "istapp/error.hpp"
#include "istapp/tensor.hpp"

/// Differentiable operations on Vars. Each function computes its forward
/// value eagerly and, when any input is tracked, records a backward rule.
namespace istapp::ops {

namespace detail {

struct ConvGeometry {
  std::size_t in_channels, height, width;
  std::size_t out_channels, kernel;
  std::size_t stride, padding;
  std::size_t out_height, out_width;

  std::size_t rows() const { return in_channels * kernel * kernel; }
  std::size_t pixels() const { return out_height * out_width; }
  bool pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

inline ConvGeometry conv_geometry(const Shape& in, const Shape& k, int stride, int padding) {
  if (in.size() != 3) throw ShapeError("conv2d: input must be C x H x W, got " + shape_string(in));
  if (k.size() != 4) throw ShapeError("conv2d: kernels must be Cout x Cin x k x k, got " + shape_string(k));
  if (k[1] != in[0]) {
    throw ShapeError("conv2d: input has " + std::to_string(in[0]) + " channels, kernels expect " +
                     std::to_string(k[1]));
  }
  if (k[2] != k[3]) throw ShapeError("conv2d: kernels must be square, got " + shape_string(k));
  if (stride <= 0) throw DomainError("conv2d: stride must be positive, got " + std::to_string(stride));
  if (padding < 0) throw DomainError("conv2d: padding must be nonnegative, got " + std::to_string(padding));
  ConvGeometry g{in[0], in[1], in[2], k[0], k[2], static_cast<std::size_t>(stride),
                 static_cast<std::size_t>(padding), 0, 0};
  if (g.height + 2 * g.padding < g.kernel || g.width + 2 * g.padding < g.kernel) {
    throw ShapeError("conv2d: kernel " + std::to_string(g.kernel) + " larger than padded input " +
                     shape_string(in));
  }
  g.out_height = (g.height + 2 * g.padding - g.kernel) / g.stride + 1;
  g.out_width = (g.width + 2 * g.padding - g.kernel) / g.stride + 1;
  return g;
}

// col[(ci*k + ky)*k + kx][oy*Wo + ox] = padded_in[ci][oy*s + ky][ox*s + kx]
inline void im2col(const ConvGeometry& g, const double* in, double* col) {
  const std::size_t P = g.pixels();
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        double* row = col + ((ci * g.kernel + ky) * g.kernel + kx) * P;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          double* dst = row + oy * g.out_width;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_width, 0.0);
            continue;
          }
          const double* src = in + (ci * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                     static_cast<std::ptrdiff_t>(g.padding);
            dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0 : src[x];
          }
        }
      }
    }
  }
}

inline void col2im_add(const ConvGeometry& g, const double* col, double* in) {
  const std::size_t P = g.pixels();
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const double* row = col + ((ci * g.kernel + ky) * g.kernel + kx) * P;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          const double* src = row + oy * g.out_width;
          double* dst = in + (ci * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                     static_cast<std::ptrdiff_t>(g.padding);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width)) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

inline constexpr std::size_t kPixelTile = 512;

// out[co][p] = bias[co] + sum_r w[co][r] * col[r][p]
inline void conv_gemm(const ConvGeometry& g, const double* w, const double* bias, const double* col,
                      double* out) {
  const std::size_t P = g.pixels(), R = g.rows();
  for (std::size_t p0 = 0; p0 < P; p0 += kPixelTile) {
    const std::size_t pn = std::min(kPixelTile, P - p0);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      double* o = out + co * P + p0;
      const double b = bias ? bias[co] : 0.0;
      for (std::size_t j = 0; j < pn; ++j) o[j] = b;
      const double* wr = w + co * R;
      for (std::size_t r = 0; r < R; ++r) {
        const double wv = wr[r];
        const double* c = col + r * P + p0;
        for (std::size_t j = 0; j < pn; ++j) o[j] += wv * c[j];
      }
    }
  }
}

// gcol[r][p] += sum_co w[co][r] * gout[co][p]
inline void conv_gemm_input_grad(const ConvGeometry& g, const double* w, const double* gout, double* gcol) {
  const std::size_t P = g.pixels(), R = g.rows();
  for (std::size_t p0 = 0; p0 < P; p0 += kPixelTile) {
    const std::size_t pn = std::min(kPixelTile, P - p0);
    for (std::size_t r = 0; r < R; ++r) {
      double* gc = gcol + r * P + p0;
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        const double wv = w[co * R + r];
        const double* go = gout + co * P + p0;
        for (std::size_t j = 0; j < pn; ++j) gc[j] += wv * go[j];
      }
    }
  }
}

// gw[co][r] += sum_p gout[co][p] * col[r][p]
inline void conv_gemm_weight_grad(const ConvGeometry& g, const double* gout, const double* col, double* gw) {
  const std::size_t P = g.pixels(), R = g.rows();
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    const double* go = gout + co * P;
    for (std::size_t r = 0; r < R; ++r) {
      const double* c = col + r * P;
      double s = 0.0;
      for (std::size_t p = 0; p < P; ++p) s += go[p] * c[p];
      gw[co * R + r] += s;
    }
  }
}

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

inline void require_scalar(const char* op, const Var& s) {
  if (s.value().size() != 1) {
    throw ShapeError(std::string(op) + ": expected a scalar, got " + shape_string(s.shape()));
  }
}

}  // namespace detail

/// Cross-correlation (no kernel flip) of a C x H x W input with
/// Cout x C x k x k kernels, zero padding, optional per-channel bias.
inline Var conv2d(const Var& input, const Var& kernels, const std::optional<Var>& bias = std::nullopt,
                  int stride = 1, int padding = 0) {
  const auto g = detail::conv_geometry(input.shape(), kernels.shape(), stride, padding);
  if (bias && (bias->value().size() != g.out_channels)) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias->value().size()) + " != " +
                     std::to_string(g.out_channels) + " output channels");
  }

  auto in = input.shared_value();
  auto w = kernels.shared_value();
  Tensor out({g.out_channels, g.out_height, g.out_width});
  const double* b = bias ? bias->value().raw() : nullptr;
  if (g.pointwise()) {
    detail::conv_gemm(g, w->raw(), b, in->raw(), out.raw());
  } else {
    std::vector<double> col(g.rows() * g.pixels());
    detail::im2col(g, in->raw(), col.data());
    detail::conv_gemm(g, w->raw(), b, col.data(), out.raw());
  }

  auto backward = [g, in, w](const Tensor& gout, std::span<Tensor* const> gin) {
    Tensor* g_in = gin[0];
    Tensor* g_w = gin[1];
    Tensor* g_b = gin.size() > 2 ? gin[2] : nullptr;
    if (g.pointwise()) {
      if (g_in) detail::conv_gemm_input_grad(g, w->raw(), gout.raw(), g_in->raw());
      if (g_w) detail::conv_gemm_weight_grad(g, gout.raw(), in->raw(), g_w->raw());
    } else {
      std::vector<double> col;
      if (g_w) {
        col.resize(g.rows() * g.pixels());
        detail::im2col(g, in->raw(), col.data());
        detail::conv_gemm_weight_grad(g, gout.raw(), col.data(), g_w->raw());
      }
      if (g_in) {
        col.assign(g.rows() * g.pixels(), 0.0);
        detail::conv_gemm_input_grad(g, w->raw(), gout.raw(), col.data());
        detail::col2im_add(g, col.data(), g_in->raw());
      }
    }
    if (g_b) {
      const std::size_t P = g.pixels();
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += gout[co * P + p];
        (*g_b)[co] += s;
      }
    }
  };

  if (bias) {
    const std::array<const Var*, 3> inputs{&input, &kernels, &*bias};
    return istapp::detail::record(OpKind::conv2d, inputs, std::move(out), backward);
  }
  const std::array<const Var*, 2> inputs{&input, &kernels};
  return istapp::detail::record(OpKind::conv2d, inputs, std::move(out), backward);
}

/// Per-pixel linear map with Cout x Cin x 1 x 1 kernels.
inline Var conv1x1(const Var& input, const Var& kernels, const std::optional<Var>& bias = std::nullopt) {
  const auto& k = kernels.shape();
  if (k.size() != 4 || k[2] != 1 || k[3] != 1) {
    throw ShapeError("conv1x1: kernels must be Cout x Cin x 1 x 1, got " + shape_string(k));
  }
  return conv2d(input, kernels, bias, 1, 0);
}

namespace detail {

// Visits every (packed, spatial) index pair of the r^2*C x H x W <-> C x rH x rW map.
template <class F>
void for_each_shuffle_pair(std::size_t C, std::size_t H, std::size_t W, std::size_t r, F&& f) {
  const std::size_t OH = H * r, OW = W * r;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t x = 0; x < OW; ++x)
        f(((c * r * r + (y % r) * r + (x % r)) * H + y / r) * W + x / r, (c * OH + y) * OW + x);
}

// packed: r^2*C x H x W, spatial: C x rH x rW.
inline void shuffle_add(const Tensor& packed, Tensor& spatial, std::size_t r) {
  for_each_shuffle_pair(spatial.dim(0), packed.dim(1), packed.dim(2), r,
                        [&](std::size_t p, std::size_t s) { spatial[s] += packed[p]; });
}

inline void unshuffle_add(const Tensor& spatial, Tensor& packed, std::size_t r) {
  for_each_shuffle_pair(spatial.dim(0), packed.dim(1), packed.dim(2), r,
                        [&](std::size_t p, std::size_t s) { packed[p] += spatial[s]; });
}

}  // namespace detail

/// Rearranges r^2*C x H x W into C x rH x rW:
/// out[c][y][x] = in[c*r^2 + (y mod r)*r + (x mod r)][y/r][x/r].
inline Var pixel_shuffle(const Var& input, int r) {
  const auto& s = input.shape();
  if (r <= 0) throw DomainError("pixel_shuffle: factor must be positive");
  if (s.size() != 3) throw ShapeError("pixel_shuffle: input must be C x H x W, got " + shape_string(s));
  const auto ur = static_cast<std::size_t>(r);
  if (s[0] % (ur * ur) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(s[0]) + " channels not divisible by r^2 = " +
                     std::to_string(ur * ur));
  }
  Tensor out({s[0] / (ur * ur), s[1] * ur, s[2] * ur});
  detail::shuffle_add(input.value(), out, ur);
  const std::array<const Var*, 1> inputs{&input};
  return istapp::detail::record(OpKind::pixel_shuffle, inputs, std::move(out),
                                [ur](const Tensor& gout, std::span<Tensor* const> gin) {
                                  detail::unshuffle_add(gout, *gin[0], ur);
                                });
}

/// Inverse of pixel_shuffle: C x rH x rW into r^2*C x H x W.
inline Var pixel_unshuffle(const Var& input, int r) {
  const auto& s = input.shape();
  if (r <= 0) throw DomainError("pixel_unshuffle: factor must be positive");
  if (s.size() != 3) throw ShapeError("pixel_unshuffle: input must be C x H x W, got " + shape_string(s));
  const auto ur = static_cast<std::size_t>(r);
  if (s[1] % ur != 0 || s[2] % ur != 0) {
    throw ShapeError("pixel_unshuffle: spatial size " + shape_string(s) + " not divisible by " +
                     std::to_string(ur));
  }
  Tensor out({s[0] * ur * ur, s[1] / ur, s[2] / ur});
  detail::unshuffle_add(input.value(), out, ur);
  const std::array<const Var*, 1> inputs{&input};
  return istapp::detail::record(OpKind::pixel_unshuffle, inputs, std::move(out),
                                [ur](const Tensor& gout, std::span<Tensor* const> gin) {
                                  detail::shuffle_add(gout, *gin[0], ur);
                                });
}

/// W x + b with W of shape m x n, x of length n, b of length m.
inline Var fully_connected(const Var& input, const Var& weights, const Var& bias) {
  const auto& ws = weights.shape();
  if (ws.size() != 2) throw ShapeError("fully_connected: weights must be m x n, got " + shape_string(ws));
  const std::size_t m = ws[0], n = ws[1];
  if (input.value().size() != n) {
    throw ShapeError("fully_connected: input length " + std::to_string(input.value().size()) +
                     " != weight inner dimension " + std::to_string(n));
  }
  if (bias.value().size() != m) {
    throw ShapeError("fully_connected: bias length " + std::to_string(bias.value().size()) + " != " +
                     std::to_string(m));
  }
  auto x = input.shared_value();
  auto w = weights.shared_value();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = bias.value()[i];
    for (std::size_t j = 0; j < n; ++j) s += (*w)[i * n + j] * (*x)[j];
    out[i] = s;
  }
  const std::array<const Var*, 3> inputs{&input, &weights, &bias};
  return istapp::detail::record(
      OpKind::fully_connected, inputs, std::move(out),
      [x, w, m, n](const Tensor& gout, std::span<Tensor* const> gin) {
        if (gin[0])
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gin[0])[j] += (*w)[i * n + j] * gout[i];
        if (gin[1])
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gin[1])[i * n + j] += gout[i] * (*x)[j];
        if (gin[2])
          for (std::size_t i = 0; i < m; ++i) (*gin[2])[i] += gout[i];
      });
}

/// max(x, 0); the derivative at exactly 0 is taken as 0.
inline Var relu(const Var& input) {
  auto x = input.shared_value();
  Tensor out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*x)[i] > 0.0 ? (*x)[i] : 0.0;
  const std::array<const Var*, 1> inputs{&input};
  return istapp::detail::record(OpKind::relu, inputs, std::move(out),
                                [x](const Tensor& gout, std::span<Tensor* const> gin) {
                                  for (std::size_t i = 0; i < gout.size(); ++i)
                                    if ((*x)[i] > 0.0) (*gin[0])[i] += gout[i];
                                });
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// ln(1 + e^x), evaluated as max(x,0) + ln(1 + e^-|x|).
inline Var softplus(const Var& input) {
  auto x = input.shared_value();
  Tensor out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus((*x)[i]);
  const std::array<const Var*, 1> inputs{&input};
  return istapp::detail::record(OpKind::softplus, inputs, std::move(out),
                                [x](const Tensor& gout, std::span<Tensor* const> gin) {
                                  for (std::size_t i = 0; i < gout.size(); ++i)
                                    (*gin[0])[i] += gout[i] * sigmoid((*x)[i]);
                                });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::array<const Var*, 2> inputs{&a, &b};
  return istapp::detail::record(OpKind::add, inputs, std::move(out),
                                [](const Tensor& gout, std::span<Tensor* const> gin) {
                                  for (Tensor* g : gin)
                                    if (g)
                                      for (std::size_t i = 0; i < gout.size(); ++i) (*g)[i] += gout[i];
                                });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const std::array<const Var*, 2> inputs{&a, &b};
  return istapp::detail::record(OpKind::sub, inputs, std::move(out),
                                [](const Tensor& gout, std::span<Tensor* const> gin) {
                                  if (gin[0])
                                    for (std::size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += gout[i];
                                  if (gin[1])
                                    for (std::size_t i = 0; i < gout.size(); ++i) (*gin[1])[i] -= gout[i];
                                });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("mul", a, b);
  auto av = a.shared_value();
  auto bv = b.shared_value();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] * (*bv)[i];
  const std::array<const Var*, 2> inputs{&a, &b};
  return istapp::detail::record(OpKind::mul, inputs, std::move(out),
                                [av, bv](const Tensor& gout, std::span<Tensor* const> gin) {
                                  if (gin[0])
                                    for (std::size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += gout[i] * (*bv)[i];
                                  if (gin[1])
                                    for (std::size_t i = 0; i < gout.size(); ++i) (*gin[1])[i] += gout[i] * (*av)[i];
                                });
}

/// s * t for a scalar Var s.
inline Var scale(const Var& s, const Var& t) {
  detail::require_scalar("scale", s);
  const double sv = s.value()[0];
  auto tv = t.shared_value();
  Tensor out(tv->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * (*tv)[i];
  const std::array<const Var*, 2> inputs{&s, &t};
  return istapp::detail::record(OpKind::scale, inputs, std::move(out),
                                [sv, tv](const Tensor& gout, std::span<Tensor* const> gin) {
                                  if (gin[0]) (*gin[0])[0] += dot(gout.data(), tv->data());
                                  if (gin[1])
                                    for (std::size_t i = 0; i < gout.size(); ++i) (*gin[1])[i] += sv * gout[i];
                                });
}

inline Var mul_const(const Var& t, double c) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * t.value()[i];
  const std::array<const Var*, 1> inputs{&t};
  return istapp::detail::record(OpKind::mul_const, inputs, std::move(out),
                                [c](const Tensor& gout, std::span<Tensor* const> gin) {
                                  for (std::size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += c * gout[i];
                                });
}

/// Tensor of the given shape with every entry equal to the scalar s.
inline Var fill(const Var& s, const Shape& shape) {
  detail::require_scalar("fill", s);
  Tensor out(shape, s.value()[0]);
  const std::array<const Var*, 1> inputs{&s};
  return istapp::detail::record(OpKind::fill, inputs, std::move(out),
                                [](const Tensor& gout, std::span<Tensor* const> gin) {
                                  double total = 0.0;
                                  for (double g : gout.data()) total += g;
                                  (*gin[0])[0] += total;
                                });
}

/// Concatenation along the leading (channel) axis.
inline Var concat(const Var& a, const Var& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || sa.empty() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1)) {
    throw ShapeError("concat: " + shape_string(sa) + " vs " + shape_string(sb));
  }
  Shape s = sa;
  s[0] += sb[0];
  Tensor out(s);
  const std::size_t na = a.value().size();
  std::copy(a.value().data().begin(), a.value().data().end(), out.data().begin());
  std::copy(b.value().data().begin(), b.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(na));
  const std::array<const Var*, 2> inputs{&a, &b};
  return istapp::detail::record(OpKind::concat, inputs, std::move(out),
                                [na](const Tensor& gout, std::span<Tensor* const> gin) {
                                  if (gin[0])
                                    for (std::size_t i = 0; i < na; ++i) (*gin[0])[i] += gout[i];
                                  if (gin[1])
                                    for (std::size_t i = na; i < gout.size(); ++i) (*gin[1])[i - na] += gout[i];
                                });
}

/// Scalar view of entry i (flat index).
inline Var element(const Var& v, std::size_t i) {
  if (i >= v.value().size()) {
    throw ShapeError("element: index " + std::to_string(i) + " out of range for " + shape_string(v.shape()));
  }
  const std::array<const Var*, 1> inputs{&v};
  return istapp::detail::record(OpKind::element, inputs, Tensor::scalar(v.value()[i]),
                                [i](const Tensor& gout, std::span<Tensor* const> gin) { (*gin[0])[i] += gout[0]; });
}

inline Var sum(const Var& t) {
  double s = 0.0;
  for (double v : t.value().data()) s += v;
  const std::array<const Var*, 1> inputs{&t};
  return istapp::detail::record(OpKind::sum, inputs, Tensor::scalar(s),
                                [](const Tensor& gout, std::span<Tensor* const> gin) {
                                  for (double& g : gin[0]->data()) g += gout[0];
                                });
}

/// Sum of squared entries, i.e. the squared Frobenius norm.
inline Var sum_squares(const Var& t) {
  auto tv = t.shared_value();
  const std::array<const Var*, 1> inputs{&t};
  return istapp::detail::record(OpKind::sum_squares, inputs, Tensor::scalar(squared_norm(tv->data())),
                                [tv](const Tensor& gout, std::span<Tensor* const> gin) {
                                  for (std::size_t i = 0; i < tv->size(); ++i)
                                    (*gin[0])[i] += 2.0 * (*tv)[i] * gout[0];
                                });
}

/// Spatial window [y0, y0+h) x [x0, x0+w) of a C x H x W tensor.
inline Var crop(const Var& t, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const auto& s = t.shape();
  if (s.size() != 3 || y0 + h > s[1] || x0 + w > s[2]) {
    throw ShapeError("crop: window (" + std::to_string(y0) + "," + std::to_string(x0) + ") " +
                     std::to_string(h) + "x" + std::to_string(w) + " outside " + shape_string(s));
  }
  const std::size_t C = s[0], H = s[1], W = s[2];
  Tensor out({C, h, w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = t.value()[(c * H + y0 + y) * W + x0 + x];
  const std::array<const Var*, 1> inputs{&t};
  return istapp::detail::record(OpKind::crop, inputs, std::move(out),
                                [=](const Tensor& gout, std::span<Tensor* const> gin) {
                                  for (std::size_t c = 0; c < C; ++c)
                                    for (std::size_t y = 0; y < h; ++y)
                                      for (std::size_t x = 0; x < w; ++x)
                                        (*gin[0])[(c * H + y0 + y) * W + x0 + x] += gout.at(c, y, x);
                                });
}

/// Places equally sized C x h x w blocks (row-major order) into a
/// C x (rows*h) x (cols*w) tensor.
inline Var tile(const std::vector<Var>& blocks, std::size_t rows, std::size_t cols) {
  if (blocks.size() != rows * cols || blocks.empty()) {
    throw ShapeError("tile: " + std::to_string(blocks.size()) + " blocks for a " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " grid");
  }
  const Shape bs = blocks.front().shape();
  if (bs.size() != 3) throw ShapeError("tile: blocks must be C x h x w");
  for (const Var& b : blocks)
    if (b.shape() != bs) throw ShapeError("tile: block shapes differ");
  const std::size_t C = bs[0], h = bs[1], w = bs[2], H = rows * h, W = cols * w;
  Tensor out({C, H, W});
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const std::size_t oy = (bi / cols) * h, ox = (bi % cols) * w;
    const Tensor& v = blocks[bi].value();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out[(c * H + oy + y) * W + ox + x] = v.at(c, y, x);
  }
  std::vector<const Var*> inputs;
  inputs.reserve(blocks.size());
  for (const Var& b : blocks) inputs.push_back(&b);
  return istapp::detail::record(OpKind::tile, inputs, std::move(out),
                                [=](const Tensor& gout, std::span<Tensor* const> gin) {
                                  for (std::size_t bi = 0; bi < gin.size(); ++bi) {
                                    if (!gin[bi]) continue;
                                    const std::size_t oy = (bi / cols) * h, ox = (bi % cols) * w;
                                    for (std::size_t c = 0; c < C; ++c)
                                      for (std::size_t y = 0; y < h; ++y)
                                        for (std::size_t x = 0; x < w; ++x)
                                          gin[bi]->at(c, y, x) += gout[(c * H + oy + y) * W + ox + x];
                                  }
                                });
}

}  // namespace istapp::ops
