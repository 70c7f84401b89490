#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "istapp/error.hpp"
#include "istapp/tensor.hpp"

namespace istapp {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers, one pair per parameter, and the step count.
struct AdamState {
  AdamHyper hyper;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
/// Moment buffers are created on the first call.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty() && state.v.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros_like(*p));
      state.v.push_back(Tensor::zeros_like(*p));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& s = params[i]->shape();
    if (grads[i]->shape() != s || state.m[i].shape() != s || state.v[i].shape() != s) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i) + " " + shape_string(s));
    }
  }

  state.t += 1;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
      p[j] -= h.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + h.eps);
    }
  }
}

/// Steps a list of Parameters using their accumulated grads (missing grads count as zero).
inline void adam_step(std::span<Parameter* const> params, AdamState& state) {
  std::vector<Tensor*> values;
  std::vector<Tensor> zero_grads;
  std::vector<const Tensor*> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  zero_grads.reserve(params.size());
  for (Parameter* p : params) {
    values.push_back(&p->value);
    if (p->grad.shape() == p->value.shape()) {
      grads.push_back(&p->grad);
    } else {
      zero_grads.push_back(Tensor::zeros_like(p->value));
      grads.push_back(&zero_grads.back());
    }
  }
  adam_step(values, grads, state);
}

}  // namespace istapp
