#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "istapp/error.hpp"
#include "istapp/sampling.hpp"
#include "istapp/tensor.hpp"

/// Model-based reconstruction: ISTA on 1/2 ||A x - y||^2 + lambda ||x||_1.
namespace istapp::ista {

struct IstaConfig {
  double step = 1.0;
  double lambda = 0.0;
  int max_iters = 200;
  double tol = 1e-6;

  void validate() const {
    if (!(step > 0.0) || !std::isfinite(step)) throw DomainError("ISTA step must be positive");
    if (!(lambda >= 0.0)) throw DomainError("ISTA lambda must be nonnegative");
    if (max_iters < 1) throw DomainError("ISTA max_iters must be at least 1");
    if (!(tol >= 0.0)) throw DomainError("ISTA tol must be nonnegative");
  }
};

/// Step 0.9 / L with L the power-iteration estimate of ||phi^T phi||.
inline IstaConfig default_config(const SamplingOperator& op, double lambda = 0.0) {
  IstaConfig cfg;
  cfg.step = 0.9 / lipschitz_constant(op);
  cfg.lambda = lambda;
  return cfg;
}

inline double objective(const Tensor& image, const Tensor& measurements, const SamplingOperator& op, double lambda) {
  const Tensor ax = measure(op, image);
  if (ax.shape() != measurements.shape()) {
    throw ShapeError("objective: measurements " + shape_string(measurements.shape()) + " vs A(x) " +
                     shape_string(ax.shape()));
  }
  double fit = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) {
    const double d = ax[i] - measurements[i];
    fit += d * d;
  }
  double l1 = 0.0;
  for (double v : image.data()) l1 += std::abs(v);
  return 0.5 * fit + lambda * l1;
}

/// x - rho * A^T (A x - y)
inline Tensor gradient_step(const Tensor& image, const Tensor& measurements, const SamplingOperator& op, double rho) {
  if (!(rho >= 0.0)) throw DomainError("gradient_step: rho must be nonnegative");
  const Tensor ax = measure(op, image);
  if (ax.shape() != measurements.shape()) {
    throw ShapeError("gradient_step: measurements " + shape_string(measurements.shape()) + " vs A(x) " +
                     shape_string(ax.shape()));
  }
  const Tensor back = init_transpose(op, axpby(1.0, ax, -1.0, measurements));
  return axpby(1.0, image, -rho, back);
}

inline double soft_threshold(double r, double tau) {
  const double mag = std::abs(r) - tau;
  if (mag <= 0.0) return 0.0;
  return r > 0.0 ? mag : -mag;
}

/// sign(r) * max(|r| - tau, 0), elementwise.
inline Tensor soft_threshold(const Tensor& r, double tau) {
  if (!(tau >= 0.0)) throw DomainError("soft_threshold: tau must be nonnegative");
  Tensor out(r.shape());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = soft_threshold(r[i], tau);
  return out;
}

struct IstaResult {
  Tensor image;
  std::vector<double> objective_trace;  // one value per completed iteration
};

/// Starts from A^T y, alternates the gradient step and the l1 prox, and stops
/// after max_iters or when the relative objective change drops below tol.
inline IstaResult run_ista(const Tensor& measurements, const SamplingOperator& op, const IstaConfig& cfg) {
  cfg.validate();
  IstaResult result;
  result.image = init_transpose(op, measurements);
  const double initial = objective(result.image, measurements, op, cfg.lambda);
  double previous = initial;
  for (int k = 0; k < cfg.max_iters; ++k) {
    const Tensor r = gradient_step(result.image, measurements, op, cfg.step);
    result.image = soft_threshold(r, cfg.lambda * cfg.step);
    const double f = objective(result.image, measurements, op, cfg.lambda);
    result.objective_trace.push_back(f);
    if (!std::isfinite(f) || f > 1e6 * std::max(initial, 1e-12)) {
      throw NumericError("ISTA diverged at iteration " + std::to_string(k + 1) + " (step size " +
                         std::to_string(cfg.step) + " too large)");
    }
    const double change = std::abs(previous - f);
    if (change <= cfg.tol * std::max(std::abs(previous), std::numeric_limits<double>::min())) break;
    previous = f;
  }
  return result;
}

}  // namespace istapp::ista
