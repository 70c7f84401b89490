#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "istapp/autodiff.hpp"
#include "istapp/net.hpp"
#include "istapp/ops.hpp"
#include "istapp/sampling.hpp"
#include "istapp/tensor.hpp"

/// Central finite-difference verification of backward().
namespace istapp::gradcheck {

/// Builds a scalar loss. Must bind every checked parameter through
/// g.parameter() so the same function serves both the recorded pass and the
/// inference passes used for differencing.
using LossFn = std::function<Var(Graph&)>;

struct Result {
  std::string name;
  std::size_t probes = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct Options {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for |a - n| / max(|a|, |n|, floor).
  double floor = 1e-4;
  std::size_t max_probes = 100;
  std::uint64_t seed = 1;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline Result check(std::string name, const std::vector<Parameter*>& params, const LossFn& loss, const Options& opt) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  auto evaluate = [&] {
    Graph g(Graph::Mode::inference);
    return loss(g).value().item();
  };

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i]->value.size(); ++j) coords.emplace_back(i, j);
  if (coords.size() > opt.max_probes) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.max_probes);
  }

  Result r{std::move(name), coords.size(), 0.0, opt.tolerance, true};
  for (auto [i, j] : coords) {
    double& x = params[i]->value[j];
    const double saved = x;
    x = saved + opt.step;
    const double fp = evaluate();
    x = saved - opt.step;
    const double fm = evaluate();
    x = saved;
    const double numeric = (fp - fm) / (2.0 * opt.step);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(params[i]->grad[j], numeric, opt.floor));
  }
  r.passed = r.max_rel_error <= opt.tolerance;
  return r;
}

namespace detail {

inline Parameter random_parameter(std::string name, Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Parameter p{std::move(name), Tensor(std::move(shape)), {}, true};
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : p.value.data()) v = u(rng);
  return p;
}

/// Fixed random projection so every output entry carries a distinct weight.
inline Var project(const Var& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Tensor w(out.shape());
  for (double& v : w.data()) v = u(rng);
  return ops::sum(ops::mul(out, Var(std::move(w))));
}

}  // namespace detail

/// Tiny unfolded model used by the end-to-end check.
inline NetConfig tiny_config(std::uint64_t seed = 11) {
  NetConfig cfg;
  cfg.stages = 2;
  cfg.channels = 4;
  cfg.cm_hidden = 8;
  cfg.block_size = 8;
  cfg.ratios = {0.25};
  cfg.seed = seed;
  return cfg;
}

/// Every differentiable primitive plus the condition module and the
/// end-to-end tiny model (K=2, C=4, B=8, 16x16 image).
inline std::vector<Result> run_suite(std::uint64_t seed = 2024) {
  std::vector<Result> results;
  std::mt19937_64 rng(seed);
  Options op_level;
  op_level.seed = seed;

  {
    auto x = detail::random_parameter("x", {2, 8, 8}, rng);
    auto k = detail::random_parameter("k", {3, 2, 3, 3}, rng);
    auto b = detail::random_parameter("b", {3}, rng);
    results.push_back(check("conv2d 3x3 pad 1", {&x, &k, &b},
                            [&](Graph& g) {
                              return detail::project(
                                  ops::conv2d(g.parameter(x), g.parameter(k), g.parameter(b), 1, 1), 1);
                            },
                            op_level));
  }
  {
    auto x = detail::random_parameter("x", {1, 8, 8}, rng);
    auto k = detail::random_parameter("k", {5, 1, 4, 4}, rng);
    results.push_back(check("conv2d stride 4", {&x, &k},
                            [&](Graph& g) {
                              return detail::project(ops::conv2d(g.parameter(x), g.parameter(k), std::nullopt, 4, 0), 2);
                            },
                            op_level));
  }
  {
    auto x = detail::random_parameter("x", {6, 4, 4}, rng);
    auto k = detail::random_parameter("k", {4, 6, 1, 1}, rng);
    results.push_back(check("conv1x1", {&x, &k},
                            [&](Graph& g) { return detail::project(ops::conv1x1(g.parameter(x), g.parameter(k)), 3); },
                            op_level));
  }
  {
    auto x = detail::random_parameter("x", {8, 4, 4}, rng);
    results.push_back(check("pixel_shuffle", {&x},
                            [&](Graph& g) { return detail::project(ops::pixel_shuffle(g.parameter(x), 2), 4); },
                            op_level));
  }
  {
    auto x = detail::random_parameter("x", {10}, rng);
    auto w = detail::random_parameter("w", {10, 10}, rng);
    auto b = detail::random_parameter("b", {10}, rng);
    results.push_back(check("fully_connected", {&x, &w, &b},
                            [&](Graph& g) {
                              return detail::project(
                                  ops::fully_connected(g.parameter(x), g.parameter(w), g.parameter(b)), 5);
                            },
                            op_level));
  }
  {
    auto x = detail::random_parameter("x", {128}, rng, 2.0);
    results.push_back(check("relu", {&x},
                            [&](Graph& g) { return detail::project(ops::relu(g.parameter(x)), 6); }, op_level));
    results.push_back(check("softplus", {&x},
                            [&](Graph& g) { return detail::project(ops::softplus(g.parameter(x)), 7); }, op_level));
  }
  {
    auto a = detail::random_parameter("a", {2, 6, 6}, rng);
    auto c = detail::random_parameter("c", {1, 6, 6}, rng);
    auto s = detail::random_parameter("s", {1}, rng);
    results.push_back(check("scale/fill/concat/crop/tile", {&a, &c, &s},
                            [&](Graph& g) {
                              const Var av = g.parameter(a), cv = g.parameter(c), sv = g.parameter(s);
                              const Var m = ops::concat(ops::scale(sv, cv), ops::fill(sv, cv.shape()));
                              const Var mixed = ops::sub(ops::add(av, m), ops::mul_const(av, 0.25));
                              std::vector<Var> blocks;
                              for (std::size_t i = 0; i < 3; ++i)
                                for (std::size_t j = 0; j < 3; ++j) blocks.push_back(ops::crop(mixed, 2 * i, 2 * j, 2, 2));
                              std::swap(blocks[0], blocks[7]);
                              return detail::project(ops::add(ops::tile(blocks, 3, 3), ops::mul_const(mixed, 0.5)), 8);
                            },
                            op_level));
  }
  {
    Model model(tiny_config(seed));
    std::vector<Parameter*> cm{&model.cm().fc1_w, &model.cm().fc1_b, &model.cm().fc2_w,
                               &model.cm().fc2_b, &model.cm().fc3_w, &model.cm().fc3_b};
    results.push_back(check("condition module", cm,
                            [&](Graph& g) {
                              const ConditionVars cv = condition_forward(g, model.cm(), 0.3, 2);
                              Var total = ops::add(cv.rho[0], cv.sigma[0]);
                              for (std::size_t k = 1; k < 2; ++k) total = ops::add(total, ops::add(cv.rho[k], cv.sigma[k]));
                              return total;
                            },
                            op_level));
  }
  {
    // End to end: ||reconstruct(Y) - X||^2 on the tiny model.
    Model model(tiny_config(seed + 1));
    const SamplingOperator op = make_operator(8, 0.25, seed + 2);
    Tensor image({1, 16, 16});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : image.data()) v = u(rng);
    const Tensor y = measure(op, image);
    Options e2e = op_level;
    e2e.tolerance = 1e-3;
    e2e.max_probes = 60;
    results.push_back(check("end-to-end K=2 C=4 B=8 16x16", model.active_parameters(),
                            [&](Graph& g) {
                              const auto trace = reconstruct_trace(g, model, Var(y), op, 0.25);
                              return ops::sum_squares(ops::sub(trace.back(), Var(image)));
                            },
                            e2e));
  }
  return results;
}

}  // namespace istapp::gradcheck
