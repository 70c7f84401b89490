#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "istapp/autodiff.hpp"
#include "istapp/error.hpp"
#include "istapp/ops.hpp"
#include "istapp/sampling.hpp"
#include "istapp/tensor.hpp"

namespace istapp {

/// Architecture and ablation switches of the unfolded network.
struct NetConfig {
  std::size_t stages = 20;
  std::size_t channels = 32;
  std::size_t cm_hidden = 64;
  std::size_t block_size = 32;
  std::vector<double> ratios{0.1, 0.2, 0.3, 0.4, 0.5};
  bool dus_rho = true;    // step sizes from the condition module
  bool dus_sigma = true;  // noise levels from the condition module
  bool cbs = true;        // reconstruct the whole image rather than block by block
  std::uint64_t seed = 0;

  bool uses_condition_module() const { return dus_rho || dus_sigma; }

  void validate() const {
    if (stages < 1) throw DomainError("stage count must be at least 1");
    if (channels < 1) throw DomainError("channel count must be at least 1");
    if (cm_hidden < 1) throw DomainError("condition module width must be at least 1");
    if (block_size < 2) throw DomainError("block size must be at least 2");
    if (ratios.empty()) throw DomainError("ratio list must not be empty");
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      if (!(ratios[i] > 0.0 && ratios[i] <= 1.0))
        throw DomainError("CS ratio must lie in (0, 1], got " + std::to_string(ratios[i]));
      if (i > 0 && !(ratios[i] > ratios[i - 1])) throw DomainError("ratios must be strictly ascending");
    }
  }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Per-stage (rho_k, sigma_k).
struct ConditionOutput {
  std::vector<double> rho;
  std::vector<double> sigma;
};

/// Three affine layers 1 -> h -> h -> 2K with ReLU, ReLU, Softplus.
struct CmParams {
  Parameter fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b;
};

/// Learnable weights of one stage's proximal module plus the fixed-mode scalars.
struct StageParams {
  Parameter ext_w, ext_b;
  Parameter rb1_w1, rb1_b1, rb1_w2, rb1_b2;
  Parameter rb2_w1, rb2_b1, rb2_w2, rb2_b2;
  Parameter rec_w, rec_b;
  Parameter rho_bar, sigma_bar;
};

class Model {
 public:
  Model() = default;

  /// Allocates and initializes all weights. Kernels and fully connected
  /// weights are U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero. The last
  /// condition-module bias is set so that, before training, the module emits
  /// the fallback values rho = 0.5 and sigma = 0.1 up to the weight term.
  /// A zero stage count is accepted and yields a model whose output is the
  /// initialization.
  explicit Model(NetConfig cfg) : cfg_(std::move(cfg)) {
    const std::size_t C = cfg_.channels, h = cfg_.cm_hidden, K = cfg_.stages;
    auto make = [](std::string name, Shape shape) { return Parameter{std::move(name), Tensor(std::move(shape)), {}, true}; };
    cm_.fc1_w = make("cm.fc1.w", {h, 1});
    cm_.fc1_b = make("cm.fc1.b", {h});
    cm_.fc2_w = make("cm.fc2.w", {h, h});
    cm_.fc2_b = make("cm.fc2.b", {h});
    cm_.fc3_w = make("cm.fc3.w", {2 * K, h});
    cm_.fc3_b = make("cm.fc3.b", {2 * K});
    stages_.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      const std::string p = "stage" + std::to_string(k + 1) + ".";
      StageParams& s = stages_[k];
      s.ext_w = make(p + "ext.w", {C, 2, 3, 3});
      s.ext_b = make(p + "ext.b", {C});
      s.rb1_w1 = make(p + "rb1.conv1.w", {C, C, 3, 3});
      s.rb1_b1 = make(p + "rb1.conv1.b", {C});
      s.rb1_w2 = make(p + "rb1.conv2.w", {C, C, 3, 3});
      s.rb1_b2 = make(p + "rb1.conv2.b", {C});
      s.rb2_w1 = make(p + "rb2.conv1.w", {C, C, 3, 3});
      s.rb2_b1 = make(p + "rb2.conv1.b", {C});
      s.rb2_w2 = make(p + "rb2.conv2.w", {C, C, 3, 3});
      s.rb2_b2 = make(p + "rb2.conv2.b", {C});
      s.rec_w = make(p + "rec.w", {1, C, 3, 3});
      s.rec_b = make(p + "rec.b", {1});
      s.rho_bar = make(p + "rho_bar", {1});
      s.sigma_bar = make(p + "sigma_bar", {1});
      s.rho_bar.value.fill(initial_rho);
      s.sigma_bar.value.fill(initial_sigma);
    }
    for (std::size_t k = 0; k < K; ++k) {
      cm_.fc3_b.value[k] = std::log(std::expm1(initial_rho));
      cm_.fc3_b.value[K + k] = std::log(std::expm1(initial_sigma));
    }

    std::mt19937_64 rng(cfg_.seed);
    for (Parameter* p : parameters()) {
      const Shape& s = p->value.shape();
      if (s.size() < 2 || p->value.empty()) continue;  // biases and scalars keep their initial values
      const double bound = 1.0 / std::sqrt(static_cast<double>(p->value.size() / s[0]));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : p->value.data()) v = u(rng);
    }
  }

  static constexpr double initial_rho = 0.5;
  static constexpr double initial_sigma = 0.1;

  const NetConfig& config() const { return cfg_; }
  CmParams& cm() { return cm_; }
  const CmParams& cm() const { return cm_; }
  std::vector<StageParams>& stages() { return stages_; }
  const std::vector<StageParams>& stages() const { return stages_; }

  /// Every parameter in the fixed serialization order: condition module, then
  /// stages 1..K (ext, rb1, rb2, rec, fallbacks).
  std::vector<Parameter*> parameters() { return collect<Parameter>(*this); }
  std::vector<const Parameter*> parameters() const { return collect<const Parameter>(*this); }

  /// Parameters that influence the output under the current ablation flags.
  std::vector<Parameter*> active_parameters() {
    std::vector<Parameter*> out;
    if (cfg_.uses_condition_module()) {
      for (Parameter* p : {&cm_.fc1_w, &cm_.fc1_b, &cm_.fc2_w, &cm_.fc2_b, &cm_.fc3_w, &cm_.fc3_b}) out.push_back(p);
    }
    for (StageParams& s : stages_) {
      for (Parameter* p : {&s.ext_w, &s.ext_b, &s.rb1_w1, &s.rb1_b1, &s.rb1_w2, &s.rb1_b2, &s.rb2_w1, &s.rb2_b1,
                           &s.rb2_w2, &s.rb2_b2, &s.rec_w, &s.rec_b})
        out.push_back(p);
      if (!cfg_.dus_rho) out.push_back(&s.rho_bar);
      if (!cfg_.dus_sigma) out.push_back(&s.sigma_bar);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Parameter* p : parameters()) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

 private:
  template <class P, class Self>
  static std::vector<P*> collect(Self& self) {
    std::vector<P*> out;
    auto& cm = self.cm_;
    for (P* p : {&cm.fc1_w, &cm.fc1_b, &cm.fc2_w, &cm.fc2_b, &cm.fc3_w, &cm.fc3_b}) out.push_back(p);
    for (auto& s : self.stages_) {
      for (P* p : {&s.ext_w, &s.ext_b, &s.rb1_w1, &s.rb1_b1, &s.rb1_w2, &s.rb1_b2, &s.rb2_w1, &s.rb2_b1, &s.rb2_w2,
                   &s.rb2_b2, &s.rec_w, &s.rec_b, &s.rho_bar, &s.sigma_bar})
        out.push_back(p);
    }
    return out;
  }

  NetConfig cfg_;
  CmParams cm_;
  std::vector<StageParams> stages_;
};

/// Condition module output as graph values (one scalar Var per stage).
struct ConditionVars {
  std::vector<Var> rho;
  std::vector<Var> sigma;
};

inline void check_ratio(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("CS ratio must lie in (0, 1], got " + std::to_string(gamma));
}

/// [rho_1..rho_K, sigma_1..sigma_K] = softplus(fc3(relu(fc2(relu(fc1(gamma)))))).
/// Tracked when `cm` is non-const and the graph records.
template <class Cm>
ConditionVars condition_forward(Graph& g, Cm& cm, double gamma, std::size_t stages) {
  check_ratio(gamma);
  if (cm.fc3_w.value.dim(0) != 2 * stages) {
    throw ShapeError("condition module emits " + std::to_string(cm.fc3_w.value.dim(0)) + " values, expected " +
                     std::to_string(2 * stages));
  }
  const Var in(Tensor::scalar(gamma));
  Var h = ops::relu(ops::fully_connected(in, g.parameter(cm.fc1_w), g.parameter(cm.fc1_b)));
  h = ops::relu(ops::fully_connected(h, g.parameter(cm.fc2_w), g.parameter(cm.fc2_b)));
  const Var out = ops::softplus(ops::fully_connected(h, g.parameter(cm.fc3_w), g.parameter(cm.fc3_b)));
  ConditionVars cv;
  for (std::size_t k = 0; k < stages; ++k) {
    cv.rho.push_back(ops::element(out, k));
    cv.sigma.push_back(ops::element(out, stages + k));
  }
  return cv;
}

inline ConditionOutput condition_forward(const CmParams& cm, double gamma, std::size_t stages) {
  Graph g(Graph::Mode::inference);
  const ConditionVars cv = condition_forward(g, cm, gamma, stages);
  ConditionOutput out;
  for (std::size_t k = 0; k < stages; ++k) {
    out.rho.push_back(cv.rho[k].value()[0]);
    out.sigma.push_back(cv.sigma[k].value()[0]);
  }
  return out;
}

/// R_k = X_{k-1} - rho_k * A^T(A(X_{k-1}) - Y).
inline Var dgdm_forward(const Var& previous, const SamplingOperator& op, const Var& measurements, const Var& rho) {
  const Var residual = ops::sub(measure(op, previous), measurements);
  return ops::sub(previous, ops::scale(rho, init_transpose(op, residual)));
}

/// X_k = R_k + rec(RB2(RB1(ext([R_k, M_sigma])))), where M_sigma is a plane
/// filled with sigma_k and each residual block is conv-ReLU-conv plus identity.
template <class Stage>
Var dpmm_forward(Graph& g, Stage& stage, const Var& r, const Var& sigma) {
  const auto& s = r.shape();
  if (s.size() != 3 || s[0] != 1) throw ShapeError("dpmm: input must be 1 x H x W, got " + shape_string(s));
  auto conv = [&](const Var& x, auto& w, auto& b) { return ops::conv2d(x, g.parameter(w), g.parameter(b), 1, 1); };
  const Var noise_map = ops::fill(sigma, s);
  Var f = conv(ops::concat(r, noise_map), stage.ext_w, stage.ext_b);
  f = ops::add(f, conv(ops::relu(conv(f, stage.rb1_w1, stage.rb1_b1)), stage.rb1_w2, stage.rb1_b2));
  f = ops::add(f, conv(ops::relu(conv(f, stage.rb2_w1, stage.rb2_b1)), stage.rb2_w2, stage.rb2_b2));
  return ops::add(r, conv(f, stage.rec_w, stage.rec_b));
}

struct ReconstructOptions {
  bool allow_extrapolation = false;
};

namespace detail {

template <class M>
std::vector<Var> unroll(Graph& g, M& model, const Var& measurements, const SamplingOperator& op,
                        const ConditionVars* cond) {
  const NetConfig& cfg = model.config();
  std::vector<Var> trace;
  trace.reserve(cfg.stages + 1);
  trace.push_back(init_transpose(op, measurements));
  for (std::size_t k = 0; k < model.stages().size(); ++k) {
    auto& stage = model.stages()[k];
    const Var rho = cfg.dus_rho ? cond->rho[k] : g.parameter(stage.rho_bar);
    const Var sigma = cfg.dus_sigma ? cond->sigma[k] : g.parameter(stage.sigma_bar);
    const Var r = dgdm_forward(trace.back(), op, measurements, rho);
    trace.push_back(dpmm_forward(g, stage, r, sigma));
  }
  return trace;
}

}  // namespace detail

/// Runs the K-stage unfolded reconstruction and returns [X_0, X_1, ..., X_K].
///
/// With cbs off, every B x B block is reconstructed on its own from its own
/// measurement column and the blocks are tiled back together.
template <class M>
std::vector<Var> reconstruct_trace(Graph& g, M& model, const Var& measurements, const SamplingOperator& op,
                                   double gamma, const ReconstructOptions& opts = {}) {
  const NetConfig& cfg = model.config();
  check_ratio(gamma);
  if (!opts.allow_extrapolation) {
    bool known = false;
    for (double r : cfg.ratios) known = known || std::abs(r - gamma) <= 1e-12;
    if (!known) {
      throw DomainError("ratio " + std::to_string(gamma) +
                        " is not one of the model's trained ratios (extrapolation not enabled)");
    }
  }
  if (op.block_size != cfg.block_size) {
    throw ShapeError("operator block size " + std::to_string(op.block_size) + " != model block size " +
                     std::to_string(cfg.block_size));
  }
  const auto& ms = measurements.shape();
  if (ms.size() != 3 || ms[0] != op.measurements) {
    throw ShapeError("measurements " + shape_string(ms) + " do not match operator with " +
                     std::to_string(op.measurements) + " rows");
  }

  ConditionVars cond;
  const std::size_t K = model.stages().size();
  if (cfg.uses_condition_module() && K > 0) cond = condition_forward(g, model.cm(), gamma, K);

  if (cfg.cbs) return detail::unroll(g, model, measurements, op, &cond);

  const std::size_t rows = ms[1], cols = ms[2];
  std::vector<std::vector<Var>> per_block;
  per_block.reserve(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      per_block.push_back(detail::unroll(g, model, ops::crop(measurements, i, j, 1, 1), op, &cond));
  std::vector<Var> trace;
  for (std::size_t k = 0; k <= K; ++k) {
    std::vector<Var> blocks;
    blocks.reserve(per_block.size());
    for (const auto& b : per_block) blocks.push_back(b[k]);
    trace.push_back(ops::tile(blocks, rows, cols));
  }
  return trace;
}

struct Reconstruction {
  Tensor image;
  std::vector<Tensor> trace;
};

/// Inference-only reconstruction (nothing is recorded).
inline Reconstruction reconstruct(const Model& model, const Tensor& measurements, const SamplingOperator& op,
                                  double gamma, const ReconstructOptions& opts = {}) {
  Graph g(Graph::Mode::inference);
  const std::vector<Var> trace = reconstruct_trace(g, model, Var(measurements), op, gamma, opts);
  Reconstruction out;
  for (const Var& v : trace) out.trace.push_back(v.value());
  out.image = out.trace.back();
  return out;
}

}  // namespace istapp
