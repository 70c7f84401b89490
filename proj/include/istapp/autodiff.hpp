#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "istapp/error.hpp"
#include "istapp/tensor.hpp"

namespace istapp {

class Graph;

/// Handle to a value produced during a forward pass.
///
/// A Var either belongs to a recording Graph (it has a node id and gradients
/// flow through it) or is a constant. Operations whose inputs are all constants
/// produce constants and record nothing, which is how inference runs.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor t) : value_(std::make_shared<const Tensor>(std::move(t))) {}

  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  std::shared_ptr<const Tensor> shared_value() const { return value_; }

  bool tracked() const noexcept { return graph_ != nullptr; }
  Graph* graph() const noexcept { return graph_; }
  std::size_t node() const noexcept { return node_; }

 private:
  friend class Graph;
  Var(std::shared_ptr<const Tensor> v, Graph* g, std::size_t node)
      : value_(std::move(v)), graph_(g), node_(node) {}

  std::shared_ptr<const Tensor> value_;
  Graph* graph_ = nullptr;
  std::size_t node_ = 0;
};

enum class OpKind {
  leaf,
  conv2d,
  pixel_shuffle,
  pixel_unshuffle,
  fully_connected,
  relu,
  softplus,
  add,
  sub,
  mul,
  scale,
  mul_const,
  fill,
  concat,
  element,
  sum,
  sum_squares,
  crop,
  tile,
};

/// Append-only record of a forward computation, consumed by one backward().
class Graph {
 public:
  /// Backward rule: receives d(loss)/d(output) and accumulates into the
  /// gradient buffers of the inputs. Entries for untracked inputs are null.
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  enum class Mode { record, inference };

  explicit Graph(Mode mode = Mode::record) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return mode_ == Mode::record; }

  /// Leaf bound to a learnable parameter. After backward() the parameter's
  /// grad holds d(loss)/d(value) (accumulated, not overwritten).
  Var parameter(Parameter& p) {
    if (!recording() || !p.requires_grad) return Var(p.value);
    nodes_.push_back(Node{OpKind::leaf, {}, std::make_shared<const Tensor>(p.value), {}, &p});
    return Var(nodes_.back().output, this, nodes_.size() - 1);
  }

  /// Read-only parameter use; never records.
  Var parameter(const Parameter& p) { return Var(p.value); }

  Var constant(Tensor t) { return Var(std::move(t)); }

  /// Records an operation. Returns a constant when no input is tracked.
  Var record(OpKind kind, std::span<const Var* const> inputs, Tensor out, BackwardFn backward) {
    bool any = false;
    for (const Var* v : inputs) {
      if (!v->tracked()) continue;
      if (v->graph() != this) throw GraphError("operation mixes Vars from different graphs");
      any = true;
    }
    if (!any || !recording()) return Var(std::move(out));
    if (consumed_) throw GraphError("graph already consumed by backward()");
    Node node{kind, {}, std::make_shared<const Tensor>(std::move(out)), std::move(backward), nullptr};
    node.inputs.reserve(inputs.size());
    for (const Var* v : inputs) node.inputs.push_back(v->tracked() ? static_cast<std::ptrdiff_t>(v->node()) : -1);
    nodes_.push_back(std::move(node));
    return Var(nodes_.back().output, this, nodes_.size() - 1);
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }
  OpKind kind(std::size_t node) const { return nodes_.at(node).kind; }
  const std::vector<std::ptrdiff_t>& inputs(std::size_t node) const { return nodes_.at(node).inputs; }

  /// Reverse-mode sweep from a scalar loss. Nodes are visited once each, in
  /// reverse append order, and released as they are processed.
  void backward(const Var& loss) {
    if (consumed_) throw GraphError("backward() called twice on the same graph");
    if (loss.value().size() != 1) {
      throw GraphError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
    }
    if (!loss.tracked()) throw GraphError("loss does not depend on any tracked parameter");
    if (loss.graph() != this) throw GraphError("loss belongs to a different graph");
    consumed_ = true;

    std::vector<Tensor> grads(nodes_.size());
    grads[loss.node()] = Tensor(loss.shape(), 1.0);
    std::vector<Tensor*> grad_in;
    for (std::size_t i = loss.node() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (grads[i].empty()) {
        node = Node{};
        continue;
      }
      if (node.kind == OpKind::leaf) {
        Parameter& p = *node.param;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor::zeros_like(p.value);
        for (std::size_t j = 0; j < p.grad.size(); ++j) p.grad[j] += grads[i][j];
      } else {
        grad_in.assign(node.inputs.size(), nullptr);
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          const std::ptrdiff_t in = node.inputs[k];
          if (in < 0) continue;
          auto& g = grads[static_cast<std::size_t>(in)];
          if (g.empty()) g = Tensor(nodes_[static_cast<std::size_t>(in)].output->shape());
          grad_in[k] = &g;
        }
        node.backward(grads[i], grad_in);
      }
      grads[i] = Tensor{};
      node = Node{};
    }
  }

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::ptrdiff_t> inputs;
    std::shared_ptr<const Tensor> output;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Mode mode_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace detail {

/// Picks the graph that owns any tracked input, or null.
inline Graph* owning_graph(std::span<const Var* const> inputs) {
  for (const Var* v : inputs)
    if (v->tracked()) return v->graph();
  return nullptr;
}

inline Var record(OpKind kind, std::span<const Var* const> inputs, Tensor out, Graph::BackwardFn fn) {
  Graph* g = owning_graph(inputs);
  if (g == nullptr) return Var(std::move(out));
  return g->record(kind, inputs, std::move(out), std::move(fn));
}

}  // namespace detail

}  // namespace istapp
