#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "crash/diff/tensor.hpp"
#include "crash/error.hpp"

namespace crash::diff {

using NodeId = std::uint32_t;

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so ids form a topological order and
/// backward() replays them in reverse. Each backward closure accumulates into
/// its inputs' gradient buffers exactly once per use.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (a parameter).
  Var leaf(Tensor value) { return push(std::move(value), {}, true, nullptr); }

  /// Non-differentiable input (data, masks).
  Var constant(Tensor value) { return push(std::move(value), {}, false, nullptr); }

  /// Result of a primitive op. The node requires grad iff any input does.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape() != this) throw PreconditionError("Tape::record: input from a different tape");
      needs = needs || nodes_[v.id()].requires_grad;
    }
    return push(std::move(value), inputs, needs, needs ? std::move(backward) : nullptr);
  }

  /// Op over an arbitrary number of inputs; the closure carries the input ids itself.
  Var record_wide(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape() != this) throw PreconditionError("Tape::record: input from a different tape");
      needs = needs || nodes_[v.id()].requires_grad;
    }
    return push(std::move(value), {}, needs, needs ? std::move(backward) : nullptr);
  }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  NodeId input(NodeId id, std::size_t k) const { return nodes_[id].inputs[k]; }

  /// Upstream gradient of a node during backward (empty if nothing flowed in).
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  const Tensor& grad(Var v) const { return nodes_[v.id()].grad; }

  /// Gradient buffer of an input, allocated as zeros on first use.
  Tensor& grad_buffer(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  /// Zeroes all gradients, seeds d(root)/d(root)=1 and replays the tape in reverse.
  void backward(Var root) {
    if (root.tape() != this) throw PreconditionError("Tape::backward: root from a different tape");
    if (nodes_[root.id()].value.numel() != 1)
      throw DimensionError("Tape::backward: root must be a scalar");
    for (Node& n : nodes_) n.grad = Tensor();
    grad_buffer(root.id()).fill(1.0);
    for (NodeId id = root.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
  }

  /// Gradient of the last backward() root with respect to `v`, zeros if unreachable.
  Tensor grad_or_zero(Var v) const {
    const Node& n = nodes_[v.id()];
    return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::array<NodeId, 4> inputs{};
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, std::initializer_list<Var> inputs, bool needs, BackwardFn backward) {
    if (!value.all_finite())
      throw NumericalFault("Tape: non-finite value at node " + std::to_string(nodes_.size()) +
                           " shape " + value.shape().str());
    if (inputs.size() > 4) throw PreconditionError("Tape::record: at most 4 inputs");
    Node n;
    n.value = std::move(value);
    std::size_t k = 0;
    for (const Var& v : inputs) n.inputs[k++] = v.id();
    n.requires_grad = needs;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace crash::diff
