#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crash/diff/ops.hpp"
#include "crash/diff/tape.hpp"
#include "crash/diff/tensor.hpp"
#include "crash/error.hpp"

namespace crash::model {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;

/// Initial value rule for one parameter tensor.
struct Init {
  enum class Kind { kUniform, kConstant };
  Kind kind = Kind::kConstant;
  double a = 0.0;  // half-width for kUniform, the value for kConstant
};

inline Init glorot(std::size_t fan_in, std::size_t fan_out) {
  return {Init::Kind::kUniform, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out))};
}
inline Init constant(double v) { return {Init::Kind::kConstant, v}; }

/// Named parameter tensors in creation order.
class ParamStore {
 public:
  void add(std::string name, Tensor t) {
    if (index_.count(name)) throw PreconditionError("ParamStore: duplicate name '" + name + "'");
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(t));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw PreconditionError("ParamStore: no parameter '" + name + "'");
    return it->second;
  }

  Tensor& at(const std::string& name) { return values_[index(name)]; }
  const Tensor& at(const std::string& name) const { return values_[index(name)]; }

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& values() { return values_; }
  const std::vector<Tensor>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  /// Total number of scalar parameters.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.numel();
    return n;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

/// Maker that draws fresh tensors into a store.
class TensorMaker {
 public:
  TensorMaker(ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  Tensor operator()(const std::string& name, Shape shape, Init init) {
    Tensor t(shape, init.kind == Init::Kind::kConstant ? init.a : 0.0);
    if (init.kind == Init::Kind::kUniform) {
      std::uniform_real_distribution<double> u(-init.a, init.a);
      for (double& v : t.data()) v = u(rng_);
    }
    store_.add(name, t);
    return t;
  }

 private:
  ParamStore& store_;
  std::mt19937_64 rng_;
};

/// Maker that binds stored tensors onto a tape by name.
class Binder {
 public:
  /// `trainable` false records constants, which keeps inference tapes lean.
  Binder(Tape& tape, const ParamStore& store, bool trainable = true)
      : tape_(tape), store_(store), trainable_(trainable), leaves_(store.size()) {}

  Var operator()(const std::string& name, Shape shape, Init) {
    const std::size_t i = store_.index(name);
    const Tensor& t = store_.values()[i];
    if (!(t.shape() == shape))
      throw DimensionError("parameter '" + name + "' has shape " + t.shape().str() + ", expected " +
                           shape.str());
    leaves_[i] = trainable_ ? tape_.leaf(t) : tape_.constant(t);
    return leaves_[i];
  }

  /// Bound leaves in store order.
  const std::vector<Var>& leaves() const { return leaves_; }

 private:
  Tape& tape_;
  const ParamStore& store_;
  bool trainable_;
  std::vector<Var> leaves_;
};

/// Maker that hands out already-created leaves, matched to the store by name.
class LeafLookup {
 public:
  LeafLookup(const ParamStore& store, std::span<const Var> leaves) : store_(store), leaves_(leaves) {
    if (leaves.size() != store.size()) throw PreconditionError("LeafLookup: leaf count mismatch");
  }

  Var operator()(const std::string& name, Shape shape, Init) const {
    const Var v = leaves_[store_.index(name)];
    if (!(v.value().shape() == shape))
      throw DimensionError("parameter '" + name + "' has shape " + v.value().shape().str());
    return v;
  }

 private:
  const ParamStore& store_;
  std::span<const Var> leaves_;
};

/// Two-layer perceptron x -> W2 tanh(x W1 + b1) + b2.
template <class T>
struct Mlp {
  T w1, b1, w2, b2;
};

template <class T, class Make>
Mlp<T> make_mlp(Make& make, const std::string& name, std::size_t in, std::size_t hidden,
                std::size_t out) {
  Mlp<T> p;
  p.w1 = make(name + ".w1", Shape{in, hidden}, glorot(in, hidden));
  p.b1 = make(name + ".b1", Shape{hidden}, constant(0.0));
  p.w2 = make(name + ".w2", Shape{hidden, out}, glorot(hidden, out));
  p.b2 = make(name + ".b2", Shape{out}, constant(0.0));
  return p;
}

inline Var mlp(const Mlp<Var>& p, Var x) {
  return diff::linear(diff::tanh(diff::linear(x, p.w1, p.b1)), p.w2, p.b2);
}

}  // namespace crash::model
