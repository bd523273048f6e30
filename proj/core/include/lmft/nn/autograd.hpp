#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lmft/nn/tensor.hpp"

namespace lmft::nn {

/// A trainable tensor that outlives any single tape. Gradients from every
/// backward pass that binds the parameter accumulate into `grad`.
template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, BasicTensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape(), T{0}) {}

  void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
class Tape;

/// Lightweight handle to a node recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t index) : tape_(tape), index_(index) {}

  const BasicTensor<T>& value() const { return tape_->value_of(index_); }
  const BasicTensor<T>& grad() const { return tape_->grad_of(index_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(index_); }
  Tape<T>* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Records ops in creation order and replays their backward closures in
/// reverse. A node needs a gradient iff any of its inputs does; constant
/// subgraphs record no closure, so inference through a tape stays cheap.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(BasicTensor<T> value) { return push(std::move(value), false, {}, nullptr, nullptr, "constant"); }

  Var<T> variable(BasicTensor<T> value) { return push(std::move(value), true, {}, nullptr, nullptr, "variable"); }

  Var<T> parameter(Parameter<T>& p) { return push(p.value, true, {}, nullptr, &p, p.name.c_str()); }

  /// Records an op result. `backward` is only kept when some input needs a gradient.
  Var<T> record(const char* op, BasicTensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    for (std::size_t i : inputs) needs = needs || nodes_[i].requires_grad;
    if (!needs) backward = nullptr;
    return push(std::move(value), needs, std::move(inputs), std::move(backward), nullptr, op);
  }

  const BasicTensor<T>& value_of(std::size_t i) const { return nodes_.at(i).value; }

  BasicTensor<T>& grad_of(std::size_t i) {
    Node& n = nodes_.at(i);
    if (n.grad.size() != n.value.size()) n.grad = BasicTensor<T>(n.value.shape(), T{0});
    return n.grad;
  }
  const BasicTensor<T>& grad_of(std::size_t i) const {
    const Node& n = nodes_.at(i);
    if (n.grad.size() != n.value.size()) throw std::logic_error("no gradient recorded for node");
    return n.grad;
  }

  bool requires_grad(std::size_t i) const { return nodes_.at(i).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and walks nodes from `root` down to 0 exactly once.
  void backward(const Var<T>& root) {
    if (root.tape() != this) throw std::logic_error("backward on a foreign tape");
    if (root.value().size() != 1) throw ShapeError("backward root must be a scalar");
    trace_.clear();
    grad_of(root.index()).fill(T{1});
    for (std::size_t k = root.index() + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.requires_grad || n.grad.size() != n.value.size()) continue;
      if (tracing_) trace_.push_back(k);
      if (n.backward) n.backward(*this, k);
      if (n.param) {
        auto& acc = n.param->grad.storage();
        const auto& g = n.grad.storage();
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
      }
    }
  }

  void clear() {
    nodes_.clear();
    trace_.clear();
  }

  void set_tracing(bool on) { tracing_ = on; }
  const std::vector<std::size_t>& trace() const { return trace_; }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(BasicTensor<T> value, bool requires_grad, std::vector<std::size_t> inputs, BackwardFn backward,
              Parameter<T>* param, const char* op) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(inputs), std::move(backward), param});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> trace_;
  bool tracing_ = false;
};

}  // namespace lmft::nn
