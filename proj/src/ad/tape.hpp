#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ad/tensor.hpp"

namespace evseq::ad {

// Trainable (or buffer) array owned by a model; gradients accumulate here.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
    else grad.fill(0.0);
  }
};

// Parameters in registration order; references stay valid as the store grows.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor value, bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  void zero_grad();
  std::size_t trainable_count() const;

 private:
  std::deque<Parameter> params_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode record. Nodes are appended in evaluation order, which is a
// topological order; backward walks it once in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t);
  Var leaf(Tensor t);
  Var param(Parameter& p);

  // Records an op output. `backward` is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  // Seeds d(root)/d(root) = 1 for a 1x1 root, propagates, and adds parameter
  // gradients into Parameter::grad.
  void backward(Var root);

  const Tensor& value(Var v) const { return nodes_[v.id].value(); }
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient accumulator for v, allocated on first use (zero-initialised).
  Tensor& grad_of(std::uint32_t id);
  Tensor& grad_of(Var v) { return grad_of(v.id); }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor own;
    const Tensor* external = nullptr;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    const Tensor& value() const { return external ? *external : own; }
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

}  // namespace evseq::ad
