#include "ad/tape.hpp"

#include "common/error.hpp"

namespace evseq::ad {

Parameter& ParameterStore::add(std::string name, Tensor value, bool trainable) {
  for (const auto& p : params_)
    if (p.name == name) throw Error("parameter '" + name + "' registered twice");
  Parameter p;
  p.name = std::move(name);
  p.grad = Tensor(value.shape());
  p.value = std::move(value);
  p.trainable = trainable;
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw Error("unknown parameter '" + name + "'");
}

const Parameter& ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw Error("unknown parameter '" + name + "'");
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor t) {
  Node n;
  n.own = std::move(t);
  return push(std::move(n));
}

Var Tape::leaf(Tensor t) {
  Node n;
  n.own = std::move(t);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = grad_enabled_ && p.trainable;
  return push(std::move(n));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node n;
  n.own = std::move(value);
  if (grad_enabled_) {
    for (const auto& v : inputs) {
      if (v.tape != this) throw Error("tape: input recorded on a different tape");
      if (nodes_[v.id].requires_grad) n.requires_grad = true;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Tensor& Tape::grad_of(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value().size() || n.grad.shape() != n.value().shape()) n.grad = Tensor(n.value().shape());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw Error("tape: backward root belongs to another tape");
  if (value(root).size() != 1) throw ShapeError("backward: root must be a scalar, got " + value(root).shape_str());
  if (!nodes_[root.id].requires_grad) return;
  grad_of(root.id)[0] += 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      if (n.param->grad.size() != n.grad.size()) n.param->zero_grad();
      n.param->grad.axpy(1.0, n.grad);
    }
  }
}

}  // namespace evseq::ad
