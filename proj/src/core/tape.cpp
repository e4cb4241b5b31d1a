// SPDX-License-Identifier: Apache-2.0
#include "imvae/core/tape.hpp"

#include "imvae/core/error.hpp"
#include "imvae/core/kernels.hpp"

namespace imvae {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  if (mode_ == GradMode::disabled) return constant(p.value);
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  const std::size_t id = nodes_.size() - 1;
  param_nodes_.emplace(&p, id);
  return Var{this, id};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  const std::size_t id = nodes_.size();
  for (auto in : inputs) {
    if (in >= id) throw Error("tape input references a later node");
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, id};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error("backward: loss belongs to a different tape");
  if (!nodes_.at(loss.id).value.is_scalar()) {
    throw DimensionError("backward: loss must be scalar, got shape " + shape_to_string(nodes_[loss.id].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  for (auto& [p, id] : param_nodes_) nodes_[id].param->zero_grad();

  nodes_[loss.id].grad = Tensor(nodes_[loss.id].value.shape(), 1.0);
  std::vector<Tensor*> in_grads;
  for (std::size_t k = loss.id + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      kernels::active().axpy(n.grad.size(), 1.0, n.grad.ptr(), n.param->grad.ptr());
      continue;
    }
    in_grads.clear();
    for (auto in : n.inputs) {
      Node& src = nodes_[in];
      if (!src.requires_grad) {
        in_grads.push_back(nullptr);
        continue;
      }
      if (src.grad.empty()) src.grad = Tensor(src.value.shape());
      in_grads.push_back(&src.grad);
    }
    n.backward(*this, n.grad, in_grads);
  }
}

}  // namespace imvae
