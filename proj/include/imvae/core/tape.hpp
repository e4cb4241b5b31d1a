// SPDX-License-Identifier: Apache-2.0
#pragma once

// Define-by-run reverse-mode automatic differentiation.
//
// A Tape records every primitive evaluated during one forward pass. Nodes only
// reference earlier nodes, so a single reverse sweep over the node list
// visits each node once and accumulates adjoints into its inputs. Parameters
// enter the tape through Tape::param; after backward() their gradients are
// written into Parameter::grad.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "imvae/core/tensor.hpp"

namespace imvae {

// A trainable tensor together with its gradient buffer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

enum class GradMode { enabled, disabled };

class Tape {
 public:
  // Receives the node's output adjoint and one adjoint buffer per input;
  // buffers for inputs that do not require gradients are nullptr.
  using Backward = std::function<void(const Tape&, const Tensor& out_grad, std::span<Tensor* const> in_grads)>;

  explicit Tape(GradMode mode = GradMode::enabled) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Registers a parameter; the same parameter always maps to the same node.
  // With GradMode::disabled this is a constant holding a copy of the value.
  Var param(Parameter& p);

  Var record(Tensor value, std::vector<std::size_t> inputs, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Gradients of registered parameters are
  // overwritten (not accumulated across calls).
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  GradMode mode_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

}  // namespace imvae
