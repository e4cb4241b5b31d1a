// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "imvae/core/ops.hpp"
#include "imvae/core/rng.hpp"
#include "imvae/core/tape.hpp"

namespace imvae::nn {

enum class Mode { train, eval };

// Fully connected layer y = x W + b, W uniform(-a, a) with
// a = sqrt(6 / (fan_in + fan_out)) and zero bias.
struct Affine {
  Parameter weight;
  Parameter bias;

  Affine() = default;
  Affine(std::size_t in, std::size_t out, const std::string& name);

  void init_uniform(RngStream& rng);
  Var forward(Tape& tape, Var x);
  Tensor forward(const Tensor& x) const;
  std::size_t in_dim() const { return weight.value.dim(0); }
  std::size_t out_dim() const { return weight.value.dim(1); }
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight); out.push_back(&bias); }
};

// Batch normalization with learned scale/shift and running statistics
// updated as running = momentum * running + (1 - momentum) * batch.
struct BatchNorm {
  static constexpr double kMomentum = 0.9;

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

  BatchNorm() = default;
  BatchNorm(std::size_t dim, const std::string& name);

  // Train mode with a single row falls back to the running statistics.
  Var forward(Tape& tape, Var x, Mode mode, ops::BatchStats* stats);
  Tensor forward(const Tensor& x) const;
  void update_running(const ops::BatchStats& stats);
  void collect(std::vector<Parameter*>& out) { out.push_back(&gamma); out.push_back(&beta); }
};

// affine -> batchnorm -> activation, the hidden block of every network here.
struct HiddenBlock {
  Affine affine;
  BatchNorm norm;
  ops::Activation activation = ops::Activation::tanh;

  HiddenBlock() = default;
  HiddenBlock(std::size_t in, std::size_t out, ops::Activation act, const std::string& name);

  Var forward(Tape& tape, Var x, Mode mode, ops::BatchStats* stats);
  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out) { affine.collect(out); norm.collect(out); }
};

}  // namespace imvae::nn
