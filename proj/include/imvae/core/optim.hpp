// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "imvae/core/tape.hpp"

namespace imvae {

enum class OptimizerKind { adam, sgd };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment estimates for one parameter list; lazily shaped on first step.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;

  void reset() { m.clear(); v.clear(); t = 0; }
};

// One bias-corrected Adam step. A negative learning rate ascends the loss.
void adam_step(std::span<Parameter* const> params, AdamState& state, double learning_rate);

// params <- params - learning_rate * grad
void sgd_step(std::span<Parameter* const> params, double learning_rate);

void zero_grad(std::span<Parameter* const> params);

}  // namespace imvae
