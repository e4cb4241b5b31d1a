// SPDX-License-Identifier: Apache-2.0
#include "imvae/core/optim.hpp"

#include <cmath>

#include "imvae/core/error.hpp"
#include "imvae/core/kernels.hpp"

namespace imvae {

void adam_step(std::span<Parameter* const> params, AdamState& state, double learning_rate) {
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  state.t += 1;
  const auto& cfg = state.config;
  const double t = static_cast<double>(state.t);
  const double step_size = learning_rate / (1.0 - std::pow(cfg.beta1, t));
  const double v_scale = 1.0 / (1.0 - std::pow(cfg.beta2, t));
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    require_same_shape(p.value, state.m[i], "adam_step");
    require_same_shape(p.value, p.grad, "adam_step");
    k.adam(p.value.size(), p.value.ptr(), p.grad.ptr(), state.m[i].ptr(), state.v[i].ptr(), cfg.beta1, cfg.beta2,
           step_size, v_scale, cfg.epsilon);
  }
}

void sgd_step(std::span<Parameter* const> params, double learning_rate) {
  const auto& k = kernels::active();
  for (Parameter* p : params) {
    require_same_shape(p->value, p->grad, "sgd_step");
    k.axpy(p->value.size(), -learning_rate, p->grad.ptr(), p->value.ptr());
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace imvae
