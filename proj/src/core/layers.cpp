// SPDX-License-Identifier: Apache-2.0
#include "imvae/core/layers.hpp"

#include <cmath>

#include "imvae/core/error.hpp"

namespace imvae::nn {

Affine::Affine(std::size_t in, std::size_t out, const std::string& name)
    : weight(name + ".weight", Tensor({in, out})), bias(name + ".bias", Tensor({out})) {}

void Affine::init_uniform(RngStream& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in_dim() + out_dim()));
  for (auto& w : weight.value.data()) w = (2.0 * rng.uniform() - 1.0) * a;
  bias.value.fill(0.0);
}

Var Affine::forward(Tape& tape, Var x) { return ops::affine(x, tape.param(weight), tape.param(bias)); }

Tensor Affine::forward(const Tensor& x) const { return ops::affine_forward(x, weight.value, bias.value); }

BatchNorm::BatchNorm(std::size_t dim, const std::string& name)
    : gamma(name + ".gamma", Tensor({dim}, 1.0)),
      beta(name + ".beta", Tensor({dim})),
      running_mean({dim}),
      running_var({dim}, 1.0) {}

Var BatchNorm::forward(Tape& tape, Var x, Mode mode, ops::BatchStats* stats) {
  if (mode == Mode::train && x.value().rows() >= 2) {
    return ops::batchnorm_train(x, tape.param(gamma), tape.param(beta), stats);
  }
  return ops::batchnorm_eval(x, tape.param(gamma), tape.param(beta), running_mean, running_var);
}

Tensor BatchNorm::forward(const Tensor& x) const {
  const std::size_t m = x.rows(), d = x.cols();
  if (d != gamma.value.size()) {
    throw DimensionError("batchnorm: x " + shape_to_string(x.shape()) + " gamma " + shape_to_string(gamma.value.shape()));
  }
  Tensor out({m, d});
  for (std::size_t j = 0; j < d; ++j) {
    const double inv_std = 1.0 / std::sqrt(running_var[j] + ops::kBatchNormEpsilon);
    for (std::size_t i = 0; i < m; ++i) out(i, j) = gamma.value[j] * (x(i, j) - running_mean[j]) * inv_std + beta.value[j];
  }
  return out;
}

void BatchNorm::update_running(const ops::BatchStats& stats) {
  if (stats.mean.empty()) return;
  for (std::size_t j = 0; j < running_mean.size(); ++j) {
    running_mean[j] = kMomentum * running_mean[j] + (1.0 - kMomentum) * stats.mean[j];
    running_var[j] = kMomentum * running_var[j] + (1.0 - kMomentum) * stats.var[j];
  }
}

HiddenBlock::HiddenBlock(std::size_t in, std::size_t out, ops::Activation act, const std::string& name)
    : affine(in, out, name), norm(out, name + ".bn"), activation(act) {}

Var HiddenBlock::forward(Tape& tape, Var x, Mode mode, ops::BatchStats* stats) {
  return ops::activation(norm.forward(tape, affine.forward(tape, x), mode, stats), activation);
}

Tensor HiddenBlock::forward(const Tensor& x) const {
  return ops::activation_forward(norm.forward(affine.forward(x)), activation);
}

}  // namespace imvae::nn
