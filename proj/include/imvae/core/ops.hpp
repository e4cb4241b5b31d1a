// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable primitives recorded on a Tape. Each op checks shapes and
// throws DimensionError naming the offending shapes.

#include <cstddef>
#include <span>
#include <vector>

#include "imvae/core/tape.hpp"
#include "imvae/core/tensor.hpp"

namespace imvae::ops {

enum class Activation { tanh, softplus, sigmoid, relu };

// x[b,in] * W[in,out] + bias[out]
Var affine(Var x, Var weight, Var bias);
Var matmul(Var a, Var b);
Var add_bias(Var a, Var bias);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var activation(Var x, Activation kind);
Var exp(Var x);
Var square(Var x);

// Per-column batch statistics from a training-mode batchnorm pass.
struct BatchStats {
  Tensor mean;
  Tensor var;
};

inline constexpr double kBatchNormEpsilon = 1e-5;

// Normalizes by batch mean/variance (biased), then scales and shifts.
// Requires at least two rows. Batch statistics are written to `stats` when
// non-null; running averages are the caller's business.
Var batchnorm_train(Var x, Var gamma, Var beta, BatchStats* stats = nullptr);
// Normalizes with fixed statistics.
Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var);

// [m,n] -> [m]
Var row_sum(Var a);
// -> [1]
Var sum(Var a);
Var mean(Var a);

// [m,n] -> [times*m, n]: the whole block repeated `times` times.
Var repeat_rows(Var a, std::size_t times);
// [times*m] -> [m]: average over the `times` stacked blocks.
Var mean_over_blocks(Var a, std::size_t times);

inline constexpr double kBernoulliClamp = 1e-7;

// Per-row sum_d x log p + (1-x) log(1-p), p clamped to [1e-7, 1-1e-7].
// `x` may have fewer rows than `p` when p stacks several blocks of x.
Var bernoulli_log_likelihood(const Tensor& x, Var p);
// Per-row sum_d log N(x_d; mu_d, exp(logvar_d)).
Var gaussian_log_likelihood(const Tensor& x, Var mu, Var logvar);

// Per-row weighted softmax cross-entropy: weights[i] * -log softmax(logits_i)[labels_i].
Var weighted_cross_entropy(Var logits, std::span<const std::size_t> labels, const Tensor& weights);

// Plain (non-recorded) helpers shared by inference code and tests.
double activation_value(double x, Activation kind);
Tensor activation_forward(const Tensor& x, Activation kind);
Tensor affine_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor softmax_rows(const Tensor& logits);
double log_sum_exp(std::span<const double> v);

}  // namespace imvae::ops
