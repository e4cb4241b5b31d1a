// SPDX-License-Identifier: Apache-2.0
#pragma once

// Mixture of experts gated by the generative model's responsibilities:
// p(y | x) = sum_c softmax(expert_c(trunk(x))) * resp_c(x).
// Experts are per-component softmax heads over one shared trunk.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "imvae/core/layers.hpp"
#include "imvae/core/optim.hpp"
#include "imvae/core/rng.hpp"
#include "imvae/io/dataset.hpp"
#include "imvae/mixture/dp_mixture.hpp"

namespace imvae::moe {

struct MoeConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 100;
  std::size_t n_classes = 0;
  ops::Activation activation = ops::Activation::tanh;
  std::size_t batch_size = 500;
  std::size_t max_iterations = 1000;  // optimizer steps
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  // Stop once the epoch loss changes by less than this (relative) for
  // `convergence_patience` consecutive epochs. 0 disables early stopping.
  double convergence_tol = 1e-4;
  std::size_t convergence_patience = 3;
  bool tied_expert_init = true;  // every expert starts from the same weights

  void validate() const;
};

class MoeModel {
 public:
  MoeModel() = default;
  MoeModel(const MoeConfig& config, std::size_t n_experts, RngStream& init_rng);

  const MoeConfig& config() const { return config_; }
  std::size_t n_experts() const { return experts_.size(); }

  // Copies a trained hidden block (e.g. a VAE encoder's) into the trunk.
  void init_trunk_from(const nn::HiddenBlock& block);

  // Inference-mode trunk features and per-expert class probabilities.
  Tensor features(const Tensor& x) const;
  Tensor expert_probs(const Tensor& x, std::size_t c) const;
  // sum_c weights[:, c] * expert_probs(x, c); weights [m, C].
  Tensor predict_with_weights(const Tensor& x, const Tensor& weights) const;

  // (1/m) sum_i sum_c weights[i, c] * -log softmax(expert_c(trunk(x_i)))[y_i]
  Var build_loss(Tape& tape, const Tensor& x, std::span<const std::size_t> labels, const Tensor& weights,
                 nn::Mode mode, ops::BatchStats* stats = nullptr);
  // One optimizer step; returns the batch loss. NumericalError on a non-finite loss.
  double train_step(const Tensor& x, std::span<const std::size_t> labels, const Tensor& weights,
                    std::int64_t batch_index = -1);

  std::vector<Parameter*> parameters();
  std::vector<std::pair<std::string, Tensor*>> state_tensors();
  AdamState& adam() { return adam_; }
  const nn::HiddenBlock& trunk() const { return trunk_; }
  const nn::Affine& expert(std::size_t c) const { return experts_.at(c); }

 private:
  void check_batch(const Tensor& x, std::span<const std::size_t> labels, const Tensor& weights) const;

  MoeConfig config_;
  nn::HiddenBlock trunk_;
  std::vector<nn::Affine> experts_;
  AdamState adam_;
};

// Model with parameters drawn from rng.fork(stream_tag("init")).
MoeModel make_model(const MoeConfig& config, std::size_t n_experts, const RngStream& rng);

struct TrainReport {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
  bool converged = false;
};

// Minimizes the responsibility-weighted log loss with fixed weights [m, C].
// Batches are drawn from rng.fork(stream_tag("batches")).
TrainReport train(MoeModel& model, const Tensor& x, std::span<const std::size_t> labels, const Tensor& weights,
                  const RngStream& rng);

// Gating weights of the frozen mixture for each row of x.
Tensor gating_weights(const mixture::MixtureState& mixture, const Tensor& x, const RngStream& rng);

// Computes gating weights from the mixture, then trains.
TrainReport train(MoeModel& model, const mixture::MixtureState& mixture, const io::Dataset& labeled,
                  const RngStream& rng);

// Class distribution per row. Throws InvalidArgument when the expert count
// differs from the component count.
Tensor predict(const MoeModel& model, const mixture::MixtureState& mixture, const Tensor& x, const RngStream& rng);

struct Evaluation {
  double error_rate = 0.0;
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the test set
  double log_loss = 0.0;
};

// Argmax ties go to the lowest class index.
Evaluation evaluate_probs(const Tensor& probs, std::span<const std::size_t> labels, std::size_t n_classes);
Evaluation evaluate(const MoeModel& model, const mixture::MixtureState& mixture, const io::Dataset& test,
                    const RngStream& rng);

// Single softmax head over the same trunk, unweighted log loss. Identical to
// a one-expert MoE trained with unit weights from the same rng.
MoeModel baseline_train(const MoeConfig& config, const Tensor& x, std::span<const std::size_t> labels,
                        const RngStream& rng, const nn::HiddenBlock* trunk_init = nullptr,
                        TrainReport* report = nullptr);

// [m, C * 2 * latent_dim]: per component, resp_c * mu_c then resp_c * sigma_c.
Tensor latent_features(const mixture::MixtureState& mixture, const Tensor& x, const RngStream& rng);

struct ProbeConfig {
  double learning_rate = 0.01;
  std::size_t max_steps = 2000;
  double convergence_tol = 1e-7;  // relative loss change per step
  std::size_t convergence_patience = 20;
  bool standardize = false;  // z-score features with training-split statistics
};

// Multinomial logistic regression, full-batch Adam.
// Returns accuracy on the test features.
double linear_probe(const Tensor& train_features, std::span<const std::size_t> train_labels,
                    const Tensor& test_features, std::span<const std::size_t> test_labels, std::size_t n_classes,
                    const RngStream& rng, const ProbeConfig& config = {});

double linear_probe(const mixture::MixtureState& mixture, const io::Dataset& labeled, const io::Dataset& test,
                    const RngStream& rng, const ProbeConfig& config = {});

}  // namespace imvae::moe
