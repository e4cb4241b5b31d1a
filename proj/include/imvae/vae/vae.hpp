// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "imvae/core/layers.hpp"
#include "imvae/core/optim.hpp"
#include "imvae/core/rng.hpp"
#include "imvae/core/tape.hpp"

namespace imvae::vae {

enum class DecoderKind { bernoulli, gaussian };

// asymmetric: tanh hidden units and a sigmoid Bernoulli head (binary data).
// symmetric: softplus hidden units and Gaussian (mu, sigma) heads.
enum class Architecture { asymmetric, symmetric };

std::string to_string(DecoderKind kind);
std::string to_string(Architecture arch);
DecoderKind parse_decoder_kind(const std::string& s);
Architecture parse_architecture(const std::string& s);

struct VaeConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 100;
  std::size_t latent_dim = 10;
  DecoderKind decoder = DecoderKind::bernoulli;
  Architecture architecture = Architecture::asymmetric;
  std::size_t mc_samples = 2;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;

  // max(1, round(0.1 * hidden_dim))
  static std::size_t default_latent_dim(std::size_t hidden_dim);
  // Throws InvalidArgument on inconsistent settings.
  void validate() const;
};

// Diagonal Gaussian q(z|x); sigma holds standard deviations.
struct LatentGaussian {
  Tensor mu;
  Tensor sigma;
};

// Decoder distribution parameters. For bernoulli `mean` holds probabilities
// and `sigma` is empty.
struct DecoderOutput {
  DecoderKind kind = DecoderKind::bernoulli;
  Tensor mean;
  Tensor sigma;
};

struct LossTerms {
  double loss = 0.0;   // kl - recon
  double recon = 0.0;  // batch mean of the Monte Carlo reconstruction log-likelihood
  double kl = 0.0;     // batch mean of KL(q || N(0, I))
};

// Context attached to numerical failures.
struct StepContext {
  std::int64_t batch_index = -1;
  std::int64_t component_id = -1;
};

class VaeModel {
 public:
  VaeModel() = default;
  VaeModel(const VaeConfig& config, RngStream& init_rng);

  const VaeConfig& config() const { return config_; }

  // Inference-mode passes (batchnorm uses running statistics).
  LatentGaussian encode(const Tensor& x) const;
  DecoderOutput decode(const Tensor& z) const;

  // Differentiable graph for the ELBO loss on `x` with reparameterization
  // noise `eps` of shape [L * batch, latent_dim] (L stacked blocks).
  struct Graph {
    Var loss;
    Var recon;  // per-row MC reconstruction log-likelihood, [batch]
    Var kl;     // per-row KL, [batch]
    Var recon_mean;
    Var kl_mean;
    Var mu;
    Var logvar;
    Var z;
  };
  Graph build_graph(Tape& tape, const Tensor& x, const Tensor& eps, nn::Mode mode,
                    std::vector<ops::BatchStats>* stats = nullptr);

  // Loss with fresh noise drawn from `rng` (pure: no state changes).
  LossTerms elbo_loss(const Tensor& x, RngStream& rng, nn::Mode mode = nn::Mode::train);
  // Loss with caller-provided noise.
  LossTerms elbo_loss_with_noise(const Tensor& x, const Tensor& eps, nn::Mode mode = nn::Mode::train);
  // Writes d(loss)/d(param) into each parameter's grad; returns the loss terms.
  LossTerms loss_and_gradient(const Tensor& x, const Tensor& eps, nn::Mode mode = nn::Mode::train);

  // One optimizer step with effective learning rate sign * config.learning_rate.
  // Throws NumericalError (with context) when the loss is not finite.
  LossTerms train_step(const Tensor& x, RngStream& rng, int sign, StepContext ctx = {});
  LossTerms train_step_with_noise(const Tensor& x, const Tensor& eps, int sign, StepContext ctx = {});

  // Mean over n_samples of the decoder mean with z ~ q(z|x).
  Tensor expected_reconstruction(const Tensor& x, RngStream& rng, std::size_t n_samples) const;
  // Same with explicit noise [n_samples * batch, latent_dim].
  Tensor expected_reconstruction_with_noise(const Tensor& x, const Tensor& eps, std::size_t n_samples) const;

  // Per-row (1/L) sum_l log p(x | z_l), z_l ~ q(z|x), inference mode.
  Tensor expected_log_likelihood(const Tensor& x, RngStream& rng, std::size_t samples) const;
  // Per-row log p(x | decode(mu)), noise-free.
  Tensor log_likelihood_at_mean(const Tensor& x) const;
  // Per-row negative ELBO (KL - MC recon) in inference mode.
  Tensor row_loss(const Tensor& x, RngStream& rng) const;

  const nn::HiddenBlock& encoder_hidden() const { return enc_hidden_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  // Named tensors covering parameters, batchnorm running statistics and
  // optimizer moments, in a fixed order. Used by checkpoints.
  std::vector<std::pair<std::string, Tensor*>> state_tensors();
  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }

  void reset_optimizer() { adam_.reset(); }
  bool parameters_finite() const;

 private:
  Tensor draw_noise(RngStream& rng, std::size_t batch, std::size_t samples) const;
  void check_input(const Tensor& x) const;
  void apply_update(double learning_rate);

  VaeConfig config_;
  nn::HiddenBlock enc_hidden_;
  nn::Affine enc_mu_;
  nn::Affine enc_logvar_;
  nn::HiddenBlock dec_hidden_;
  nn::Affine dec_out_;     // probabilities (bernoulli) or mu_dec (gaussian)
  nn::Affine dec_logvar_;  // gaussian only
  AdamState adam_;
};

// 0.5 * sum_d (mu^2 + sigma^2 - 1 - log sigma^2), one value per row.
Tensor kl_diag_gaussian(const LatentGaussian& latent);

// Per-row log p(x | decoder). Bernoulli requires x in [0, 1].
Tensor recon_log_likelihood(const Tensor& x, const DecoderOutput& decoded);

// z = mu + sigma * eps
Tensor reparameterize(const LatentGaussian& latent, const Tensor& eps);

}  // namespace imvae::vae
