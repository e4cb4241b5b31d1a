// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dirichlet-process mixture of VAEs fitted by blocked Gibbs sampling.
//
// Mixing weights are integrated out, so an instance joins component c with
// probability eta_c / (n - 1 + alpha), eta_c = (n - 1) * resp_c, and starts a
// new component with probability alpha / (n - 1 + alpha). A new component is
// a copy of the pre-trained base model.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "imvae/core/rng.hpp"
#include "imvae/core/tensor.hpp"
#include "imvae/vae/vae.hpp"

namespace imvae::mixture {

inline constexpr std::size_t kSpawn = std::numeric_limits<std::size_t>::max();

struct MixtureConfig {
  double alpha = 2.0;
  std::size_t c_max = 64;
  std::size_t mc_samples = 2;  // L for responsibilities
  std::size_t batch_size = 500;
  std::size_t max_iterations = 1000;  // optimizer steps when pre-training the base
  std::size_t max_sweeps = 50;
  double convergence_tol = 1e-4;  // relative change, base pre-training and sweeps
  std::size_t convergence_patience = 3;
  // Epochs of ordinary training per component on its assigned instances after
  // each sweep's forget/learn pass. 0 leaves parameter updates to forget/learn.
  std::size_t theta_epochs = 10;
  // Learn steps on each component's seeded instances after label seeding.
  std::size_t label_finetune_steps = 50;

  void validate() const;
};

struct Component {
  vae::VaeModel model;
  RngStream rng;  // training noise, advanced by every step
  std::uint64_t uid = 0;
  std::vector<std::size_t> added;    // instances joining since the last update
  std::vector<std::size_t> removed;  // instances leaving since the last update
};

struct FitProgress {
  std::size_t sweeps_done = 0;
  double last_elbo = 0.0;  // mean per-instance ELBO after the last sweep
  std::size_t stable_sweeps = 0;
  bool converged = false;
};

struct MixtureState {
  MixtureConfig config;
  std::vector<Component> components;
  std::vector<std::size_t> assignments;
  std::optional<vae::VaeModel> base;
  RngStream rng;
  std::uint64_t next_uid = 0;
  FitProgress progress;

  std::size_t size() const { return components.size(); }
  std::vector<std::size_t> occupancy() const;
  std::vector<std::size_t> members(std::size_t c) const;
  // Throws std::logic_error when an assignment does not index a component.
  void check_invariants() const;
};

struct AssignmentDistribution {
  std::vector<double> existing;
  double spawn = 0.0;

  double total() const;
};

struct SweepOptions {
  bool argmax = false;  // take the most probable existing component (noise-free, ties -> lowest index)
  bool allow_spawn = true;
  bool update_parameters = true;  // forget/learn after assignment
  bool refine = true;             // theta epochs after forget/learn

  static SweepOptions zero_temperature() { return {true, false, true, false}; }
};

struct SweepStats {
  std::size_t sweep = 0;
  std::size_t reassignments = 0;
  std::size_t spawns = 0;
  std::size_t removals = 0;
  std::size_t components_before = 0;
  std::size_t components_after = 0;
  std::size_t added_total = 0;    // sum of |added_c| before removal
  std::size_t removed_total = 0;  // sum of |removed_c| before removal
  double elbo = 0.0;              // mean per-instance ELBO under current assignments
  double recon = 0.0;             // mean reconstruction log-likelihood
  double kl = 0.0;                // mean KL
};

// Softmax of per-component expected log-likelihoods, one row per instance of x.
Tensor responsibilities_from_log_likelihood(const Tensor& log_lik);

// Per-instance, per-component expected log-likelihood [n, C]. Every component
// sees the same noise draws, so identical components score identically and
// the result does not depend on list order.
Tensor expected_log_likelihoods(std::span<const Component> components, const Tensor& x, const RngStream& rng,
                                std::size_t samples);

// Responsibilities of a single instance x_i ([1, d]).
std::vector<double> responsibility(std::span<const Component> components, const Tensor& x_i, const RngStream& rng,
                                   std::size_t samples);
// [n, C] responsibilities for all rows of x.
Tensor responsibility_matrix(std::span<const Component> components, const Tensor& x, const RngStream& rng,
                             std::size_t samples);

double occupation_number(std::size_t n, double responsibility);

// Existing-component and spawn probabilities. With spawning disabled the
// existing slots are renormalized and spawn is 0.
AssignmentDistribution assignment_distribution(std::size_t n, double alpha, std::span<const double> resp,
                                               bool allow_spawn = true);
AssignmentDistribution assignment_distribution(const MixtureState& state, const Tensor& x_i, const RngStream& rng);

// Component index or kSpawn.
std::size_t sample_assignment(const AssignmentDistribution& dist, RngStream& rng);

// Appends a copy of the base with fresh optimizer state; returns its index.
std::size_t spawn_component(MixtureState& state);

// Deletes components without instances, keeping survivors in order. Returns
// the number removed.
std::size_t remove_empty(MixtureState& state);

// Forget step on removed instances, learn step on added ones, then clears
// the change sets.
void forget_learn_update(MixtureState& state, std::size_t c, const Tensor& x);

SweepStats gibbs_sweep(MixtureState& state, const Tensor& x, const SweepOptions& options = {});

// Mean per-instance ELBO terms of the current assignment.
SweepStats score_assignments(const MixtureState& state, const Tensor& x, const RngStream& rng);

struct PretrainReport {
  std::vector<double> step_loss;
  std::vector<double> step_recon;
  std::vector<double> step_kl;
  std::size_t steps = 0;
  bool converged = false;
};

// Trains one VAE on all of x for up to config.max_iterations optimizer steps.
// Stops early once the epoch-mean loss changes by less than convergence_tol
// (relative) for convergence_patience consecutive epochs.
vae::VaeModel pretrain_base(const vae::VaeConfig& vae_config, const MixtureConfig& config, const Tensor& x,
                            const RngStream& rng, PretrainReport* report = nullptr);

// Mixture with `c_init` copies of the base and every instance on component 0.
MixtureState initialize(const MixtureConfig& config, const vae::VaeModel& base, std::size_t n, std::size_t c_init,
                        const RngStream& rng);

// Forces each labeled instance onto the component of its class, applies one
// forget/learn pass, fine-tunes each component on its seeded instances, then
// assigns unlabeled instances by argmax responsibility.
void seed_assignments_with_labels(MixtureState& state, const Tensor& x, std::span<const std::size_t> indices,
                                  std::span<const std::size_t> labels);

using SweepCallback = std::function<void(const MixtureState&, const SweepStats&)>;

// Sweeps until convergence or max_sweeps. Resumes from state.progress.
void run_sweeps(MixtureState& state, const Tensor& x, const SweepCallback& on_sweep = {});

struct SeedLabels {
  std::vector<std::size_t> indices;
  std::vector<std::size_t> labels;
  std::size_t n_classes = 0;
};

// Initial state from a trained base: one component, or one per class with
// label seeding. fit() calls this with rng.fork(stream_tag("mixture")).
MixtureState prepare(const MixtureConfig& config, const vae::VaeModel& base, const Tensor& x, const RngStream& rng,
                     const SeedLabels* seed = nullptr);

// Pre-train on rng.fork(stream_tag("pretrain")), prepare and sweep.
MixtureState fit(const vae::VaeConfig& vae_config, const MixtureConfig& config, const Tensor& x, const RngStream& rng,
                 const SeedLabels* seed = nullptr, const SweepCallback& on_sweep = {},
                 PretrainReport* pretrain_report = nullptr);

// Responsibility-weighted sum of per-component expected reconstructions.
// Responsibilities use rng.fork(stream_tag("responsibility")) and every
// component reconstructs with rng.fork(stream_tag("reconstruction")).
Tensor expected_reconstruction(const MixtureState& state, const Tensor& x, const RngStream& rng,
                               std::size_t n_samples);

struct LatentRow {
  std::size_t instance = 0;
  std::size_t component = 0;
  std::vector<double> mu;
  std::vector<double> sigma;
  double responsibility = 0.0;
};

// One row per (instance, component); responsibilities as in
// expected_reconstruction.
std::vector<LatentRow> export_latent_stats(const MixtureState& state, const Tensor& x, const RngStream& rng);

}  // namespace imvae::mixture
