// SPDX-License-Identifier: Apache-2.0
#include "imvae/mixture/dp_mixture.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "imvae/core/error.hpp"
#include "imvae/core/ops.hpp"
#include "imvae/io/dataset.hpp"

namespace imvae::mixture {

namespace {

const std::uint64_t kTagComponent = stream_tag("component");
const std::uint64_t kTagSweep = stream_tag("sweep");
const std::uint64_t kTagResponsibility = stream_tag("responsibility");
const std::uint64_t kTagScore = stream_tag("score");
const std::uint64_t kTagOrder = stream_tag("order");
const std::uint64_t kTagDraws = stream_tag("draws");
const std::uint64_t kTagRefine = stream_tag("refine");
const std::uint64_t kTagReconstruction = stream_tag("reconstruction");

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

void require_components(std::span<const Component> components, const char* what) {
  if (components.empty()) throw InvalidArgument(std::string(what) + ": mixture has no components");
}

}  // namespace

void MixtureConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be positive, got " + std::to_string(alpha));
  if (c_max < 1) throw InvalidArgument("c_max must be >= 1");
  if (mc_samples < 1) throw InvalidArgument("mc_samples must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(convergence_tol >= 0.0)) throw InvalidArgument("convergence_tol must be >= 0");
  if (convergence_patience < 1) throw InvalidArgument("convergence_patience must be >= 1");
}

std::vector<std::size_t> MixtureState::occupancy() const {
  std::vector<std::size_t> counts(components.size(), 0);
  for (std::size_t a : assignments) ++counts.at(a);
  return counts;
}

std::vector<std::size_t> MixtureState::members(std::size_t c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] == c) out.push_back(i);
  return out;
}

void MixtureState::check_invariants() const {
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] >= components.size())
      throw std::logic_error("instance " + std::to_string(i) + " assigned to missing component " +
                             std::to_string(assignments[i]));
}

double AssignmentDistribution::total() const {
  return std::accumulate(existing.begin(), existing.end(), 0.0) + spawn;
}

Tensor responsibilities_from_log_likelihood(const Tensor& log_lik) { return ops::softmax_rows(log_lik); }

Tensor expected_log_likelihoods(std::span<const Component> components, const Tensor& x, const RngStream& rng,
                                std::size_t samples) {
  require_components(components, "expected_log_likelihoods");
  const std::size_t n = x.rows(), c_count = components.size();
  Tensor out({n, c_count});
  for (std::size_t c = 0; c < c_count; ++c) {
    RngStream noise = rng;
    const Tensor ll = components[c].model.expected_log_likelihood(x, noise, samples);
    for (std::size_t i = 0; i < n; ++i) out(i, c) = ll[i];
  }
  return out;
}

Tensor responsibility_matrix(std::span<const Component> components, const Tensor& x, const RngStream& rng,
                             std::size_t samples) {
  return responsibilities_from_log_likelihood(expected_log_likelihoods(components, x, rng, samples));
}

std::vector<double> responsibility(std::span<const Component> components, const Tensor& x_i, const RngStream& rng,
                                   std::size_t samples) {
  if (x_i.rows() != 1) throw DimensionError("responsibility expects one instance, got " + shape_to_string(x_i.shape()));
  const Tensor r = responsibility_matrix(components, x_i, rng, samples);
  return {r.data().begin(), r.data().end()};
}

double occupation_number(std::size_t n, double responsibility) {
  if (n < 1) throw InvalidArgument("occupation_number needs n >= 1");
  if (!(responsibility >= 0.0 && responsibility <= 1.0))
    throw InvalidArgument("responsibility outside [0, 1]: " + std::to_string(responsibility));
  return static_cast<double>(n - 1) * responsibility;
}

AssignmentDistribution assignment_distribution(std::size_t n, double alpha, std::span<const double> resp,
                                               bool allow_spawn) {
  if (n < 1) throw InvalidArgument("assignment_distribution needs n >= 1");
  if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  if (resp.empty()) throw InvalidArgument("assignment_distribution needs at least one component");
  AssignmentDistribution dist;
  dist.existing.resize(resp.size());
  if (!allow_spawn) {
    const double total = std::accumulate(resp.begin(), resp.end(), 0.0);
    if (!(total > 0.0)) throw InvalidArgument("responsibilities sum to zero");
    for (std::size_t c = 0; c < resp.size(); ++c) dist.existing[c] = resp[c] / total;
    return dist;
  }
  const double denom = static_cast<double>(n - 1) + alpha;
  for (std::size_t c = 0; c < resp.size(); ++c) dist.existing[c] = occupation_number(n, resp[c]) / denom;
  dist.spawn = alpha / denom;
  return dist;
}

AssignmentDistribution assignment_distribution(const MixtureState& state, const Tensor& x_i, const RngStream& rng) {
  const auto resp = responsibility(state.components, x_i, rng, state.config.mc_samples);
  return assignment_distribution(state.assignments.size(), state.config.alpha, resp,
                                 state.components.size() < state.config.c_max);
}

std::size_t sample_assignment(const AssignmentDistribution& dist, RngStream& rng) {
  const double u = rng.uniform() * dist.total();
  double acc = 0.0;
  std::size_t last_nonzero = kSpawn;
  for (std::size_t c = 0; c < dist.existing.size(); ++c) {
    if (dist.existing[c] <= 0.0) continue;
    acc += dist.existing[c];
    last_nonzero = c;
    if (u < acc) return c;
  }
  if (dist.spawn > 0.0) return kSpawn;
  if (last_nonzero == kSpawn) throw InvalidArgument("sample_assignment: distribution has no mass");
  return last_nonzero;
}

std::size_t spawn_component(MixtureState& state) {
  if (!state.base) throw InvalidArgument("spawn_component: no pre-trained base model");
  Component comp;
  comp.model = *state.base;
  comp.model.reset_optimizer();
  comp.uid = state.next_uid++;
  comp.rng = state.rng.fork(kTagComponent).fork(comp.uid);
  state.components.push_back(std::move(comp));
  return state.components.size() - 1;
}

std::size_t remove_empty(MixtureState& state) {
  const auto counts = state.occupancy();
  std::vector<std::size_t> remap(counts.size(), kSpawn);
  std::vector<Component> kept;
  kept.reserve(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    remap[c] = kept.size();
    kept.push_back(std::move(state.components[c]));
  }
  const std::size_t removed = counts.size() - kept.size();
  state.components = std::move(kept);
  for (auto& a : state.assignments) a = remap[a];
  return removed;
}

void forget_learn_update(MixtureState& state, std::size_t c, const Tensor& x) {
  Component& comp = state.components.at(c);
  const vae::StepContext ctx{-1, static_cast<std::int64_t>(c)};
  if (!comp.removed.empty()) comp.model.train_step(x.gather_rows(comp.removed), comp.rng, -1, ctx);
  if (!comp.added.empty()) comp.model.train_step(x.gather_rows(comp.added), comp.rng, +1, ctx);
  comp.removed.clear();
  comp.added.clear();
}

namespace {

Tensor noise_free_log_likelihood(const Component& comp, const Tensor& x) { return comp.model.log_likelihood_at_mean(x); }

void refine_component(MixtureState& state, std::size_t c, const Tensor& x, std::size_t sweep) {
  const auto members = state.members(c);
  if (members.empty()) return;
  Component& comp = state.components[c];
  const RngStream order_rng = comp.rng.fork(kTagRefine);
  for (std::size_t e = 0; e < state.config.theta_epochs; ++e) {
    const auto batches = io::batch_iter(members.size(), state.config.batch_size, order_rng,
                                        sweep * state.config.theta_epochs + e);
    std::int64_t b = 0;
    for (const auto& batch : batches) {
      std::vector<std::size_t> rows(batch.size());
      for (std::size_t j = 0; j < batch.size(); ++j) rows[j] = members[batch[j]];
      comp.model.train_step(x.gather_rows(rows), comp.rng, +1, {b++, static_cast<std::int64_t>(c)});
    }
  }
}

}  // namespace

SweepStats score_assignments(const MixtureState& state, const Tensor& x, const RngStream& rng) {
  SweepStats s;
  const std::size_t n = x.rows();
  double recon = 0.0, kl = 0.0;
  for (std::size_t c = 0; c < state.components.size(); ++c) {
    const auto members = state.members(c);
    if (members.empty()) continue;
    const auto& model = state.components[c].model;
    const Tensor xs = x.gather_rows(members);
    RngStream noise = rng;
    const Tensor rec = model.expected_log_likelihood(xs, noise, state.config.mc_samples);
    const Tensor k = vae::kl_diag_gaussian(model.encode(xs));
    for (std::size_t i = 0; i < members.size(); ++i) {
      recon += rec[i];
      kl += k[i];
    }
  }
  s.recon = recon / static_cast<double>(n);
  s.kl = kl / static_cast<double>(n);
  s.elbo = s.recon - s.kl;
  s.components_after = state.components.size();
  return s;
}

SweepStats gibbs_sweep(MixtureState& state, const Tensor& x, const SweepOptions& options) {
  const std::size_t n = x.rows();
  if (state.assignments.size() != n)
    throw DimensionError("gibbs_sweep: state has " + std::to_string(state.assignments.size()) +
                         " assignments for " + std::to_string(n) + " instances");
  require_components(state.components, "gibbs_sweep");
  state.check_invariants();

  SweepStats stats;
  stats.sweep = state.progress.sweeps_done;
  stats.components_before = state.components.size();
  const RngStream sweep_rng = state.rng.fork(kTagSweep).fork(stats.sweep);
  const RngStream resp_rng = sweep_rng.fork(kTagResponsibility);
  RngStream draws = sweep_rng.fork(kTagDraws);

  auto column_for = [&](const Component& comp) {
    if (options.argmax) return noise_free_log_likelihood(comp, x);
    RngStream noise = resp_rng;
    return comp.model.expected_log_likelihood(x, noise, state.config.mc_samples);
  };
  std::vector<Tensor> log_lik;
  log_lik.reserve(state.components.size());
  for (const auto& comp : state.components) log_lik.push_back(column_for(comp));

  RngStream order_rng = sweep_rng.fork(kTagOrder);
  const auto order = order_rng.permutation(n);
  std::vector<double> logits, resp;
  for (std::size_t i : order) {
    const std::size_t c_count = state.components.size();
    logits.resize(c_count);
    for (std::size_t c = 0; c < c_count; ++c) logits[c] = log_lik[c][i];
    std::size_t target;
    if (options.argmax) {
      target = argmax_lowest(logits);
    } else {
      const double lse = ops::log_sum_exp(logits);
      resp.resize(c_count);
      for (std::size_t c = 0; c < c_count; ++c) resp[c] = std::exp(logits[c] - lse);
      const bool spawn_ok = options.allow_spawn && c_count < state.config.c_max;
      target = sample_assignment(assignment_distribution(n, state.config.alpha, resp, spawn_ok), draws);
    }
    if (target == kSpawn) {
      target = spawn_component(state);
      log_lik.push_back(column_for(state.components.back()));
      ++stats.spawns;
    }
    const std::size_t current = state.assignments[i];
    if (target != current) {
      state.components[current].removed.push_back(i);
      state.components[target].added.push_back(i);
      state.assignments[i] = target;
      ++stats.reassignments;
    }
  }
  for (const auto& comp : state.components) {
    stats.added_total += comp.added.size();
    stats.removed_total += comp.removed.size();
  }

  stats.removals = remove_empty(state);
  if (options.update_parameters) {
    for (std::size_t c = 0; c < state.components.size(); ++c) forget_learn_update(state, c, x);
  } else {
    for (auto& comp : state.components) {
      comp.added.clear();
      comp.removed.clear();
    }
  }
  if (options.refine && state.config.theta_epochs > 0) {
    for (std::size_t c = 0; c < state.components.size(); ++c) refine_component(state, c, x, stats.sweep);
  }

  const SweepStats score = score_assignments(state, x, sweep_rng.fork(kTagScore));
  stats.elbo = score.elbo;
  stats.recon = score.recon;
  stats.kl = score.kl;
  stats.components_after = state.components.size();
  ++state.progress.sweeps_done;
  state.check_invariants();
  return stats;
}

vae::VaeModel pretrain_base(const vae::VaeConfig& vae_config, const MixtureConfig& config, const Tensor& x,
                            const RngStream& rng, PretrainReport* report) {
  vae_config.validate();
  config.validate();
  if (x.rows() == 0) throw InvalidArgument("pretrain_base: empty dataset");
  RngStream init_rng = rng.fork(stream_tag("init"));
  vae::VaeModel model(vae_config, init_rng);
  RngStream noise = rng.fork(stream_tag("noise"));
  const RngStream order = rng.fork(stream_tag("batches"));

  PretrainReport local;
  PretrainReport& rep = report ? *report : local;
  rep = PretrainReport{};
  double prev_epoch = 0.0;
  std::size_t stable = 0;
  for (std::size_t epoch = 0; rep.steps < config.max_iterations; ++epoch) {
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (const auto& batch : io::batch_iter(x.rows(), config.batch_size, order, epoch)) {
      if (rep.steps >= config.max_iterations) break;
      const auto terms =
          model.train_step(x.gather_rows(batch), noise, +1, {static_cast<std::int64_t>(rep.steps), -1});
      rep.step_loss.push_back(terms.loss);
      rep.step_recon.push_back(terms.recon);
      rep.step_kl.push_back(terms.kl);
      epoch_sum += terms.loss;
      ++epoch_steps;
      ++rep.steps;
    }
    const double epoch_mean = epoch_sum / static_cast<double>(epoch_steps);
    if (epoch > 0) {
      const double rel = std::abs(epoch_mean - prev_epoch) / std::max(std::abs(prev_epoch), 1e-12);
      stable = rel < config.convergence_tol ? stable + 1 : 0;
      if (stable >= config.convergence_patience) {
        rep.converged = true;
        break;
      }
    }
    prev_epoch = epoch_mean;
  }
  return model;
}

MixtureState initialize(const MixtureConfig& config, const vae::VaeModel& base, std::size_t n, std::size_t c_init,
                        const RngStream& rng) {
  config.validate();
  if (n == 0) throw InvalidArgument("initialize: empty dataset");
  if (c_init < 1 || c_init > config.c_max)
    throw InvalidArgument("initialize: c_init must lie in [1, c_max], got " + std::to_string(c_init));
  MixtureState state;
  state.config = config;
  state.base = base;
  state.rng = rng;
  for (std::size_t c = 0; c < c_init; ++c) spawn_component(state);
  state.assignments.assign(n, 0);
  return state;
}

void seed_assignments_with_labels(MixtureState& state, const Tensor& x, std::span<const std::size_t> indices,
                                  std::span<const std::size_t> labels) {
  if (indices.size() != labels.size())
    throw DimensionError("seed_assignments_with_labels: " + std::to_string(indices.size()) + " indices for " +
                         std::to_string(labels.size()) + " labels");
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (labels[j] >= state.components.size())
      throw InvalidArgument("label " + std::to_string(labels[j]) + " has no component (C = " +
                            std::to_string(state.components.size()) + ")");
    if (indices[j] >= state.assignments.size())
      throw InvalidArgument("seed index " + std::to_string(indices[j]) + " out of range");
  }
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t i = indices[j], target = labels[j], current = state.assignments[i];
    if (target == current) continue;
    state.components[current].removed.push_back(i);
    state.components[target].added.push_back(i);
    state.assignments[i] = target;
  }
  for (std::size_t c = 0; c < state.components.size(); ++c) forget_learn_update(state, c, x);
}

void run_sweeps(MixtureState& state, const Tensor& x, const SweepCallback& on_sweep) {
  FitProgress& p = state.progress;
  while (!p.converged && p.sweeps_done < state.config.max_sweeps) {
    const bool has_previous = p.sweeps_done > 0;
    const SweepStats stats = gibbs_sweep(state, x);
    if (has_previous) {
      const double rel = std::abs(stats.elbo - p.last_elbo) / std::max(std::abs(p.last_elbo), 1e-12);
      p.stable_sweeps = rel < state.config.convergence_tol ? p.stable_sweeps + 1 : 0;
      p.converged = p.stable_sweeps >= state.config.convergence_patience;
    }
    p.last_elbo = stats.elbo;
    if (on_sweep) on_sweep(state, stats);
  }
}

MixtureState fit(const vae::VaeConfig& vae_config, const MixtureConfig& config, const Tensor& x, const RngStream& rng,
                 const SeedLabels* seed, const SweepCallback& on_sweep, PretrainReport* pretrain_report) {
  const vae::VaeModel base = pretrain_base(vae_config, config, x, rng.fork(stream_tag("pretrain")), pretrain_report);
  MixtureState state = prepare(config, base, x, rng.fork(stream_tag("mixture")), seed);
  run_sweeps(state, x, on_sweep);
  return state;
}

MixtureState prepare(const MixtureConfig& config, const vae::VaeModel& base, const Tensor& x, const RngStream& rng,
                     const SeedLabels* seed) {
  const bool seeding = seed && !seed->indices.empty();
  MixtureState state = initialize(config, base, x.rows(), seeding ? seed->n_classes : 1, rng);
  if (seeding) {
    seed_assignments_with_labels(state, x, seed->indices, seed->labels);
    // Fine-tune each component on its seeded instances, then place the rest
    // by noise-free likelihood.
    for (std::size_t c = 0; c < state.components.size(); ++c) {
      std::vector<std::size_t> rows;
      for (std::size_t j = 0; j < seed->indices.size(); ++j)
        if (seed->labels[j] == c) rows.push_back(seed->indices[j]);
      if (rows.empty()) continue;
      const Tensor xs = x.gather_rows(rows);
      auto& comp = state.components[c];
      for (std::size_t s = 0; s < config.label_finetune_steps; ++s)
        comp.model.train_step(xs, comp.rng, +1, {static_cast<std::int64_t>(s), static_cast<std::int64_t>(c)});
    }
    std::vector<bool> seeded(x.rows(), false);
    for (std::size_t i : seed->indices) seeded[i] = true;
    std::vector<Tensor> ll;
    for (const auto& comp : state.components) ll.push_back(noise_free_log_likelihood(comp, x));
    std::vector<double> row(state.components.size());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (seeded[i]) continue;
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = ll[c][i];
      state.assignments[i] = argmax_lowest(row);
    }
    remove_empty(state);
  }
  return state;
}

Tensor expected_reconstruction(const MixtureState& state, const Tensor& x, const RngStream& rng,
                               std::size_t n_samples) {
  require_components(state.components, "expected_reconstruction");
  if (n_samples < 1) throw InvalidArgument("expected_reconstruction: n_samples must be >= 1");
  const Tensor resp = responsibility_matrix(state.components, x, rng.fork(kTagResponsibility), state.config.mc_samples);
  const RngStream rec_rng = rng.fork(kTagReconstruction);
  Tensor out({x.rows(), x.cols()});
  for (std::size_t c = 0; c < state.components.size(); ++c) {
    RngStream noise = rec_rng;
    const Tensor rec = state.components[c].model.expected_reconstruction(x, noise, n_samples);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double w = resp(i, c);
      auto dst = out.row(i);
      auto src = rec.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

std::vector<LatentRow> export_latent_stats(const MixtureState& state, const Tensor& x, const RngStream& rng) {
  require_components(state.components, "export_latent_stats");
  const Tensor resp = responsibility_matrix(state.components, x, rng.fork(kTagResponsibility), state.config.mc_samples);
  const std::size_t n = x.rows(), c_count = state.components.size();
  std::vector<vae::LatentGaussian> latents;
  for (const auto& comp : state.components) latents.push_back(comp.model.encode(x));
  std::vector<LatentRow> rows;
  rows.reserve(n * c_count);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < c_count; ++c) {
      LatentRow r;
      r.instance = i;
      r.component = c;
      auto mu = latents[c].mu.row(i);
      auto sigma = latents[c].sigma.row(i);
      r.mu.assign(mu.begin(), mu.end());
      r.sigma.assign(sigma.begin(), sigma.end());
      r.responsibility = resp(i, c);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

}  // namespace imvae::mixture
