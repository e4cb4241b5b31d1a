// SPDX-License-Identifier: Apache-2.0
#include "imvae/moe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "imvae/core/error.hpp"

namespace imvae::moe {

namespace {

const std::uint64_t kTagInit = stream_tag("init");
const std::uint64_t kTagBatches = stream_tag("batches");
const std::uint64_t kTagResponsibility = stream_tag("responsibility");

bool relative_change_below(double current, double previous, double tol) {
  return std::abs(current - previous) / std::max(std::abs(previous), 1e-12) < tol;
}

Tensor column(const Tensor& m, std::size_t c) {
  Tensor out({m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, c);
  return out;
}

}  // namespace

void MoeConfig::validate() const {
  if (input_dim == 0) throw InvalidArgument("moe: input_dim must be positive");
  if (hidden_dim == 0) throw InvalidArgument("moe: hidden_dim must be positive");
  if (n_classes < 2) throw InvalidArgument("moe: need at least two classes");
  if (batch_size == 0) throw InvalidArgument("moe: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw InvalidArgument("moe: learning_rate must be positive");
  if (!(convergence_tol >= 0.0)) throw InvalidArgument("moe: convergence_tol must be >= 0");
  if (convergence_patience == 0) throw InvalidArgument("moe: convergence_patience must be positive");
}

MoeModel::MoeModel(const MoeConfig& config, std::size_t n_experts, RngStream& init_rng)
    : config_(config), trunk_(config.input_dim, config.hidden_dim, config.activation, "moe.trunk") {
  config_.validate();
  if (n_experts == 0) throw InvalidArgument("moe: need at least one expert");
  trunk_.affine.init_uniform(init_rng);
  experts_.reserve(n_experts);
  for (std::size_t c = 0; c < n_experts; ++c) {
    experts_.emplace_back(config.hidden_dim, config.n_classes, "moe.expert" + std::to_string(c));
    if (c > 0 && config.tied_expert_init) {
      experts_[c].weight.value = experts_[0].weight.value;
      experts_[c].bias.value = experts_[0].bias.value;
    } else {
      experts_[c].init_uniform(init_rng);
    }
  }
}

void MoeModel::init_trunk_from(const nn::HiddenBlock& block) {
  if (block.affine.in_dim() != config_.input_dim || block.affine.out_dim() != config_.hidden_dim)
    throw DimensionError("moe: trunk is [" + std::to_string(config_.input_dim) + "," +
                         std::to_string(config_.hidden_dim) + "], source block is " +
                         shape_to_string(block.affine.weight.value.shape()));
  trunk_.affine.weight.value = block.affine.weight.value;
  trunk_.affine.bias.value = block.affine.bias.value;
  trunk_.norm.gamma.value = block.norm.gamma.value;
  trunk_.norm.beta.value = block.norm.beta.value;
  trunk_.norm.running_mean = block.norm.running_mean;
  trunk_.norm.running_var = block.norm.running_var;
  trunk_.activation = block.activation;
  config_.activation = block.activation;
}

Tensor MoeModel::features(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != config_.input_dim)
    throw DimensionError("moe: expected input [batch," + std::to_string(config_.input_dim) + "], got " +
                         shape_to_string(x.shape()));
  return trunk_.forward(x);
}

Tensor MoeModel::expert_probs(const Tensor& x, std::size_t c) const {
  return ops::softmax_rows(experts_.at(c).forward(features(x)));
}

Tensor MoeModel::predict_with_weights(const Tensor& x, const Tensor& weights) const {
  if (weights.rank() != 2 || weights.rows() != x.rows() || weights.cols() != experts_.size())
    throw InvalidArgument("moe: gating weights " + shape_to_string(weights.shape()) + " for " +
                          std::to_string(x.rows()) + " rows and " + std::to_string(experts_.size()) + " experts");
  const Tensor h = features(x);
  Tensor out({x.rows(), config_.n_classes});
  for (std::size_t c = 0; c < experts_.size(); ++c) {
    const Tensor p = ops::softmax_rows(experts_[c].forward(h));
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double w = weights(i, c);
      for (std::size_t k = 0; k < config_.n_classes; ++k) out(i, k) += w * p(i, k);
    }
  }
  return out;
}

void MoeModel::check_batch(const Tensor& x, std::span<const std::size_t> labels, const Tensor& weights) const {
  if (x.rank() != 2 || x.cols() != config_.input_dim)
    throw DimensionError("moe: expected input [batch," + std::to_string(config_.input_dim) + "], got " +
                         shape_to_string(x.shape()));
  if (labels.size() != x.rows())
    throw DimensionError("moe: " + std::to_string(labels.size()) + " labels for " + std::to_string(x.rows()) + " rows");
  if (weights.rank() != 2 || weights.rows() != x.rows() || weights.cols() != experts_.size())
    throw InvalidArgument("moe: gating weights " + shape_to_string(weights.shape()) + " for " +
                          std::to_string(x.rows()) + " rows and " + std::to_string(experts_.size()) + " experts");
  for (double w : weights.data())
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("moe: gating weights must be finite and >= 0");
  for (std::size_t y : labels)
    if (y >= config_.n_classes)
      throw InvalidArgument("moe: label " + std::to_string(y) + " outside [0, " + std::to_string(config_.n_classes) + ")");
}

Var MoeModel::build_loss(Tape& tape, const Tensor& x, std::span<const std::size_t> labels, const Tensor& weights,
                         nn::Mode mode, ops::BatchStats* stats) {
  check_batch(x, labels, weights);
  const Var h = trunk_.forward(tape, tape.constant(x), mode, stats);
  Var total = ops::weighted_cross_entropy(experts_[0].forward(tape, h), labels, column(weights, 0));
  for (std::size_t c = 1; c < experts_.size(); ++c)
    total = ops::add(total, ops::weighted_cross_entropy(experts_[c].forward(tape, h), labels, column(weights, c)));
  return ops::mean(total);
}

double MoeModel::train_step(const Tensor& x, std::span<const std::size_t> labels, const Tensor& weights,
                            std::int64_t batch_index) {
  Tape tape;
  ops::BatchStats stats;
  const Var loss = build_loss(tape, x, labels, weights, nn::Mode::train, &stats);
  const double value = loss.value().item();
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << "moe: non-finite loss " << value << " (batch " << batch_index << ")";
    throw NumericalError(os.str());
  }
  auto params = parameters();
  zero_grad(params);
  tape.backward(loss);
  trunk_.norm.update_running(stats);
  if (config_.optimizer == OptimizerKind::adam) {
    adam_step(params, adam_, config_.learning_rate);
  } else {
    sgd_step(params, config_.learning_rate);
  }
  for (const Parameter* p : params)
    if (!p->value.all_finite()) {
      std::ostringstream os;
      os << "moe: non-finite parameter " << p->name << " after update (batch " << batch_index << ")";
      throw NumericalError(os.str());
    }
  return value;
}

std::vector<Parameter*> MoeModel::parameters() {
  std::vector<Parameter*> out;
  trunk_.collect(out);
  for (auto& e : experts_) e.collect(out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> MoeModel::state_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto params = parameters();
  for (Parameter* p : params) out.emplace_back(p->name, &p->value);
  out.emplace_back("moe.trunk.bn.running_mean", &trunk_.norm.running_mean);
  out.emplace_back("moe.trunk.bn.running_var", &trunk_.norm.running_var);
  if (adam_.m.empty()) {
    for (const Parameter* p : params) {
      adam_.m.emplace_back(p->value.shape());
      adam_.v.emplace_back(p->value.shape());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.emplace_back("adam.m." + params[i]->name, &adam_.m[i]);
    out.emplace_back("adam.v." + params[i]->name, &adam_.v[i]);
  }
  return out;
}

MoeModel make_model(const MoeConfig& config, std::size_t n_experts, const RngStream& rng) {
  RngStream init = rng.fork(kTagInit);
  return MoeModel(config, n_experts, init);
}

TrainReport train(MoeModel& model, const Tensor& x, std::span<const std::size_t> labels, const Tensor& weights,
                  const RngStream& rng) {
  if (x.rows() == 0) throw InvalidArgument("moe: empty labeled set");
  const MoeConfig& cfg = model.config();
  const RngStream order = rng.fork(kTagBatches);
  TrainReport rep;
  std::size_t stable = 0;
  for (std::size_t epoch = 0; rep.steps < cfg.max_iterations; ++epoch) {
    double sum = 0.0;
    std::size_t batches = 0;
    for (const auto& batch : io::batch_iter(x.rows(), cfg.batch_size, order, epoch)) {
      if (rep.steps >= cfg.max_iterations) break;
      std::vector<std::size_t> y(batch.size());
      for (std::size_t j = 0; j < batch.size(); ++j) y[j] = labels[batch[j]];
      sum += model.train_step(x.gather_rows(batch), y, weights.gather_rows(batch), static_cast<std::int64_t>(rep.steps));
      ++batches;
      ++rep.steps;
    }
    const double epoch_loss = sum / static_cast<double>(batches);
    if (!rep.epoch_loss.empty() && cfg.convergence_tol > 0.0) {
      stable = relative_change_below(epoch_loss, rep.epoch_loss.back(), cfg.convergence_tol) ? stable + 1 : 0;
    }
    rep.epoch_loss.push_back(epoch_loss);
    if (stable >= cfg.convergence_patience) {
      rep.converged = true;
      break;
    }
  }
  return rep;
}

Tensor gating_weights(const mixture::MixtureState& mixture, const Tensor& x, const RngStream& rng) {
  return mixture::responsibility_matrix(mixture.components, x, rng.fork(kTagResponsibility),
                                        mixture.config.mc_samples);
}

TrainReport train(MoeModel& model, const mixture::MixtureState& mixture, const io::Dataset& labeled,
                  const RngStream& rng) {
  if (!labeled.has_labels()) throw InvalidArgument("moe: training set has no labels");
  if (model.n_experts() != mixture.size())
    throw InvalidArgument("moe: " + std::to_string(model.n_experts()) + " experts for " +
                          std::to_string(mixture.size()) + " mixture components");
  const Tensor w = gating_weights(mixture, labeled.instances, rng);
  return train(model, labeled.instances, labeled.labels, w, rng);
}

Tensor predict(const MoeModel& model, const mixture::MixtureState& mixture, const Tensor& x, const RngStream& rng) {
  if (model.n_experts() != mixture.size())
    throw InvalidArgument("moe: " + std::to_string(model.n_experts()) + " experts for " +
                          std::to_string(mixture.size()) + " mixture components");
  return model.predict_with_weights(x, gating_weights(mixture, x, rng));
}

Evaluation evaluate_probs(const Tensor& probs, std::span<const std::size_t> labels, std::size_t n_classes) {
  if (probs.rank() != 2 || probs.cols() != n_classes || probs.rows() != labels.size())
    throw DimensionError("evaluate: probabilities " + shape_to_string(probs.shape()) + " for " +
                         std::to_string(labels.size()) + " labels and " + std::to_string(n_classes) + " classes");
  if (labels.empty()) throw InvalidArgument("evaluate: empty test set");
  Evaluation ev;
  std::vector<std::size_t> correct(n_classes, 0), total(n_classes, 0);
  std::size_t errors = 0;
  double log_loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probs.row(i);
    const std::size_t pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const std::size_t y = labels[i];
    if (y >= n_classes) throw InvalidArgument("evaluate: label " + std::to_string(y) + " out of range");
    ++total[y];
    if (pred == y) {
      ++correct[y];
    } else {
      ++errors;
    }
    log_loss -= std::log(std::max(row[y], 1e-15));
  }
  ev.error_rate = static_cast<double>(errors) / static_cast<double>(labels.size());
  ev.log_loss = log_loss / static_cast<double>(labels.size());
  ev.per_class_accuracy.resize(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k)
    ev.per_class_accuracy[k] = total[k] ? static_cast<double>(correct[k]) / static_cast<double>(total[k])
                                        : std::numeric_limits<double>::quiet_NaN();
  return ev;
}

Evaluation evaluate(const MoeModel& model, const mixture::MixtureState& mixture, const io::Dataset& test,
                    const RngStream& rng) {
  if (!test.has_labels()) throw InvalidArgument("evaluate: test set has no labels");
  return evaluate_probs(predict(model, mixture, test.instances, rng), test.labels, model.config().n_classes);
}

MoeModel baseline_train(const MoeConfig& config, const Tensor& x, std::span<const std::size_t> labels,
                        const RngStream& rng, const nn::HiddenBlock* trunk_init, TrainReport* report) {
  MoeModel model = make_model(config, 1, rng);
  if (trunk_init) model.init_trunk_from(*trunk_init);
  const TrainReport rep = train(model, x, labels, Tensor({x.rows(), 1}, 1.0), rng);
  if (report) *report = rep;
  return model;
}

Tensor latent_features(const mixture::MixtureState& mixture, const Tensor& x, const RngStream& rng) {
  if (mixture.components.empty()) throw InvalidArgument("latent_features: mixture has no components");
  const Tensor resp = gating_weights(mixture, x, rng);
  const std::size_t k = mixture.components[0].model.config().latent_dim;
  const std::size_t c_count = mixture.size();
  Tensor out({x.rows(), c_count * 2 * k});
  for (std::size_t c = 0; c < c_count; ++c) {
    const vae::LatentGaussian q = mixture.components[c].model.encode(x);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double w = resp(i, c);
      for (std::size_t j = 0; j < k; ++j) {
        out(i, c * 2 * k + j) = w * q.mu(i, j);
        out(i, c * 2 * k + k + j) = w * q.sigma(i, j);
      }
    }
  }
  return out;
}

double linear_probe(const Tensor& train_features, std::span<const std::size_t> train_labels,
                    const Tensor& test_features, std::span<const std::size_t> test_labels, std::size_t n_classes,
                    const RngStream& rng, const ProbeConfig& config) {
  if (train_features.rows() != train_labels.size() || test_features.rows() != test_labels.size())
    throw DimensionError("linear_probe: feature rows and label counts differ");
  if (train_features.cols() != test_features.cols())
    throw DimensionError("linear_probe: train features " + shape_to_string(train_features.shape()) +
                         ", test features " + shape_to_string(test_features.shape()));
  if (train_labels.empty() || test_labels.empty()) throw InvalidArgument("linear_probe: empty split");
  const std::size_t f = train_features.cols(), m = train_features.rows();

  std::vector<double> mean(f, 0.0), inv_std(f, 0.0);
  for (std::size_t j = 0; j < f; ++j) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += train_features(i, j);
    mean[j] = s / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) ss += (train_features(i, j) - mean[j]) * (train_features(i, j) - mean[j]);
    const double sd = std::sqrt(ss / static_cast<double>(m));
    inv_std[j] = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
  if (!config.standardize) {
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(inv_std.begin(), inv_std.end(), 1.0);
  }
  auto standardize = [&](const Tensor& t) {
    Tensor out = t;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < f; ++j) out(i, j) = (out(i, j) - mean[j]) * inv_std[j];
    return out;
  };
  const Tensor xtr = standardize(train_features), xte = standardize(test_features);

  RngStream init = rng.fork(kTagInit);
  nn::Affine head(f, n_classes, "probe");
  head.init_uniform(init);
  std::vector<Parameter*> params;
  head.collect(params);
  AdamState adam;
  const Tensor ones({m}, 1.0);
  double previous = 0.0;
  std::size_t stable = 0;
  for (std::size_t step = 0; step < config.max_steps; ++step) {
    Tape tape;
    const Var loss = ops::mean(ops::weighted_cross_entropy(head.forward(tape, tape.constant(xtr)), train_labels, ones));
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw NumericalError("linear_probe: non-finite loss at step " + std::to_string(step));
    zero_grad(params);
    tape.backward(loss);
    adam_step(params, adam, config.learning_rate);
    if (step > 0) {
      stable = relative_change_below(value, previous, config.convergence_tol) ? stable + 1 : 0;
      if (stable >= config.convergence_patience) break;
    }
    previous = value;
  }
  const Tensor probs = ops::softmax_rows(head.forward(xte));
  return 1.0 - evaluate_probs(probs, test_labels, n_classes).error_rate;
}

double linear_probe(const mixture::MixtureState& mixture, const io::Dataset& labeled, const io::Dataset& test,
                    const RngStream& rng, const ProbeConfig& config) {
  if (!labeled.has_labels() || !test.has_labels()) throw InvalidArgument("linear_probe: both splits need labels");
  const std::size_t k = std::max(labeled.n_classes, test.n_classes);
  return linear_probe(latent_features(mixture, labeled.instances, rng), labeled.labels,
                      latent_features(mixture, test.instances, rng), test.labels, k, rng, config);
}

}  // namespace imvae::moe
