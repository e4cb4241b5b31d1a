// SPDX-License-Identifier: Apache-2.0
#include "imvae/vae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "imvae/core/error.hpp"
#include "imvae/core/kernels.hpp"
#include "imvae/core/ops.hpp"

namespace imvae::vae {

std::string to_string(DecoderKind kind) { return kind == DecoderKind::bernoulli ? "bernoulli" : "gaussian"; }
std::string to_string(Architecture arch) { return arch == Architecture::asymmetric ? "asymmetric" : "symmetric"; }

DecoderKind parse_decoder_kind(const std::string& s) {
  if (s == "bernoulli") return DecoderKind::bernoulli;
  if (s == "gaussian") return DecoderKind::gaussian;
  throw InvalidArgument("unknown decoder kind '" + s + "' (expected bernoulli or gaussian)");
}

Architecture parse_architecture(const std::string& s) {
  if (s == "asymmetric") return Architecture::asymmetric;
  if (s == "symmetric") return Architecture::symmetric;
  throw InvalidArgument("unknown architecture '" + s + "' (expected asymmetric or symmetric)");
}

std::size_t VaeConfig::default_latent_dim(std::size_t hidden_dim) {
  const auto k = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(hidden_dim)));
  return k < 1 ? 1 : k;
}

void VaeConfig::validate() const {
  if (input_dim < 1) throw InvalidArgument("vae: input_dim must be >= 1");
  if (hidden_dim < 1) throw InvalidArgument("vae: hidden_dim must be >= 1");
  if (latent_dim < 1) throw InvalidArgument("vae: latent_dim must be >= 1");
  if (mc_samples < 1) throw InvalidArgument("vae: mc_samples must be >= 1");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) throw InvalidArgument("vae: learning_rate must be finite and >= 0");
}

namespace {

ops::Activation hidden_activation(Architecture arch) {
  return arch == Architecture::asymmetric ? ops::Activation::tanh : ops::Activation::softplus;
}

Tensor exp_half(const Tensor& logvar) {
  Tensor out = logvar;
  for (auto& v : out.data()) v = std::exp(0.5 * v);
  return out;
}

}  // namespace

VaeModel::VaeModel(const VaeConfig& config, RngStream& init_rng) : config_(config) {
  config_.validate();
  const auto act = hidden_activation(config_.architecture);
  const std::size_t d = config_.input_dim, h = config_.hidden_dim, k = config_.latent_dim;
  enc_hidden_ = nn::HiddenBlock(d, h, act, "enc.hidden");
  enc_mu_ = nn::Affine(h, k, "enc.mu");
  enc_logvar_ = nn::Affine(h, k, "enc.logvar");
  dec_hidden_ = nn::HiddenBlock(k, h, act, "dec.hidden");
  dec_out_ = nn::Affine(h, d, "dec.out");
  if (config_.decoder == DecoderKind::gaussian) dec_logvar_ = nn::Affine(h, d, "dec.logvar");

  enc_hidden_.affine.init_uniform(init_rng);
  enc_mu_.init_uniform(init_rng);
  enc_logvar_.init_uniform(init_rng);
  dec_hidden_.affine.init_uniform(init_rng);
  dec_out_.init_uniform(init_rng);
  if (config_.decoder == DecoderKind::gaussian) dec_logvar_.init_uniform(init_rng);
}

void VaeModel::check_input(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != config_.input_dim) {
    throw DimensionError("vae: expected input [batch," + std::to_string(config_.input_dim) + "], got " +
                         shape_to_string(x.shape()));
  }
}

LatentGaussian VaeModel::encode(const Tensor& x) const {
  check_input(x);
  const Tensor h = enc_hidden_.forward(x);
  return LatentGaussian{enc_mu_.forward(h), exp_half(enc_logvar_.forward(h))};
}

DecoderOutput VaeModel::decode(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != config_.latent_dim) {
    throw DimensionError("vae: expected latent [batch," + std::to_string(config_.latent_dim) + "], got " +
                         shape_to_string(z.shape()));
  }
  const Tensor h = dec_hidden_.forward(z);
  DecoderOutput out;
  out.kind = config_.decoder;
  if (config_.decoder == DecoderKind::bernoulli) {
    out.mean = ops::activation_forward(dec_out_.forward(h), ops::Activation::sigmoid);
  } else {
    out.mean = dec_out_.forward(h);
    out.sigma = exp_half(dec_logvar_.forward(h));
  }
  return out;
}

VaeModel::Graph VaeModel::build_graph(Tape& tape, const Tensor& x, const Tensor& eps, nn::Mode mode,
                                      std::vector<ops::BatchStats>* stats) {
  check_input(x);
  const std::size_t batch = x.dim(0);
  if (eps.rank() != 2 || eps.dim(1) != config_.latent_dim || eps.dim(0) % batch != 0) {
    throw DimensionError("vae: noise " + shape_to_string(eps.shape()) + " does not stack over batch " +
                         std::to_string(batch));
  }
  const std::size_t samples = eps.dim(0) / batch;
  ops::BatchStats enc_stats, dec_stats;

  Var xv = tape.constant(x);
  Var h = enc_hidden_.forward(tape, xv, mode, &enc_stats);
  Var mu = enc_mu_.forward(tape, h);
  Var logvar = enc_logvar_.forward(tape, h);

  Var sigma = ops::exp(ops::scale(ops::repeat_rows(logvar, samples), 0.5));
  Var z = ops::add(ops::repeat_rows(mu, samples), ops::mul(sigma, tape.constant(eps)));

  Var hd = dec_hidden_.forward(tape, z, mode, &dec_stats);
  Var rec_rows;
  if (config_.decoder == DecoderKind::bernoulli) {
    rec_rows = ops::bernoulli_log_likelihood(x, ops::activation(dec_out_.forward(tape, hd), ops::Activation::sigmoid));
  } else {
    rec_rows = ops::gaussian_log_likelihood(x, dec_out_.forward(tape, hd), dec_logvar_.forward(tape, hd));
  }
  Var recon = ops::mean_over_blocks(rec_rows, samples);
  Var kl = ops::scale(ops::row_sum(ops::add_scalar(ops::sub(ops::add(ops::square(mu), ops::exp(logvar)), logvar), -1.0)), 0.5);
  Var kl_mean = ops::mean(kl);
  Var recon_mean = ops::mean(recon);
  Var loss = ops::sub(kl_mean, recon_mean);

  if (stats) {
    stats->clear();
    stats->push_back(std::move(enc_stats));
    stats->push_back(std::move(dec_stats));
  }
  return Graph{loss, recon, kl, recon_mean, kl_mean, mu, logvar, z};
}

namespace {

LossTerms terms_of(const VaeModel::Graph& g) {
  return LossTerms{g.loss.value().item(), g.recon_mean.value().item(), g.kl_mean.value().item()};
}

}  // namespace

Tensor VaeModel::draw_noise(RngStream& rng, std::size_t batch, std::size_t samples) const {
  return rng.normal_tensor({samples * batch, config_.latent_dim});
}

LossTerms VaeModel::elbo_loss(const Tensor& x, RngStream& rng, nn::Mode mode) {
  check_input(x);
  return elbo_loss_with_noise(x, draw_noise(rng, x.dim(0), config_.mc_samples), mode);
}

LossTerms VaeModel::elbo_loss_with_noise(const Tensor& x, const Tensor& eps, nn::Mode mode) {
  Tape tape(GradMode::disabled);
  return terms_of(build_graph(tape, x, eps, mode));
}

LossTerms VaeModel::loss_and_gradient(const Tensor& x, const Tensor& eps, nn::Mode mode) {
  Tape tape;
  const Graph g = build_graph(tape, x, eps, mode);
  auto params = parameters();
  zero_grad(params);
  tape.backward(g.loss);
  return terms_of(g);
}

LossTerms VaeModel::train_step(const Tensor& x, RngStream& rng, int sign, StepContext ctx) {
  check_input(x);
  return train_step_with_noise(x, draw_noise(rng, x.dim(0), config_.mc_samples), sign, ctx);
}

LossTerms VaeModel::train_step_with_noise(const Tensor& x, const Tensor& eps, int sign, StepContext ctx) {
  if (sign != 1 && sign != -1) throw InvalidArgument("train_step: sign must be +1 or -1");
  if (x.rows() == 0) throw InvalidArgument("train_step: empty batch");
  if (config_.decoder == DecoderKind::bernoulli) {
    for (double v : x.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("train_step: bernoulli decoder needs inputs in [0,1]");
    }
  }
  Tape tape;
  std::vector<ops::BatchStats> stats;
  const Graph g = build_graph(tape, x, eps, nn::Mode::train, &stats);
  const LossTerms terms = terms_of(g);
  if (!std::isfinite(terms.loss)) {
    std::ostringstream os;
    os << "non-finite loss " << terms.loss << " (batch " << ctx.batch_index << ", component " << ctx.component_id << ")";
    throw NumericalError(os.str());
  }
  auto params = parameters();
  zero_grad(params);
  tape.backward(g.loss);
  enc_hidden_.norm.update_running(stats[0]);
  dec_hidden_.norm.update_running(stats[1]);
  apply_update(sign * config_.learning_rate);
  if (!parameters_finite()) {
    std::ostringstream os;
    os << "non-finite parameters after update (batch " << ctx.batch_index << ", component " << ctx.component_id << ")";
    throw NumericalError(os.str());
  }
  return terms;
}

void VaeModel::apply_update(double learning_rate) {
  auto params = parameters();
  if (config_.optimizer == OptimizerKind::adam) {
    adam_step(params, adam_, learning_rate);
  } else {
    sgd_step(params, learning_rate);
  }
}

Tensor VaeModel::expected_reconstruction(const Tensor& x, RngStream& rng, std::size_t n_samples) const {
  check_input(x);
  if (n_samples < 1) throw InvalidArgument("expected_reconstruction: n_samples must be >= 1");
  return expected_reconstruction_with_noise(x, draw_noise(rng, x.dim(0), n_samples), n_samples);
}

Tensor VaeModel::expected_reconstruction_with_noise(const Tensor& x, const Tensor& eps, std::size_t n_samples) const {
  check_input(x);
  const std::size_t batch = x.dim(0);
  if (n_samples < 1 || eps.rank() != 2 || eps.dim(0) != n_samples * batch || eps.dim(1) != config_.latent_dim) {
    throw DimensionError("expected_reconstruction: noise " + shape_to_string(eps.shape()) + " for " +
                         std::to_string(n_samples) + " samples of batch " + std::to_string(batch));
  }
  const LatentGaussian q = encode(x);
  std::vector<Tensor> blocks(n_samples, Tensor());
  for (std::size_t s = 0; s < n_samples; ++s) blocks[s] = q.mu;
  const Tensor mu_rep = vstack(blocks);
  for (std::size_t s = 0; s < n_samples; ++s) blocks[s] = q.sigma;
  const Tensor sigma_rep = vstack(blocks);
  const DecoderOutput dec = decode(reparameterize(LatentGaussian{mu_rep, sigma_rep}, eps));

  const std::size_t block = batch * config_.input_dim;
  Tensor out({batch, config_.input_dim});
  const auto& k = kernels::active();
  for (std::size_t s = 0; s < n_samples; ++s) k.axpy(block, 1.0, dec.mean.ptr() + s * block, out.ptr());
  const double inv = 1.0 / static_cast<double>(n_samples);
  for (auto& v : out.data()) v *= inv;
  return out;
}

Tensor VaeModel::expected_log_likelihood(const Tensor& x, RngStream& rng, std::size_t samples) const {
  check_input(x);
  if (samples < 1) throw InvalidArgument("expected_log_likelihood: samples must be >= 1");
  const std::size_t batch = x.dim(0);
  const LatentGaussian q = encode(x);
  const Tensor eps = draw_noise(rng, batch, samples);
  std::vector<Tensor> mus(samples, q.mu), sigmas(samples, q.sigma);
  const DecoderOutput dec = decode(reparameterize(LatentGaussian{vstack(mus), vstack(sigmas)}, eps));
  const Tensor rows = recon_log_likelihood(vstack(std::vector<Tensor>(samples, x)), dec);
  Tensor out({batch});
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t i = 0; i < batch; ++i) out[i] += rows[s * batch + i];
  for (auto& v : out.data()) v /= static_cast<double>(samples);
  return out;
}

Tensor VaeModel::log_likelihood_at_mean(const Tensor& x) const {
  check_input(x);
  return recon_log_likelihood(x, decode(encode(x).mu));
}

Tensor VaeModel::row_loss(const Tensor& x, RngStream& rng) const {
  const Tensor rec = expected_log_likelihood(x, rng, config_.mc_samples);
  Tensor kl = kl_diag_gaussian(encode(x));
  for (std::size_t i = 0; i < kl.size(); ++i) kl[i] -= rec[i];
  return kl;
}

std::vector<Parameter*> VaeModel::parameters() {
  std::vector<Parameter*> out;
  enc_hidden_.collect(out);
  enc_mu_.collect(out);
  enc_logvar_.collect(out);
  dec_hidden_.collect(out);
  dec_out_.collect(out);
  if (config_.decoder == DecoderKind::gaussian) dec_logvar_.collect(out);
  return out;
}

std::vector<const Parameter*> VaeModel::parameters() const {
  auto mut = const_cast<VaeModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<std::pair<std::string, Tensor*>> VaeModel::state_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto params = parameters();
  for (Parameter* p : params) out.emplace_back(p->name, &p->value);
  out.emplace_back("enc.hidden.bn.running_mean", &enc_hidden_.norm.running_mean);
  out.emplace_back("enc.hidden.bn.running_var", &enc_hidden_.norm.running_var);
  out.emplace_back("dec.hidden.bn.running_mean", &dec_hidden_.norm.running_mean);
  out.emplace_back("dec.hidden.bn.running_var", &dec_hidden_.norm.running_var);
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

bool VaeModel::parameters_finite() const {
  for (const Parameter* p : parameters()) {
    if (!p->value.all_finite()) return false;
  }
  return true;
}

Tensor kl_diag_gaussian(const LatentGaussian& latent) {
  require_same_shape(latent.mu, latent.sigma, "kl_diag_gaussian");
  const std::size_t m = latent.mu.rows(), k = latent.mu.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double mu = latent.mu(i, j);
      const double var = latent.sigma(i, j) * latent.sigma(i, j);
      s += mu * mu + var - 1.0 - std::log(var);
    }
    out[i] = 0.5 * s;
  }
  return out;
}

Tensor recon_log_likelihood(const Tensor& x, const DecoderOutput& decoded) {
  require_same_shape(x, decoded.mean, "recon_log_likelihood");
  const std::size_t m = x.rows(), d = x.cols();
  Tensor out({m});
  if (decoded.kind == DecoderKind::bernoulli) {
    constexpr double lo = ops::kBernoulliClamp, hi = 1.0 - ops::kBernoulliClamp;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double xv = x(i, j);
        if (!(xv >= 0.0 && xv <= 1.0)) {
          throw InvalidArgument("recon_log_likelihood: bernoulli decoder needs inputs in [0,1], got " + std::to_string(xv));
        }
        const double p = std::clamp(decoded.mean(i, j), lo, hi);
        s += xv * std::log(p) + (1.0 - xv) * std::log1p(-p);
      }
      out[i] = s;
    }
  } else {
    require_same_shape(x, decoded.sigma, "recon_log_likelihood");
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double sd = decoded.sigma(i, j);
        const double diff = (x(i, j) - decoded.mean(i, j)) / sd;
        s += -half_log_2pi - std::log(sd) - 0.5 * diff * diff;
      }
      out[i] = s;
    }
  }
  return out;
}

Tensor reparameterize(const LatentGaussian& latent, const Tensor& eps) {
  require_same_shape(latent.mu, latent.sigma, "reparameterize");
  require_same_shape(latent.mu, eps, "reparameterize");
  Tensor z = latent.mu;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += latent.sigma[i] * eps[i];
  return z;
}

}  // namespace imvae::vae
