// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "gradcheck.hpp"
#include "imvae/core/error.hpp"
#include "imvae/vae/vae.hpp"

using namespace imvae;
using namespace imvae::vae;
using imvae::testing::random_tensor;
using imvae::testing::relative_error;

namespace {

VaeConfig small_config(DecoderKind kind = DecoderKind::bernoulli) {
  VaeConfig c;
  c.input_dim = 4;
  c.hidden_dim = 4;
  c.latent_dim = 2;
  c.decoder = kind;
  c.architecture = kind == DecoderKind::bernoulli ? Architecture::asymmetric : Architecture::symmetric;
  return c;
}

void zero_all(VaeModel& m) {
  for (Parameter* p : m.parameters()) {
    if (p->name.find(".gamma") != std::string::npos) continue;
    p->value.fill(0.0);
  }
}

Tensor binary_batch(RngStream& rng, std::size_t n, std::size_t d) {
  Tensor t({n, d});
  for (auto& v : t.data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return t;
}

std::size_t parameter_count(VaeModel& m) {
  std::size_t n = 0;
  for (auto* p : m.parameters()) n += p->value.size();
  return n;
}

}  // namespace

TEST_CASE("config defaults and validation") {
  CHECK(VaeConfig::default_latent_dim(100) == 10);
  CHECK(VaeConfig::default_latent_dim(4) == 1);
  CHECK(VaeConfig::default_latent_dim(25) == 3);
  VaeConfig c = small_config();
  c.latent_dim = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK(VaeConfig{}.mc_samples == 2);
  CHECK(VaeConfig{}.learning_rate == 1e-3);
}

TEST_CASE("encode") {
  RngStream rng(1, 0);
  SUBCASE("zero weights give the prior") {
    VaeModel m(small_config(), rng);
    zero_all(m);
    auto q = m.encode(random_tensor(rng, {3, 4}));
    for (double v : q.mu.data()) CHECK(v == 0.0);
    for (double v : q.sigma.data()) CHECK(v == 1.0);
  }
  SUBCASE("identical rows encode identically") {
    VaeModel m(small_config(), rng);
    Tensor row = random_tensor(rng, {1, 4});
    std::vector<Tensor> rows(3, row);
    auto q = m.encode(vstack(rows));
    for (std::size_t i = 1; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(q.mu(i, j) == q.mu(0, j));
        CHECK(q.sigma(i, j) == q.sigma(0, j));
      }
    }
  }
  SUBCASE("sigma strictly positive on random inputs") {
    VaeModel m(small_config(), rng);
    auto q = m.encode(random_tensor(rng, {1000, 4}, -5.0, 5.0));
    for (double v : q.sigma.data()) CHECK(v > 0.0);
  }
  SUBCASE("dimension mismatch") {
    VaeModel m(small_config(), rng);
    CHECK_THROWS_AS(m.encode(Tensor({2, 5})), DimensionError);
  }
}

TEST_CASE("reparameterize") {
  LatentGaussian q{Tensor::matrix({{1.0, -2.0}}), Tensor::matrix({{0.5, 3.0}})};
  CHECK(reparameterize(q, Tensor({1, 2})) == q.mu);
  LatentGaussian std_normal{Tensor({1, 2}), Tensor({1, 2}, 1.0)};
  const Tensor eps = Tensor::matrix({{0.3, -1.1}});
  CHECK(reparameterize(std_normal, eps) == eps);

  // dz/dmu = I and dz/dsigma = diag(eps), through the tape.
  Parameter mu("mu", q.mu), sigma("sigma", q.sigma);
  Tape tape;
  Var z = ops::add(tape.param(mu), ops::mul(tape.param(sigma), tape.constant(eps)));
  tape.backward(ops::sum(ops::mul(z, tape.constant(Tensor::matrix({{1.0, 0.0}})))));
  CHECK(mu.grad == Tensor::matrix({{1.0, 0.0}}));
  CHECK(sigma.grad == Tensor::matrix({{0.3, 0.0}}));
}

TEST_CASE("decode") {
  RngStream rng(2, 0);
  SUBCASE("zero weights bernoulli -> 0.5") {
    VaeModel m(small_config(), rng);
    zero_all(m);
    auto out = m.decode(random_tensor(rng, {2, 2}));
    for (double v : out.mean.data()) CHECK(v == 0.5);
  }
  SUBCASE("zero weights gaussian -> (0, 1)") {
    VaeModel m(small_config(DecoderKind::gaussian), rng);
    zero_all(m);
    auto out = m.decode(random_tensor(rng, {2, 2}));
    for (double v : out.mean.data()) CHECK(v == 0.0);
    for (double v : out.sigma.data()) CHECK(v == 1.0);
  }
  SUBCASE("bernoulli probabilities strictly inside (0,1)") {
    VaeModel m(small_config(), rng);
    auto out = m.decode(random_tensor(rng, {500, 2}, -3.0, 3.0));
    for (double v : out.mean.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  SUBCASE("dimension mismatch") {
    VaeModel m(small_config(), rng);
    CHECK_THROWS_AS(m.decode(Tensor({2, 3})), DimensionError);
  }
}

TEST_CASE("kl_diag_gaussian") {
  CHECK(kl_diag_gaussian({Tensor({1, 3}), Tensor({1, 3}, 1.0)})[0] == 0.0);
  CHECK(kl_diag_gaussian({Tensor::matrix({{1.0}}), Tensor::matrix({{1.0}})})[0] == doctest::Approx(0.5));
  CHECK(kl_diag_gaussian({Tensor::matrix({{0.0}}), Tensor::matrix({{2.0}})})[0] ==
        doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))).epsilon(1e-14));
  CHECK(kl_diag_gaussian({Tensor::matrix({{0.0}}), Tensor::matrix({{2.0}})})[0] == doctest::Approx(0.806853).epsilon(1e-6));

  RngStream rng(3, 0);
  for (int i = 0; i < 500; ++i) {
    LatentGaussian q{random_tensor(rng, {1, 3}, -3, 3), random_tensor(rng, {1, 3}, 0.01, 5.0)};
    CHECK(kl_diag_gaussian(q)[0] >= -1e-12);
  }
}

TEST_CASE("KL matches a Monte Carlo estimate of E_q[log q - log p]") {
  RngStream rng(4, 0);
  const int samples = 100000;
  for (int trial = 0; trial < 5; ++trial) {
    const double mu = 4.0 * rng.uniform() - 2.0;
    const double sigma = 0.2 + 2.0 * rng.uniform();
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < samples; ++i) {
      const double e = rng.normal();
      const double z = mu + sigma * e;
      // log q(z) - log p(z); the 2*pi terms cancel.
      const double v = -std::log(sigma) - 0.5 * e * e + 0.5 * z * z;
      s += v;
      s2 += v * v;
    }
    const double mean = s / samples;
    const double se = std::sqrt((s2 / samples - mean * mean) / samples);
    const double kl = kl_diag_gaussian({Tensor::matrix({{mu}}), Tensor::matrix({{sigma}})})[0];
    CHECK(std::abs(mean - kl) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("recon_log_likelihood") {
  DecoderOutput half{DecoderKind::bernoulli, Tensor::matrix({{0.5}}), {}};
  CHECK(recon_log_likelihood(Tensor::matrix({{1.0}}), half)[0] == doctest::Approx(std::log(0.5)).epsilon(1e-15));

  DecoderOutput g{DecoderKind::gaussian, Tensor::matrix({{0.7}}), Tensor::matrix({{1.0}})};
  CHECK(recon_log_likelihood(Tensor::matrix({{0.7}}), g)[0] == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)));

  // Cross-entropy is minimized at a match: for fixed x, p = x maximizes the
  // likelihood over p.
  for (double x : {0.1, 0.3, 0.5, 0.9}) {
    DecoderOutput at_x{DecoderKind::bernoulli, Tensor::matrix({{x}}), {}};
    const double best = recon_log_likelihood(Tensor::matrix({{x}}), at_x)[0];
    for (int i = 1; i < 100; ++i) {
      DecoderOutput other{DecoderKind::bernoulli, Tensor::matrix({{i / 100.0}}), {}};
      CHECK(recon_log_likelihood(Tensor::matrix({{x}}), other)[0] <= best + 1e-15);
    }
  }
  // Clamping keeps the log finite.
  DecoderOutput sure{DecoderKind::bernoulli, Tensor::matrix({{0.0}}), {}};
  CHECK(std::isfinite(recon_log_likelihood(Tensor::matrix({{1.0}}), sure)[0]));

  CHECK_THROWS_AS(recon_log_likelihood(Tensor::matrix({{1.5}}), half), InvalidArgument);
}

TEST_CASE("elbo_loss") {
  RngStream rng(5, 0);
  SUBCASE("loss equals kl - recon exactly, recon <= 0 for bernoulli") {
    VaeModel m(small_config(), rng);
    Tensor x = binary_batch(rng, 6, 4);
    auto t = m.elbo_loss(x, rng);
    CHECK(t.loss == t.kl - t.recon);
    CHECK(t.recon <= 0.0);
    CHECK(t.kl >= 0.0);
  }
  SUBCASE("invariant under batch-row permutation (noise permuted alongside)") {
    VaeModel m(small_config(), rng);
    const std::size_t n = 7, L = 2;
    Tensor x = binary_batch(rng, n, 4);
    Tensor eps = rng.normal_tensor({L * n, 2});
    auto perm = rng.permutation(n);
    Tensor xp = x.gather_rows(perm);
    std::vector<std::size_t> eperm;
    for (std::size_t l = 0; l < L; ++l)
      for (auto i : perm) eperm.push_back(l * n + i);
    Tensor ep = eps.gather_rows(eperm);
    for (auto mode : {nn::Mode::train, nn::Mode::eval}) {
      auto a = m.elbo_loss_with_noise(x, eps, mode);
      auto b = m.elbo_loss_with_noise(xp, ep, mode);
      CHECK(std::abs(a.loss - b.loss) < 1e-12);
    }
  }
  SUBCASE("full-loss gradient matches finite differences with frozen noise") {
    for (auto kind : {DecoderKind::bernoulli, DecoderKind::gaussian}) {
      VaeModel m(small_config(kind), rng);
      CHECK(parameter_count(m) <= 200);
      Tensor x = kind == DecoderKind::bernoulli ? binary_batch(rng, 5, 4) : random_tensor(rng, {5, 4});
      Tensor eps = rng.normal_tensor({2 * 5, 2});
      for (auto mode : {nn::Mode::train, nn::Mode::eval}) {
        m.loss_and_gradient(x, eps, mode);
        double worst = 0.0;
        const double h = 1e-5;
        for (Parameter* p : m.parameters()) {
          const Tensor analytic = p->grad;
          for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + h;
            const double fp = m.elbo_loss_with_noise(x, eps, mode).loss;
            p->value[i] = orig - h;
            const double fm = m.elbo_loss_with_noise(x, eps, mode).loss;
            p->value[i] = orig;
            worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2 * h)));
          }
        }
        CHECK(worst < 1e-4);
      }
    }
  }
}

TEST_CASE("train_step") {
  SUBCASE("loss decreases over 50-step windows on a separable toy set") {
    RngStream rng(6, 0);
    VaeConfig c = small_config();
    c.input_dim = 8;
    c.hidden_dim = 8;
    c.learning_rate = 0.01;
    VaeModel m(c, rng);
    Tensor x({16, 8});
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 8; ++j) x(i, j) = (i % 2 == 0) == (j < 4) ? 1.0 : 0.0;
    std::vector<double> losses;
    for (int step = 0; step < 200; ++step) losses.push_back(m.train_step(x, rng, +1).loss);
    for (int w = 0; w + 1 < 4; ++w) {
      double a = 0.0, b = 0.0;
      for (int i = 0; i < 50; ++i) {
        a += losses[w * 50 + i];
        b += losses[(w + 1) * 50 + i];
      }
      CHECK(b < a);
    }
  }
  SUBCASE("sgd: a -1 step followed by a +1 step returns near the start") {
    RngStream rng(7, 0);
    VaeConfig c = small_config();
    c.optimizer = OptimizerKind::sgd;
    c.learning_rate = 1e-3;
    VaeModel m(c, rng);
    Tensor x = binary_batch(rng, 6, 4);
    Tensor eps = rng.normal_tensor({12, 2});
    std::vector<Tensor> start;
    for (auto* p : m.parameters()) start.push_back(p->value);
    m.train_step_with_noise(x, eps, -1);
    double moved = 0.0;
    {
      auto ps = m.parameters();
      for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t j = 0; j < start[i].size(); ++j) moved = std::max(moved, std::abs(ps[i]->value[j] - start[i][j]));
    }
    m.train_step_with_noise(x, eps, +1);
    double back = 0.0;
    auto ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (std::size_t j = 0; j < start[i].size(); ++j) back = std::max(back, std::abs(ps[i]->value[j] - start[i][j]));
    CHECK(moved > 0.0);
    CHECK(back < 0.05 * moved);
  }
  SUBCASE("zero learning rate leaves parameters unchanged") {
    RngStream rng(8, 0);
    VaeConfig c = small_config();
    c.learning_rate = 0.0;
    VaeModel m(c, rng);
    std::vector<Tensor> start;
    for (auto* p : m.parameters()) start.push_back(p->value);
    m.train_step(binary_batch(rng, 4, 4), rng, +1);
    auto ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i]->value == start[i]);
  }
  SUBCASE("a single-row batch trains through running statistics") {
    RngStream rng(9, 0);
    VaeModel m(small_config(), rng);
    auto t = m.train_step(binary_batch(rng, 1, 4), rng, +1);
    CHECK(std::isfinite(t.loss));
  }
  SUBCASE("non-finite loss aborts with diagnostics") {
    RngStream rng(10, 0);
    VaeModel m(small_config(DecoderKind::gaussian), rng);
    Tensor x({2, 4}, std::numeric_limits<double>::infinity());
    try {
      m.train_step(x, rng, +1, StepContext{3, 5});
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("batch 3") != std::string::npos);
      CHECK(msg.find("component 5") != std::string::npos);
    }
  }
  SUBCASE("bernoulli rejects inputs outside [0,1]") {
    RngStream rng(11, 0);
    VaeModel m(small_config(), rng);
    CHECK_THROWS_AS(m.train_step(Tensor({2, 4}, 2.0), rng, +1), InvalidArgument);
  }
}

TEST_CASE("training on one point drives the reconstruction likelihood up") {
  RngStream rng(12, 0);
  VaeConfig c;
  c.input_dim = 16;
  c.hidden_dim = 16;
  c.latent_dim = 2;
  c.learning_rate = 0.01;
  VaeModel m(c, rng);
  Tensor point({1, 16});
  for (std::size_t j = 0; j < 16; ++j) point[j] = j % 3 == 0 ? 1.0 : 0.0;
  std::vector<Tensor> copies(8, point);
  Tensor batch = vstack(copies);
  std::vector<double> window_means;
  double acc = 0.0;
  for (int step = 1; step <= 400; ++step) {
    acc += m.train_step(batch, rng, +1).recon;
    if (step % 100 == 0) {
      window_means.push_back(acc / 100.0);
      acc = 0.0;
    }
  }
  for (std::size_t i = 1; i < window_means.size(); ++i) CHECK(window_means[i] > window_means[i - 1]);
}

TEST_CASE("expected_reconstruction_single") {
  RngStream rng(13, 0);
  VaeModel m(small_config(), rng);
  Tensor x = binary_batch(rng, 5, 4);
  // Warm the running statistics so eval mode is not degenerate.
  for (int i = 0; i < 5; ++i) m.train_step(x, rng, +1);

  SUBCASE("one sample with zero noise is decode(mu)") {
    auto r = m.expected_reconstruction_with_noise(x, Tensor({5, 2}), 1);
    CHECK(r == m.decode(m.encode(x).mu).mean);
  }
  SUBCASE("a near-deterministic encoder concentrates on decode(mu)") {
    for (Parameter* p : m.parameters()) {
      if (p->name == "enc.logvar.weight") p->value.fill(0.0);
      if (p->name == "enc.logvar.bias") p->value.fill(2.0 * std::log(1e-6));
    }
    auto r = m.expected_reconstruction(x, rng, 20);
    auto ref = m.decode(m.encode(x).mu).mean;
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(r[i] - ref[i]) < 1e-3);
  }
  SUBCASE("bernoulli output is in [0,1]") {
    auto r = m.expected_reconstruction(x, rng, 20);
    for (double v : r.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  SUBCASE("n_samples must be positive") {
    CHECK_THROWS_AS(m.expected_reconstruction(x, rng, 0), InvalidArgument);
  }
}
