// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "imvae/core/error.hpp"
#include "imvae/moe/moe.hpp"

using namespace imvae;
using namespace imvae::moe;

namespace {

MoeConfig small_moe(std::size_t d = 6, std::size_t k = 3) {
  MoeConfig c;
  c.input_dim = d;
  c.hidden_dim = 5;
  c.n_classes = k;
  c.batch_size = 8;
  c.max_iterations = 40;
  c.learning_rate = 1e-2;
  c.convergence_tol = 0.0;
  return c;
}

Tensor random_input(RngStream& rng, std::size_t m, std::size_t d) {
  Tensor x({m, d});
  for (double& v : x.data()) v = rng.uniform();
  return x;
}

Tensor random_weights(RngStream& rng, std::size_t m, std::size_t c) {
  Tensor w({m, c});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += w(i, j) = rng.uniform() + 1e-3;
    for (std::size_t j = 0; j < c; ++j) w(i, j) /= s;
  }
  return w;
}

std::vector<Tensor> params_of(MoeModel& m) {
  std::vector<Tensor> out;
  for (Parameter* p : m.parameters()) out.push_back(p->value);
  return out;
}

Tensor* named(MoeModel& m, const std::string& name) {
  for (auto& [n, t] : m.state_tensors())
    if (n == name) return t;
  return nullptr;
}

// Two linearly separable blobs in 4-d; label = which half is lit.
io::Dataset separable(std::size_t per, std::uint64_t seed) {
  RngStream rng(seed, 0);
  io::Dataset d;
  d.instances = Tensor({2 * per, 4});
  d.n_classes = 2;
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const std::size_t y = i < per ? 0 : 1;
    for (std::size_t j = 0; j < 4; ++j) {
      const bool lit = (j < 2) == (y == 0);
      d.instances(i, j) = (lit ? 0.8 : 0.2) + 0.1 * (rng.uniform() - 0.5);
    }
    d.labels.push_back(y);
  }
  return d;
}

mixture::MixtureState vae_mixture(std::size_t d, std::size_t c_count, std::uint64_t seed) {
  vae::VaeConfig vc;
  vc.input_dim = d;
  vc.hidden_dim = 5;
  vc.latent_dim = 2;
  RngStream init(seed, 1);
  vae::VaeModel base(vc, init);
  mixture::MixtureConfig mc;
  return mixture::initialize(mc, base, 1, c_count, RngStream(seed, 2));
}

}  // namespace

TEST_CASE("predict with one expert is the plain softmax classifier") {
  RngStream rng(1, 0);
  MoeModel m = make_model(small_moe(), 1, rng);
  Tensor x = random_input(rng, 7, 6);
  auto mix = vae_mixture(6, 1, 1);
  CHECK(predict(m, mix, x, rng) == m.expert_probs(x, 0));
}

TEST_CASE("tied experts give the same output for any gating") {
  RngStream rng(2, 0);
  MoeModel m = make_model(small_moe(), 4, rng);
  Tensor x = random_input(rng, 9, 6);
  Tensor single = m.expert_probs(x, 2);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor out = m.predict_with_weights(x, random_weights(rng, 9, 4));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - single[i]) < 1e-12);
  }
}

TEST_CASE("predict output lies in the simplex") {
  RngStream rng(3, 0);
  MoeConfig cfg = small_moe();
  cfg.tied_expert_init = false;
  for (int trial = 0; trial < 10; ++trial) {
    MoeModel m = make_model(cfg, 3, RngStream(trial, 1));
    Tensor x = random_input(rng, 11, 6);
    for (double& v : x.data()) v = 10.0 * (v - 0.5);
    Tensor out = m.predict_with_weights(x, random_weights(rng, 11, 3));
    for (std::size_t i = 0; i < out.rows(); ++i) {
      double s = 0;
      for (double p : out.row(i)) {
        CHECK(p >= 0.0);
        s += p;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("predict is invariant to permuting experts with their gates") {
  RngStream rng(4, 0);
  MoeConfig cfg = small_moe();
  cfg.tied_expert_init = false;
  MoeModel m = make_model(cfg, 3, rng);
  MoeModel p = m;
  for (const char* field : {".weight", ".bias"}) {
    *named(p, std::string("moe.expert0") + field) = *named(m, std::string("moe.expert2") + field);
    *named(p, std::string("moe.expert2") + field) = *named(m, std::string("moe.expert0") + field);
  }
  Tensor x = random_input(rng, 6, 6);
  Tensor w = random_weights(rng, 6, 3);
  Tensor wp = w;
  for (std::size_t i = 0; i < 6; ++i) std::swap(wp(i, 0), wp(i, 2));
  Tensor a = m.predict_with_weights(x, w), b = p.predict_with_weights(x, wp);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("expert and component counts must agree") {
  RngStream rng(5, 0);
  MoeModel m = make_model(small_moe(), 2, rng);
  auto mix = vae_mixture(6, 3, 5);
  Tensor x = random_input(rng, 4, 6);
  CHECK_THROWS_AS(predict(m, mix, x, rng), InvalidArgument);
  CHECK_THROWS_AS(m.predict_with_weights(x, Tensor({4, 3}, 1.0 / 3)), InvalidArgument);
}

TEST_CASE("one-hot gating gives each expert the gradient of its own instances") {
  RngStream rng(6, 0);
  MoeConfig cfg = small_moe();
  cfg.tied_expert_init = false;
  MoeModel m = make_model(cfg, 2, rng);
  const std::size_t rows = 8;
  Tensor x = random_input(rng, rows, 6);
  std::vector<std::size_t> y{0, 1, 2, 0, 1, 2, 0, 1};
  Tensor w({rows, 2});
  std::vector<std::size_t> mine;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t c = i % 3 == 0 ? 1 : 0;
    w(i, c) = 1.0;
    if (c == 1) mine.push_back(i);
  }
  auto grads_of_expert1 = [&](const Tensor& xs, std::span<const std::size_t> ys, const Tensor& ws) {
    MoeModel copy = m;
    Tape tape;
    Var loss = copy.build_loss(tape, xs, ys, ws, nn::Mode::eval);
    auto params = copy.parameters();
    zero_grad(params);
    tape.backward(loss);
    std::vector<Tensor> out;
    for (Parameter* p : params)
      if (p->name.rfind("moe.expert1", 0) == 0) out.push_back(p->grad);
    return out;
  };
  auto full = grads_of_expert1(x, y, w);
  std::vector<std::size_t> ys;
  for (std::size_t i : mine) ys.push_back(y[i]);
  Tensor ws({mine.size(), 2});
  for (std::size_t i = 0; i < mine.size(); ++i) ws(i, 1) = 1.0;
  auto own = grads_of_expert1(x.gather_rows(mine), ys, ws);
  const double scale = static_cast<double>(mine.size()) / rows;
  REQUIRE(full.size() == own.size());
  for (std::size_t p = 0; p < full.size(); ++p)
    for (std::size_t i = 0; i < full[p].size(); ++i) CHECK(full[p][i] == doctest::Approx(scale * own[p][i]).epsilon(1e-12));
}

TEST_CASE("uniform gating keeps tied experts identical through training") {
  io::Dataset d = separable(10, 7);
  MoeConfig cfg = small_moe(4, 2);
  MoeModel m = make_model(cfg, 3, RngStream(7, 1));
  train(m, d.instances, d.labels, Tensor({d.size(), 3}, 1.0 / 3), RngStream(7, 2));
  for (std::size_t c = 1; c < 3; ++c) {
    CHECK(m.expert(c).weight.value == m.expert(0).weight.value);
    CHECK(m.expert(c).bias.value == m.expert(0).bias.value);
  }
}

TEST_CASE("training on separable data drives the loss below 0.1 in 50 epochs") {
  io::Dataset d = separable(20, 8);
  MoeConfig cfg = small_moe(4, 2);
  cfg.batch_size = 10;
  cfg.max_iterations = 200;  // 4 batches per epoch
  cfg.learning_rate = 0.05;
  MoeModel m = make_model(cfg, 2, RngStream(8, 1));
  TrainReport rep = train(m, d.instances, d.labels, Tensor({d.size(), 2}, 0.5), RngStream(8, 2));
  REQUIRE(rep.epoch_loss.size() == 50);
  CHECK(rep.epoch_loss.back() < 0.1);
  CHECK(rep.epoch_loss.back() < rep.epoch_loss.front());
}

TEST_CASE("uniform 1/C weights with C-times learning rate match unweighted SGD exactly") {
  io::Dataset d = separable(6, 9);
  for (std::size_t c_count : {2u, 4u}) {
    MoeConfig base = small_moe(4, 2);
    base.optimizer = OptimizerKind::sgd;
    base.max_iterations = 2;
    base.batch_size = 100;
    MoeConfig scaled = base;
    scaled.learning_rate = base.learning_rate * static_cast<double>(c_count);
    MoeModel a = make_model(scaled, c_count, RngStream(9, 1));
    MoeModel b = make_model(base, c_count, RngStream(9, 1));
    train(a, d.instances, d.labels, Tensor({d.size(), c_count}, 1.0 / static_cast<double>(c_count)), RngStream(9, 2));
    train(b, d.instances, d.labels, Tensor({d.size(), c_count}, 1.0), RngStream(9, 2));
    CHECK(params_of(a) == params_of(b));
  }
}

TEST_CASE("training aborts on a non-finite loss") {
  io::Dataset d = separable(4, 10);
  d.instances(1, 2) = std::nan("");
  MoeModel m = make_model(small_moe(4, 2), 1, RngStream(10, 1));
  CHECK_THROWS_AS(train(m, d.instances, d.labels, Tensor({d.size(), 1}, 1.0), RngStream(10, 2)), NumericalError);
}

TEST_CASE("evaluate_probs") {
  std::vector<std::size_t> y{0, 1, 1, 0};
  Tensor perfect = Tensor::matrix({{1, 0}, {0, 1}, {0, 1}, {1, 0}});
  Evaluation e = evaluate_probs(perfect, y, 2);
  CHECK(e.error_rate == 0.0);
  CHECK(e.per_class_accuracy == std::vector<double>{1.0, 1.0});

  std::vector<std::size_t> balanced;
  for (int i = 0; i < 1000; ++i) balanced.push_back(i % 2);
  Evaluation u = evaluate_probs(Tensor({1000, 2}, 0.5), balanced, 2);
  CHECK(u.error_rate == 0.5);
  CHECK(u.log_loss == doctest::Approx(std::log(2.0)));

  Tensor probs = Tensor::matrix({{0.7, 0.2, 0.1}, {0.1, 0.3, 0.6}, {0.5, 0.5, 0.0}});
  std::vector<std::size_t> yy{0, 1, 1};
  Evaluation m = evaluate_probs(probs, yy, 3);
  CHECK(m.error_rate == doctest::Approx(2.0 / 3));
  CHECK(m.per_class_accuracy[0] == 1.0);
  CHECK(m.per_class_accuracy[1] == 0.0);
  CHECK(std::isnan(m.per_class_accuracy[2]));
  CHECK(m.log_loss == doctest::Approx(-(std::log(0.7) + std::log(0.3) + std::log(0.5)) / 3));

  std::vector<std::size_t> order{2, 0, 1};
  std::vector<std::size_t> yp;
  for (std::size_t i : order) yp.push_back(yy[i]);
  CHECK(evaluate_probs(probs.gather_rows(order), yp, 3).error_rate == m.error_rate);
}

TEST_CASE("baseline equals a one-expert MoE with unit weights") {
  io::Dataset d = separable(8, 11);
  MoeConfig cfg = small_moe(4, 2);
  const RngStream rng(11, 5);
  TrainReport rb;
  MoeModel baseline = baseline_train(cfg, d.instances, d.labels, rng, nullptr, &rb);

  auto mix = vae_mixture(4, 1, 11);
  MoeModel moe1 = make_model(cfg, 1, rng);
  TrainReport rm = train(moe1, mix, d, rng);
  CHECK(params_of(baseline) == params_of(moe1));
  CHECK(rb.epoch_loss == rm.epoch_loss);
  const Evaluation eb = evaluate(baseline, mix, d, rng), em = evaluate(moe1, mix, d, rng);
  CHECK(eb.error_rate == em.error_rate);
  CHECK(eb.log_loss == em.log_loss);

  MoeModel again = baseline_train(cfg, d.instances, d.labels, rng);
  CHECK(params_of(again) == params_of(baseline));
}

TEST_CASE("trunk initialization from an encoder block") {
  auto mix = vae_mixture(4, 1, 12);
  MoeConfig cfg = small_moe(4, 2);
  MoeModel m = make_model(cfg, 1, RngStream(12, 3));
  const auto& block = mix.base->encoder_hidden();
  m.init_trunk_from(block);
  RngStream xr(12, 4);
  Tensor x = random_input(xr, 3, 4);
  CHECK(m.features(x) == block.forward(x));
  MoeConfig wrong = cfg;
  wrong.hidden_dim = 7;
  MoeModel w = make_model(wrong, 1, RngStream(12, 3));
  CHECK_THROWS_AS(w.init_trunk_from(block), DimensionError);
}

TEST_CASE("latent feature layout") {
  auto mix = vae_mixture(4, 3, 13);
  RngStream rng(13, 0);
  Tensor x = random_input(rng, 5, 4);
  Tensor f = latent_features(mix, x, rng);
  CHECK(f.shape() == Shape{5, 3 * 2 * 2});
  // identical components: uniform weights times each component's (mu, sigma)
  const auto q = mix.components[1].model.encode(x);
  CHECK(f(2, 4 + 0) == doctest::Approx(q.mu(2, 0) / 3).epsilon(1e-14));
  CHECK(f(2, 4 + 3) == doctest::Approx(q.sigma(2, 1) / 3).epsilon(1e-14));
}

TEST_CASE("linear probe separates separable features") {
  io::Dataset tr = separable(15, 14), te = separable(15, 15);
  CHECK(linear_probe(tr.instances, tr.labels, te.instances, te.labels, 2, RngStream(14, 0)) == 1.0);
}

TEST_CASE("linear probe on a mixture of two cluster specialists is perfect") {
  const std::size_t per = 12;
  RngStream rng(16, 0);
  io::SynthSpec spec{{{1, 1, 1, 1, 0, 0, 0, 0}, {0, 0, 0, 0, 1, 1, 1, 1}}, {per, per}, 0.0};
  io::Dataset d = io::synth_patterns(spec, rng);
  vae::VaeConfig vc;
  vc.input_dim = 8;
  vc.hidden_dim = 6;
  vc.latent_dim = 2;
  vc.learning_rate = 1e-2;
  RngStream init(16, 1);
  mixture::MixtureState mix = mixture::initialize({}, vae::VaeModel(vc, init), d.size(), 2, RngStream(16, 2));
  std::vector<std::size_t> a(per), b(per);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), per);
  for (int i = 0; i < 150; ++i) {
    mix.components[0].model.train_step(d.instances.gather_rows(a), mix.components[0].rng, +1);
    mix.components[1].model.train_step(d.instances.gather_rows(b), mix.components[1].rng, +1);
  }
  const Tensor f = latent_features(mix, d.instances, RngStream(16, 3));
  CHECK(f.cols() == 2 * 2 * 2);
  CHECK(linear_probe(mix, d, d, RngStream(16, 4)) == 1.0);
}

TEST_CASE("linear probe is at least the class prior") {
  int held = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    RngStream rng(17, seed);
    Tensor tr({40, 3}), te({40, 3});
    std::vector<std::size_t> ytr, yte;
    for (std::size_t i = 0; i < 40; ++i) {
      ytr.push_back(i % 4 == 0 ? 1 : 0);
      yte.push_back(i % 4 == 0 ? 1 : 0);
      for (std::size_t j = 0; j < 3; ++j) {
        tr(i, j) = rng.normal() + (ytr[i] ? 0.5 : 0.0);
        te(i, j) = rng.normal() + (yte[i] ? 0.5 : 0.0);
      }
    }
    held += linear_probe(tr, ytr, te, yte, 2, rng) >= 0.75;
  }
  CHECK(held >= 2);
}
