// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "imvae/io/model_io.hpp"
#include "tmpdir.hpp"

using namespace imvae;
using imvae::testing::TempDir;
using imvae::testing::read_bytes;

namespace {

vae::VaeConfig small_vae(std::size_t d = 8) {
  vae::VaeConfig c;
  c.input_dim = d;
  c.hidden_dim = 6;
  c.latent_dim = 2;
  c.learning_rate = 1e-2;
  return c;
}

io::Dataset patterns(std::uint64_t seed) {
  RngStream rng(seed, 0);
  io::SynthSpec spec{{{1, 1, 1, 1, 0, 0, 0, 0}, {0, 0, 0, 0, 1, 1, 1, 1}}, {15, 15}, 0.05};
  return io::synth_patterns(spec, rng);
}

mixture::MixtureState small_mixture(const Tensor& x, std::uint64_t seed) {
  mixture::MixtureConfig mc;
  mc.batch_size = 10;
  mc.max_iterations = 30;
  mc.max_sweeps = 2;
  mc.theta_epochs = 1;
  return mixture::fit(small_vae(), mc, x, RngStream(seed, 1));
}

template <typename T>
T reload(const io::Checkpoint& ckpt, const TempDir& dir, T (*load)(const io::Checkpoint&)) {
  io::save_checkpoint(dir.file("m.ckpt"), ckpt);
  return load(io::load_checkpoint(dir.file("m.ckpt")));
}

}  // namespace

TEST_CASE("vae round trip reproduces outputs and continued training bit-exactly") {
  TempDir dir;
  const Tensor x = patterns(1).instances;
  RngStream init(1, 2), noise(1, 3);
  vae::VaeModel m(small_vae(), init);
  for (int i = 0; i < 5; ++i) m.train_step(x, noise, +1);

  io::Checkpoint ckpt;
  io::store_vae(ckpt, "base/", m);
  io::save_checkpoint(dir.file("v.ckpt"), ckpt);
  vae::VaeModel r = io::load_vae(io::load_checkpoint(dir.file("v.ckpt")), "base/");

  CHECK(r.encode(x).mu == m.encode(x).mu);
  CHECK(r.encode(x).sigma == m.encode(x).sigma);
  RngStream a(9, 9), b(9, 9);
  CHECK(r.expected_reconstruction(x, a, 3) == m.expected_reconstruction(x, b, 3));
  CHECK(r.adam().t == m.adam().t);

  RngStream na = noise, nb = noise;
  for (int i = 0; i < 3; ++i) {
    CHECK(r.train_step(x, na, +1).loss == m.train_step(x, nb, +1).loss);
  }
  CHECK(r.log_likelihood_at_mean(x) == m.log_likelihood_at_mean(x));
}

TEST_CASE("mixture round trip resumes sweeps exactly") {
  TempDir dir;
  const Tensor x = patterns(2).instances;
  mixture::MixtureState s = small_mixture(x, 2);
  io::Checkpoint ckpt;
  io::store_mixture(ckpt, s);
  mixture::MixtureState r = reload(ckpt, dir, &io::load_mixture);

  REQUIRE(r.size() == s.size());
  CHECK(r.assignments == s.assignments);
  CHECK(r.rng == s.rng);
  CHECK(r.next_uid == s.next_uid);
  CHECK(r.progress.sweeps_done == s.progress.sweeps_done);
  CHECK(r.progress.last_elbo == s.progress.last_elbo);
  CHECK(r.base.has_value());
  for (std::size_t c = 0; c < s.size(); ++c) {
    CHECK(r.components[c].uid == s.components[c].uid);
    CHECK(r.components[c].rng == s.components[c].rng);
  }
  const RngStream probe(5, 5);
  CHECK(mixture::expected_reconstruction(r, x, probe, 2) == mixture::expected_reconstruction(s, x, probe, 2));

  r.config.max_sweeps = s.config.max_sweeps = 4;
  r.progress.converged = s.progress.converged = false;
  mixture::run_sweeps(r, x);
  mixture::run_sweeps(s, x);
  CHECK(r.assignments == s.assignments);
  REQUIRE(r.size() == s.size());
  for (std::size_t c = 0; c < s.size(); ++c)
    CHECK(r.components[c].model.encode(x).mu == s.components[c].model.encode(x).mu);
}

TEST_CASE("save after load reproduces the same file") {
  TempDir dir;
  const Tensor x = patterns(3).instances;
  io::Checkpoint ckpt;
  ckpt.config = {{"seed", 3}};
  io::store_mixture(ckpt, small_mixture(x, 3));
  io::save_checkpoint(dir.file("a.ckpt"), ckpt);
  io::Checkpoint again;
  again.config = {{"seed", 3}};
  io::store_mixture(again, io::load_mixture(io::load_checkpoint(dir.file("a.ckpt"))));
  io::save_checkpoint(dir.file("b.ckpt"), again);
  CHECK(read_bytes(dir.file("a.ckpt")) == read_bytes(dir.file("b.ckpt")));
}

TEST_CASE("moe round trip reproduces predictions bit-exactly") {
  TempDir dir;
  io::Dataset d = patterns(4);
  moe::MoeConfig cfg;
  cfg.input_dim = 8;
  cfg.hidden_dim = 5;
  cfg.n_classes = 2;
  cfg.batch_size = 10;
  cfg.max_iterations = 20;
  moe::MoeModel m = moe::make_model(cfg, 3, RngStream(4, 1));
  moe::train(m, d.instances, d.labels, Tensor({d.size(), 3}, 1.0 / 3), RngStream(4, 2));
  io::Checkpoint ckpt;
  io::store_moe(ckpt, "moe/", m);
  io::save_checkpoint(dir.file("m.ckpt"), ckpt);
  moe::MoeModel r = io::load_moe(io::load_checkpoint(dir.file("m.ckpt")), "moe/");
  CHECK(r.n_experts() == 3);
  Tensor w({d.size(), 3});
  for (std::size_t i = 0; i < d.size(); ++i) w(i, i % 3) = 1.0;
  CHECK(r.predict_with_weights(d.instances, w) == m.predict_with_weights(d.instances, w));
}

TEST_CASE("config readers are strict") {
  nlohmann::json j = io::to_json(small_vae());
  CHECK(io::vae_config_from_json(j).hidden_dim == 6);
  j["bogus"] = 1;
  CHECK_THROWS_AS(io::vae_config_from_json(j), io::CheckpointManifestError);
  nlohmann::json m = io::to_json(mixture::MixtureConfig{});
  m["alpha"] = -1.0;
  CHECK_THROWS_AS(io::mixture_config_from_json(m), io::CheckpointManifestError);
  m.erase("alpha");
  CHECK_THROWS_AS(io::mixture_config_from_json(m), io::CheckpointManifestError);
  nlohmann::json r = io::to_json(RngStream(1, 2, 3));
  CHECK(io::rng_from_json(r) == RngStream(1, 2, 3));
}

TEST_CASE("missing models and tensors are reported") {
  io::Checkpoint empty;
  CHECK_THROWS_AS(io::load_mixture(empty), io::CheckpointManifestError);
  CHECK_THROWS_AS(io::load_vae(empty, "base/"), io::CheckpointManifestError);
  RngStream init(1, 1);
  io::Checkpoint ckpt;
  io::store_vae(ckpt, "base/", vae::VaeModel(small_vae(), init));
  ckpt.tensors.pop_back();
  CHECK_THROWS_AS(io::load_vae(ckpt, "base/"), io::CheckpointManifestError);
}
