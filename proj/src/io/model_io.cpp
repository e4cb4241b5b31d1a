// SPDX-License-Identifier: Apache-2.0
#include "imvae/io/model_io.hpp"

#include <utility>

namespace imvae {

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::adam, "adam"}, {OptimizerKind::sgd, "sgd"}})

namespace ops {
NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::tanh, "tanh"},
                                          {Activation::softplus, "softplus"},
                                          {Activation::sigmoid, "sigmoid"},
                                          {Activation::relu, "relu"}})
}

}  // namespace imvae

namespace imvae::io {

using nlohmann::json;

namespace {

// Reads every expected key exactly once; leftovers mean a foreign schema.
class Reader {
 public:
  Reader(const json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j.is_object()) fail("expected an object");
  }

  template <typename T>
  void operator()(const char* key, T& out) {
    ++seen_;
    auto it = j_.find(key);
    if (it == j_.end()) fail(std::string("missing key '") + key + "'");
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      fail(std::string("bad value for '") + key + "': " + e.what());
    }
  }

  void finish() const {
    if (seen_ != j_.size()) fail("unexpected keys");
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw CheckpointManifestError(what_ + ": " + msg); }

  const json& j_;
  std::string what_;
  std::size_t seen_ = 0;
};

}  // namespace

json to_json(const vae::VaeConfig& c) {
  return json{{"input_dim", c.input_dim},
              {"hidden_dim", c.hidden_dim},
              {"latent_dim", c.latent_dim},
              {"decoder", vae::to_string(c.decoder)},
              {"architecture", vae::to_string(c.architecture)},
              {"mc_samples", c.mc_samples},
              {"learning_rate", c.learning_rate},
              {"optimizer", c.optimizer}};
}

json to_json(const mixture::MixtureConfig& c) {
  return json{{"alpha", c.alpha},
              {"c_max", c.c_max},
              {"mc_samples", c.mc_samples},
              {"batch_size", c.batch_size},
              {"max_iterations", c.max_iterations},
              {"max_sweeps", c.max_sweeps},
              {"convergence_tol", c.convergence_tol},
              {"convergence_patience", c.convergence_patience},
              {"theta_epochs", c.theta_epochs},
              {"label_finetune_steps", c.label_finetune_steps}};
}

json to_json(const moe::MoeConfig& c) {
  return json{{"input_dim", c.input_dim},
              {"hidden_dim", c.hidden_dim},
              {"n_classes", c.n_classes},
              {"activation", c.activation},
              {"batch_size", c.batch_size},
              {"max_iterations", c.max_iterations},
              {"learning_rate", c.learning_rate},
              {"optimizer", c.optimizer},
              {"convergence_tol", c.convergence_tol},
              {"convergence_patience", c.convergence_patience},
              {"tied_expert_init", c.tied_expert_init}};
}

json to_json(const RngStream& r) {
  return json{{"seed", r.seed()}, {"stream_id", r.stream_id()}, {"counter", r.counter()}};
}

vae::VaeConfig vae_config_from_json(const json& j) {
  Reader r(j, "vae config");
  vae::VaeConfig c;
  std::string decoder, arch;
  r("input_dim", c.input_dim);
  r("hidden_dim", c.hidden_dim);
  r("latent_dim", c.latent_dim);
  r("decoder", decoder);
  r("architecture", arch);
  r("mc_samples", c.mc_samples);
  r("learning_rate", c.learning_rate);
  r("optimizer", c.optimizer);
  r.finish();
  try {
    c.decoder = vae::parse_decoder_kind(decoder);
    c.architecture = vae::parse_architecture(arch);
    c.validate();
  } catch (const InvalidArgument& e) {
    throw CheckpointManifestError(std::string("vae config: ") + e.what());
  }
  return c;
}

mixture::MixtureConfig mixture_config_from_json(const json& j) {
  Reader r(j, "mixture config");
  mixture::MixtureConfig c;
  r("alpha", c.alpha);
  r("c_max", c.c_max);
  r("mc_samples", c.mc_samples);
  r("batch_size", c.batch_size);
  r("max_iterations", c.max_iterations);
  r("max_sweeps", c.max_sweeps);
  r("convergence_tol", c.convergence_tol);
  r("convergence_patience", c.convergence_patience);
  r("theta_epochs", c.theta_epochs);
  r("label_finetune_steps", c.label_finetune_steps);
  r.finish();
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw CheckpointManifestError(std::string("mixture config: ") + e.what());
  }
  return c;
}

moe::MoeConfig moe_config_from_json(const json& j) {
  Reader r(j, "moe config");
  moe::MoeConfig c;
  r("input_dim", c.input_dim);
  r("hidden_dim", c.hidden_dim);
  r("n_classes", c.n_classes);
  r("activation", c.activation);
  r("batch_size", c.batch_size);
  r("max_iterations", c.max_iterations);
  r("learning_rate", c.learning_rate);
  r("optimizer", c.optimizer);
  r("convergence_tol", c.convergence_tol);
  r("convergence_patience", c.convergence_patience);
  r("tied_expert_init", c.tied_expert_init);
  r.finish();
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw CheckpointManifestError(std::string("moe config: ") + e.what());
  }
  return c;
}

RngStream rng_from_json(const json& j) {
  Reader r(j, "rng state");
  std::uint64_t seed = 0, stream = 0, counter = 0;
  r("seed", seed);
  r("stream_id", stream);
  r("counter", counter);
  r.finish();
  return RngStream(seed, stream, counter);
}

namespace {

json adam_meta(const AdamState& a) {
  return json{{"t", a.t}, {"beta1", a.config.beta1}, {"beta2", a.config.beta2}, {"epsilon", a.config.epsilon}};
}

void read_adam_meta(const json& j, AdamState& a) {
  Reader r(j, "optimizer state");
  r("t", a.t);
  r("beta1", a.config.beta1);
  r("beta2", a.config.beta2);
  r("epsilon", a.config.epsilon);
  r.finish();
}

template <typename Model>
void put_tensors(Checkpoint& ckpt, const std::string& prefix, Model model) {
  for (auto& [name, t] : model.state_tensors()) ckpt.put(prefix + name, *t);
}

template <typename Model>
void get_tensors(const Checkpoint& ckpt, const std::string& prefix, Model& model) {
  for (auto& [name, t] : model.state_tensors()) {
    if (!ckpt.contains(prefix + name)) throw CheckpointManifestError("missing tensor '" + prefix + name + "'");
    ckpt.read_into(prefix + name, *t);
  }
}

const json& meta_entry(const Checkpoint& ckpt, const char* section, const std::string& prefix) {
  auto s = ckpt.meta.find(section);
  if (s == ckpt.meta.end() || !s->contains(prefix))
    throw CheckpointManifestError(std::string("no ") + section + " stored under '" + prefix + "'");
  return (*s)[prefix];
}

json index_array(const std::vector<std::size_t>& v) { return json(v); }

std::vector<std::size_t> read_indices(const json& j, const char* what) {
  try {
    return j.get<std::vector<std::size_t>>();
  } catch (const json::exception&) {
    throw CheckpointManifestError(std::string("bad index list: ") + what);
  }
}

}  // namespace

void store_vae(Checkpoint& ckpt, const std::string& prefix, const vae::VaeModel& model) {
  put_tensors(ckpt, prefix, model);
  ckpt.meta["vae"][prefix] = json{{"config", to_json(model.config())}, {"adam", adam_meta(model.adam())}};
}

bool has_vae(const Checkpoint& ckpt, const std::string& prefix) {
  auto s = ckpt.meta.find("vae");
  return s != ckpt.meta.end() && s->contains(prefix);
}

vae::VaeModel load_vae(const Checkpoint& ckpt, const std::string& prefix) {
  const json& entry = meta_entry(ckpt, "vae", prefix);
  if (!entry.contains("config") || !entry.contains("adam"))
    throw CheckpointManifestError("vae entry '" + prefix + "' incomplete");
  const vae::VaeConfig cfg = vae_config_from_json(entry["config"]);
  RngStream scratch(0, 0);
  vae::VaeModel model(cfg, scratch);
  get_tensors(ckpt, prefix, model);
  read_adam_meta(entry["adam"], model.adam());
  return model;
}

void store_mixture(Checkpoint& ckpt, const mixture::MixtureState& state) {
  json comps = json::array();
  for (std::size_t c = 0; c < state.components.size(); ++c) {
    const auto& comp = state.components[c];
    store_vae(ckpt, "mixture/c" + std::to_string(c) + "/", comp.model);
    comps.push_back(json{{"uid", comp.uid},
                         {"rng", to_json(comp.rng)},
                         {"added", index_array(comp.added)},
                         {"removed", index_array(comp.removed)}});
  }
  if (state.base) store_vae(ckpt, "mixture/base/", *state.base);
  const auto& p = state.progress;
  ckpt.meta["mixture"] = json{{"config", to_json(state.config)},
                              {"components", comps},
                              {"assignments", index_array(state.assignments)},
                              {"has_base", state.base.has_value()},
                              {"rng", to_json(state.rng)},
                              {"next_uid", state.next_uid},
                              {"progress",
                               {{"sweeps_done", p.sweeps_done},
                                {"last_elbo", p.last_elbo},
                                {"stable_sweeps", p.stable_sweeps},
                                {"converged", p.converged}}}};
}

bool has_mixture(const Checkpoint& ckpt) { return ckpt.meta.contains("mixture"); }

mixture::MixtureState load_mixture(const Checkpoint& ckpt) {
  if (!has_mixture(ckpt)) throw CheckpointManifestError("checkpoint holds no mixture");
  const json& m = ckpt.meta["mixture"];
  Reader r(m, "mixture");
  mixture::MixtureState s;
  json config, comps, assignments, rng, progress;
  bool has_base = false;
  r("config", config);
  r("components", comps);
  r("assignments", assignments);
  r("has_base", has_base);
  r("rng", rng);
  r("next_uid", s.next_uid);
  r("progress", progress);
  r.finish();
  s.config = mixture_config_from_json(config);
  s.rng = rng_from_json(rng);
  s.assignments = read_indices(assignments, "assignments");
  Reader pr(progress, "progress");
  pr("sweeps_done", s.progress.sweeps_done);
  pr("last_elbo", s.progress.last_elbo);
  pr("stable_sweeps", s.progress.stable_sweeps);
  pr("converged", s.progress.converged);
  pr.finish();
  if (!comps.is_array()) throw CheckpointManifestError("mixture components must be a list");
  for (std::size_t c = 0; c < comps.size(); ++c) {
    Reader cr(comps[c], "component " + std::to_string(c));
    mixture::Component comp;
    json crng, added, removed;
    cr("uid", comp.uid);
    cr("rng", crng);
    cr("added", added);
    cr("removed", removed);
    cr.finish();
    comp.rng = rng_from_json(crng);
    comp.added = read_indices(added, "added");
    comp.removed = read_indices(removed, "removed");
    comp.model = load_vae(ckpt, "mixture/c" + std::to_string(c) + "/");
    s.components.push_back(std::move(comp));
  }
  if (has_base) s.base = load_vae(ckpt, "mixture/base/");
  try {
    s.check_invariants();
  } catch (const std::logic_error& e) {
    throw CheckpointManifestError(std::string("mixture: ") + e.what());
  }
  return s;
}

void store_moe(Checkpoint& ckpt, const std::string& prefix, const moe::MoeModel& model) {
  put_tensors(ckpt, prefix, model);
  ckpt.meta["moe"][prefix] = json{{"config", to_json(model.config())},
                                  {"n_experts", model.n_experts()},
                                  {"adam", adam_meta(const_cast<moe::MoeModel&>(model).adam())}};
}

moe::MoeModel load_moe(const Checkpoint& ckpt, const std::string& prefix) {
  const json& entry = meta_entry(ckpt, "moe", prefix);
  Reader r(entry, "moe entry '" + prefix + "'");
  json config, adam;
  std::size_t n_experts = 0;
  r("config", config);
  r("n_experts", n_experts);
  r("adam", adam);
  r.finish();
  if (n_experts < 1) throw CheckpointManifestError("moe: n_experts must be >= 1");
  RngStream scratch(0, 0);
  moe::MoeModel model(moe_config_from_json(config), n_experts, scratch);
  get_tensors(ckpt, prefix, model);
  read_adam_meta(adam, model.adam());
  return model;
}

}  // namespace imvae::io
