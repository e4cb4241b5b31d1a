// SPDX-License-Identifier: Apache-2.0
#pragma once

// Models and configs to and from checkpoints. Tensors live under a prefix
// ("base/", "mixture/c3/", "moe/"); scalars, RNG states and bookkeeping go
// into the JSON meta block.

#include <string>

#include "imvae/core/rng.hpp"
#include "imvae/io/checkpoint.hpp"
#include "imvae/mixture/dp_mixture.hpp"
#include "imvae/moe/moe.hpp"
#include "imvae/vae/vae.hpp"
#include "json.hpp"

namespace imvae::io {

nlohmann::json to_json(const vae::VaeConfig& c);
nlohmann::json to_json(const mixture::MixtureConfig& c);
nlohmann::json to_json(const moe::MoeConfig& c);
nlohmann::json to_json(const RngStream& r);

// Strict: unknown or ill-typed keys throw CheckpointManifestError.
vae::VaeConfig vae_config_from_json(const nlohmann::json& j);
mixture::MixtureConfig mixture_config_from_json(const nlohmann::json& j);
moe::MoeConfig moe_config_from_json(const nlohmann::json& j);
RngStream rng_from_json(const nlohmann::json& j);

void store_vae(Checkpoint& ckpt, const std::string& prefix, const vae::VaeModel& model);
vae::VaeModel load_vae(const Checkpoint& ckpt, const std::string& prefix);
bool has_vae(const Checkpoint& ckpt, const std::string& prefix);

void store_mixture(Checkpoint& ckpt, const mixture::MixtureState& state);
mixture::MixtureState load_mixture(const Checkpoint& ckpt);
bool has_mixture(const Checkpoint& ckpt);

void store_moe(Checkpoint& ckpt, const std::string& prefix, const moe::MoeModel& model);
moe::MoeModel load_moe(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace imvae::io
