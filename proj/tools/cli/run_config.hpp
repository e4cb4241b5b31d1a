// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: a flat key/value schema with typed defaults. Values come
// from the defaults, then a `key = value` file, then command-line overrides.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "imvae/mixture/dp_mixture.hpp"
#include "imvae/moe/moe.hpp"
#include "imvae/vae/vae.hpp"
#include "json.hpp"

namespace imvae::cli {

// Bad keys, unparsable values or failed validation. Exit code 2.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class RunConfig {
 public:
  RunConfig();

  // Reads `key = value` lines; '#' starts a comment.
  void load_file(const std::string& path);
  // Parses `value` according to the key's default type.
  void set(const std::string& key, const std::string& value);
  // Throws ConfigError on any inconsistency. Call before doing work.
  void validate() const;

  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::string text(const std::string& key) const;

  std::uint64_t seed() const;
  std::uint64_t data_seed() const;
  std::string out_dir() const { return text("out_dir"); }
  // Per-class label count; nullopt means every labeled instance.
  std::optional<std::size_t> label_budget() const;

  vae::VaeConfig vae_config(std::size_t input_dim) const;
  mixture::MixtureConfig mixture_config() const;
  moe::MoeConfig moe_config(std::size_t input_dim, std::size_t n_classes) const;

  // Every run parameter except output locations, so that identical runs in
  // different directories produce identical files.
  nlohmann::json echo() const;
  const nlohmann::json& values() const { return values_; }

  static std::vector<std::string> keys();

 private:
  const nlohmann::json& at(const std::string& key) const;
  nlohmann::json values_;
};

}  // namespace imvae::cli
