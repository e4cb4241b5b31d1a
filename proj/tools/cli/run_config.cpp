// SPDX-License-Identifier: Apache-2.0
#include "run_config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>

#include "imvae/core/error.hpp"

namespace imvae::cli {

using nlohmann::json;

namespace {

// Output locations; excluded from the config echo.
const std::set<std::string> kLocationKeys{"out_dir", "base_checkpoint", "mixture_checkpoint"};

json defaults() {
  return json{
      {"seed", 0},
      {"data_seed", -1},  // -1: same as seed
      // data source: synthetic | idx | csv
      {"data", "synthetic"},
      {"synth_classes", 4},
      {"synth_dim", 64},
      {"synth_train", 2000},
      {"synth_test", 1000},
      {"synth_flip", 0.05},
      {"train_images", ""},
      {"train_labels", ""},
      {"test_images", ""},
      {"test_labels", ""},
      {"train_csv", ""},
      {"test_csv", ""},
      {"csv_label_last", true},
      // auto: binarize when the decoder is bernoulli
      {"binarize", "auto"},
      {"binarize_threshold", 0.5},
      {"hidden_dim", 100},
      {"latent_dim", 0},  // 0: max(1, round(0.1 * hidden_dim))
      {"decoder", "bernoulli"},
      {"architecture", "asymmetric"},
      {"mc_samples", 2},
      {"learning_rate", 1e-3},
      {"optimizer", "adam"},
      {"alpha", 2.0},
      {"c_max", 64},
      {"batch_size", 500},
      {"max_iterations", 1000},
      {"max_sweeps", 50},
      {"convergence_tol", 1e-4},
      {"convergence_patience", 3},
      {"theta_epochs", 10},
      {"label_finetune_steps", 50},
      {"seed_labels", 100},  // labeled instances used to seed the mixture, 0 disables
      {"moe_hidden_dim", 0},  // 0: hidden_dim
      {"moe_max_iterations", 1000},
      {"moe_learning_rate", 1e-3},
      {"moe_trunk", "encoder"},  // encoder | random
      {"baseline_trunk", "random"},
      {"label_budget", "all"},  // per class
      {"trials", 3},
      {"recon_samples", 20},
      {"eval_split", "train"},  // train | test
      {"rows", 0},  // 0: every row of the split
      {"timing", false},
      {"out_dir", "imvae-out"},
      {"base_checkpoint", ""},
      {"mixture_checkpoint", ""},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (auto& [k, v] : defaults().items()) out.push_back(k);
  return out;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  static const json kDefaults = defaults();
  const json& proto = kDefaults[key];
  if (proto.is_boolean()) {
    if (value == "true" || value == "1") *it = true;
    else if (value == "false" || value == "0") *it = false;
    else throw ConfigError("'" + key + "' expects true or false, got '" + value + "'");
  } else if (proto.is_number_integer()) {
    std::int64_t v = 0;
    if (!parse_number(value, v)) throw ConfigError("'" + key + "' expects an integer, got '" + value + "'");
    *it = v;
  } else if (proto.is_number_float()) {
    double v = 0;
    if (!parse_number(value, v)) throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
    *it = v;
  } else {
    *it = value;
  }
}

const json& RunConfig::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::logic_error("RunConfig: no key " + key);
  return *it;
}

std::int64_t RunConfig::integer(const std::string& key) const { return at(key).get<std::int64_t>(); }
double RunConfig::real(const std::string& key) const { return at(key).get<double>(); }
bool RunConfig::flag(const std::string& key) const { return at(key).get<bool>(); }
std::string RunConfig::text(const std::string& key) const { return at(key).get<std::string>(); }

std::size_t RunConfig::count(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) throw ConfigError("'" + key + "' must be >= 0, got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

std::uint64_t RunConfig::seed() const {
  const std::int64_t s = integer("seed");
  if (s < 0) throw ConfigError("seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

std::uint64_t RunConfig::data_seed() const {
  const std::int64_t s = integer("data_seed");
  return s < 0 ? seed() : static_cast<std::uint64_t>(s);
}

std::optional<std::size_t> RunConfig::label_budget() const {
  const std::string b = text("label_budget");
  if (b == "all") return std::nullopt;
  std::size_t v = 0;
  if (!parse_number(b, v) || v == 0)
    throw ConfigError("label_budget must be 'all' or a positive per-class count, got '" + b + "'");
  return v;
}

vae::VaeConfig RunConfig::vae_config(std::size_t input_dim) const {
  vae::VaeConfig c;
  c.input_dim = input_dim;
  c.hidden_dim = count("hidden_dim");
  const std::size_t k = count("latent_dim");
  c.latent_dim = k == 0 ? vae::VaeConfig::default_latent_dim(c.hidden_dim) : k;
  c.decoder = vae::parse_decoder_kind(text("decoder"));
  c.architecture = vae::parse_architecture(text("architecture"));
  c.mc_samples = count("mc_samples");
  c.learning_rate = real("learning_rate");
  const std::string opt = text("optimizer");
  if (opt != "adam" && opt != "sgd") throw ConfigError("optimizer must be adam or sgd");
  c.optimizer = opt == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
  return c;
}

mixture::MixtureConfig RunConfig::mixture_config() const {
  mixture::MixtureConfig c;
  c.alpha = real("alpha");
  c.c_max = count("c_max");
  c.mc_samples = count("mc_samples");
  c.batch_size = count("batch_size");
  c.max_iterations = count("max_iterations");
  c.max_sweeps = count("max_sweeps");
  c.convergence_tol = real("convergence_tol");
  c.convergence_patience = count("convergence_patience");
  c.theta_epochs = count("theta_epochs");
  c.label_finetune_steps = count("label_finetune_steps");
  return c;
}

moe::MoeConfig RunConfig::moe_config(std::size_t input_dim, std::size_t n_classes) const {
  moe::MoeConfig c;
  c.input_dim = input_dim;
  const std::size_t h = count("moe_hidden_dim");
  c.hidden_dim = h == 0 ? count("hidden_dim") : h;
  c.n_classes = n_classes;
  c.activation = vae::parse_architecture(text("architecture")) == vae::Architecture::asymmetric
                     ? ops::Activation::tanh
                     : ops::Activation::softplus;
  c.batch_size = count("batch_size");
  c.max_iterations = count("moe_max_iterations");
  c.learning_rate = real("moe_learning_rate");
  c.optimizer = vae_config(input_dim).optimizer;
  c.convergence_tol = real("convergence_tol");
  c.convergence_patience = count("convergence_patience");
  return c;
}

void RunConfig::validate() const {
  try {
    seed();
    const std::string data = text("data");
    if (data != "synthetic" && data != "idx" && data != "csv")
      throw ConfigError("data must be synthetic, idx or csv, got '" + data + "'");
    if (data == "idx" && text("train_images").empty()) throw ConfigError("data = idx needs train_images");
    if (data == "csv" && text("train_csv").empty()) throw ConfigError("data = csv needs train_csv");
    if (data == "synthetic") {
      if (count("synth_classes") < 1 || count("synth_dim") < 1) throw ConfigError("synthetic set needs classes and dim");
      if (count("synth_train") < count("synth_classes"))
        throw ConfigError("synth_train must be at least synth_classes");
      const double p = real("synth_flip");
      if (!(p >= 0.0 && p < 0.5)) throw ConfigError("synth_flip must lie in [0, 0.5)");
    }
    const std::string bin = text("binarize");
    if (bin != "auto" && bin != "true" && bin != "false") throw ConfigError("binarize must be auto, true or false");
    const double thr = real("binarize_threshold");
    if (!(thr > 0.0 && thr <= 1.0)) throw ConfigError("binarize_threshold must lie in (0, 1]");
    vae_config(1).validate();
    mixture_config().validate();
    for (const char* k : {"moe_trunk", "baseline_trunk"}) {
      const std::string v = text(k);
      if (v != "encoder" && v != "random") throw ConfigError(std::string(k) + " must be encoder or random");
    }
    if (real("moe_learning_rate") <= 0.0) throw ConfigError("moe_learning_rate must be > 0");
    if (count("moe_max_iterations") < 1) throw ConfigError("moe_max_iterations must be >= 1");
    if (count("trials") < 1) throw ConfigError("trials must be >= 1");
    if (count("recon_samples") < 1) throw ConfigError("recon_samples must be >= 1");
    count("rows");
    count("seed_labels");
    label_budget();
    const std::string split = text("eval_split");
    if (split != "train" && split != "test") throw ConfigError("eval_split must be train or test");
    if (out_dir().empty()) throw ConfigError("out_dir must not be empty");
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

json RunConfig::echo() const {
  json out = json::object();
  for (auto& [k, v] : values_.items())
    if (!kLocationKeys.contains(k)) out[k] = v;
  return out;
}

}  // namespace imvae::cli
