// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <functional>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "imvae/core/error.hpp"

namespace imvae::cli {

namespace {

constexpr const char* kOutDirEnv = "IMVAE_OUT_DIR";

struct CommonFlags {
  std::string config_path;
  std::optional<std::int64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::int64_t> trials;
  std::optional<std::string> label_budget;
  std::vector<std::string> overrides;
  bool timing = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config_path, "key = value config file");
  sub->add_option("--seed", f.seed, "master seed");
  sub->add_option("--out-dir", f.out_dir, std::string("output directory (default from ") + kOutDirEnv + ")");
  sub->add_option("--trials", f.trials, "semi-supervised trials");
  sub->add_option("--label-budget", f.label_budget, "labels per class, or 'all'");
  sub->add_option("--set", f.overrides, "override a config key: key=value")->take_all();
  sub->add_flag("--timing", f.timing, "record wall_ms in metrics");
}

RunConfig build_config(const CommonFlags& f) {
  RunConfig c;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) c.set("out_dir", env);
  if (!f.config_path.empty()) c.load_file(f.config_path);
  for (const std::string& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) c.set("seed", std::to_string(*f.seed));
  if (f.out_dir) c.set("out_dir", *f.out_dir);
  if (f.trials) c.set("trials", std::to_string(*f.trials));
  if (f.label_budget) c.set("label_budget", *f.label_budget);
  if (f.timing) c.set("timing", "true");
  c.validate();
  return c;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dirichlet-process mixture of VAEs and a responsibility-gated classifier"};
  app.require_subcommand(1);
  CommonFlags flags;
  CommandOptions options;
  std::size_t halt_after = 0;
  std::function<void(const RunConfig&)> action;

  auto sub = [&](const char* name, const char* help, std::function<void(const RunConfig&)> fn) {
    CLI::App* s = app.add_subcommand(name, help);
    add_common(s, flags);
    s->callback([&action, fn] { action = fn; });
    return s;
  };
  sub("pretrain", "train the base VAE on every training instance",
      [&](const RunConfig& c) { cmd_pretrain(c, out); });
  CLI::App* fit = sub("fit-mixture", "fit the mixture by blocked Gibbs sweeps from the base checkpoint",
                      [&](const RunConfig& c) { cmd_fit_mixture(c, options, out); });
  fit->add_flag("--resume", options.resume, "continue from the mixture checkpoint");
  fit->add_option("--halt-after-sweep", halt_after, "stop after checkpointing this sweep")->group("");
  sub("train-semisup", "train the gated classifier and the single-softmax baseline",
      [&](const RunConfig& c) { cmd_train_semisup(c, out); });
  sub("reconstruct", "write expected reconstructions and their L2 errors",
      [&](const RunConfig& c) { cmd_reconstruct(c, out); });
  sub("export-latents", "write per-component latent statistics",
      [&](const RunConfig& c) { cmd_export_latents(c, out); });
  sub("eval", "compare mixture and base: reconstruction error and linear probe",
      [&](const RunConfig& c) { cmd_eval(c, out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }
  if (halt_after > 0) options.halt_after_sweep = halt_after;

  try {
    action(build_config(flags));
    return 0;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace imvae::cli
