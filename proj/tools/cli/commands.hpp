// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "imvae/io/dataset.hpp"
#include "run_config.hpp"

namespace imvae::cli {

struct Data {
  io::Dataset train;
  std::optional<io::Dataset> test;
};

// Training and test sets described by the config (binarized when asked).
Data load_data(const RunConfig& config);

// `per_class` instances of every class, each class drawn without replacement
// from rng.fork(class). nullopt takes every labeled instance. Throws
// InvalidArgument when a class has fewer labels than requested.
std::vector<std::size_t> select_per_class(std::span<const std::size_t> labels, std::size_t n_classes,
                                          std::optional<std::size_t> per_class, const RngStream& rng);

struct CommandOptions {
  bool resume = false;
  // Stop (as if interrupted) right after the checkpoint of this sweep.
  std::optional<std::size_t> halt_after_sweep;
};

void cmd_pretrain(const RunConfig& config, std::ostream& out);
void cmd_fit_mixture(const RunConfig& config, const CommandOptions& options, std::ostream& out);
void cmd_train_semisup(const RunConfig& config, std::ostream& out);
void cmd_reconstruct(const RunConfig& config, std::ostream& out);
void cmd_export_latents(const RunConfig& config, std::ostream& out);
void cmd_eval(const RunConfig& config, std::ostream& out);

std::string base_checkpoint_path(const RunConfig& config);
std::string mixture_checkpoint_path(const RunConfig& config);

// Parses argv and runs one subcommand. Returns the process exit code:
// 0 success, 1 numerical failure, 2 usage or I/O error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace imvae::cli
