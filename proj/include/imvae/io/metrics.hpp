// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "imvae/core/error.hpp"
#include "json.hpp"

namespace imvae::io {

// One row of the metrics stream. Unset optionals are written as empty cells.
struct MetricsRecord {
  std::string run_id;
  std::string phase;
  std::optional<std::int64_t> sweep_or_epoch;
  std::optional<std::int64_t> component_count;
  std::optional<double> elbo;
  std::optional<double> recon_error;
  std::optional<double> kl;
  std::optional<double> error_rate;
  std::optional<double> wall_ms;
};

inline constexpr const char* kMetricsHeader =
    "run_id,phase,sweep_or_epoch,component_count,elbo,recon_error,kl,error_rate,wall_ms";

class MetricsSchemaError : public IoError {
 public:
  using IoError::IoError;
};

// Append-only CSV writer. A new (or empty) file starts with a `# config:`
// echo line and the header; an existing file must already carry the header
// and is appended to without repeating it. Floats use 9 significant digits.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, const nlohmann::json& config_echo);
  void emit(const MetricsRecord& record);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

std::string format_metrics_row(const MetricsRecord& record);

}  // namespace imvae::io
