// SPDX-License-Identifier: Apache-2.0
#include "imvae/io/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

namespace imvae::io {

namespace {

void check_text_field(const std::string& value, const char* what) {
  if (value.empty()) throw MetricsSchemaError(std::string("metrics field ") + what + " is empty");
  if (value.find_first_of(",\n\r\"") != std::string::npos)
    throw MetricsSchemaError(std::string("metrics field ") + what + " contains a separator: '" + value + "'");
}

void append_float(std::string& out, const std::optional<double>& v, const char* what) {
  out += ',';
  if (!v) return;
  if (!std::isfinite(*v)) throw MetricsSchemaError(std::string("metrics field ") + what + " is not finite");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", *v);
  out += buf;
}

void append_int(std::string& out, const std::optional<std::int64_t>& v) {
  out += ',';
  if (v) out += std::to_string(*v);
}

}  // namespace

std::string format_metrics_row(const MetricsRecord& r) {
  check_text_field(r.run_id, "run_id");
  check_text_field(r.phase, "phase");
  std::string out = r.run_id + ',' + r.phase;
  append_int(out, r.sweep_or_epoch);
  append_int(out, r.component_count);
  append_float(out, r.elbo, "elbo");
  append_float(out, r.recon_error, "recon_error");
  append_float(out, r.kl, "kl");
  append_float(out, r.error_rate, "error_rate");
  append_float(out, r.wall_ms, "wall_ms");
  return out;
}

MetricsWriter::MetricsWriter(const std::string& path, const nlohmann::json& config_echo) : path_(path) {
  bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (!fresh) {
    std::ifstream in(path);
    std::string line;
    bool found = false;
    while (std::getline(in, line)) {
      if (!line.empty() && line[0] == '#') continue;
      found = line == kMetricsHeader;
      break;
    }
    if (!found) throw MetricsSchemaError(path + " exists but does not carry the metrics header");
  }
  out_.open(path, std::ios::app);
  if (!out_) throw IoError("cannot open metrics file " + path);
  if (fresh) out_ << "# config: " << config_echo.dump() << '\n' << kMetricsHeader << '\n' << std::flush;
}

void MetricsWriter::emit(const MetricsRecord& record) {
  std::string row = format_metrics_row(record);
  out_ << row << '\n' << std::flush;
  if (!out_) throw IoError("write failed for " + path_);
}

}  // namespace imvae::io
