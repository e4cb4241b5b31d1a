// SPDX-License-Identifier: Apache-2.0
#pragma once

// Versioned checkpoint container.
//
//   line 1   IMVAE-CHECKPOINT
//   line 2   JSON header: format_version, config echo, free-form meta and a
//            tensor manifest (name, shape, offset, bytes, crc32)
//   rest     raw little-endian float64 payload, tensors back to back
//
// The loader validates the manifest against the payload length before
// reading any tensor, then verifies each tensor's CRC32.

#include <cstdint>
#include <string>
#include <vector>

#include "imvae/core/error.hpp"
#include "imvae/core/tensor.hpp"
#include "json.hpp"

namespace imvae::io {

inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointManifestError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  void put(const std::string& name, const Tensor& value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  // Copies the stored tensor into `dst`, which must already have its shape.
  void read_into(const std::string& name, Tensor& dst) const;
};

std::uint32_t crc32_of(const Tensor& t);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace imvae::io
