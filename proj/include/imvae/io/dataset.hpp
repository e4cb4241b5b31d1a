// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "imvae/core/error.hpp"
#include "imvae/core/rng.hpp"
#include "imvae/core/tensor.hpp"

namespace imvae::io {

// Instances as rows of a [n, d] tensor with optional class labels.
struct Dataset {
  Tensor instances;
  std::vector<std::size_t> labels;  // empty when unlabeled
  std::size_t n_classes = 0;        // 0 when unlabeled
  std::string provenance;

  std::size_t size() const { return instances.rows(); }
  std::size_t dim() const { return instances.cols(); }
  bool has_labels() const { return !labels.empty(); }

  // Throws InvalidArgument when labels are inconsistent with n_classes.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;
};

// IDX parsing failures. Each condition has its own type.
class IdxError : public IoError {
 public:
  using IoError::IoError;
};
class IdxWrongMagic : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxTruncated : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxCountMismatch : public IdxError {
 public:
  using IdxError::IdxError;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Big-endian IDX image file (uint8, 3-D) with an optional label file.
// Images are flattened to rows and scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path = {});

// Numeric CSV, one instance per row. A non-numeric first line is treated as
// a header. With `label_last` the final column holds integer class labels.
Dataset load_csv(const std::string& path, bool label_last);

// v >= threshold -> 1 else 0. threshold must lie in (0, 1] and values in [0, 1].
Dataset binarize(const Dataset& data, double threshold = 0.5);

struct SynthSpec {
  std::vector<std::vector<double>> prototypes;  // K binary patterns of equal length
  std::vector<std::size_t> counts;              // instances per prototype
  double flip_rate = 0.0;                       // in [0, 0.5)
};

// K random binary prototypes of length d, each bit fair.
std::vector<std::vector<double>> random_prototypes(std::size_t k, std::size_t d, RngStream& rng);

// Each instance is its prototype with i.i.d. bit flips; label = prototype index.
// Rows are grouped by class in prototype order.
Dataset synth_patterns(const SynthSpec& spec, RngStream& rng);

// Batches of row indices for one epoch: a fresh permutation keyed by
// (rng seed/stream, epoch), final short batch included.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, const RngStream& rng,
                                                 std::size_t epoch);

}  // namespace imvae::io
