// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "imvae/core/tensor.hpp"

namespace imvae {

// Counter-based random stream. A draw is a pure function of
// (seed, stream_id, counter), so streams can be forked, checkpointed and
// replayed without carrying generator state beyond three integers.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  // Standard normal via Box-Muller; consumes two draws.
  double normal();
  // Unbiased integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  // Uniform random permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n);

  Tensor normal_tensor(Shape shape);

  // Independent child stream. Depends only on (seed, stream_id, tag), never on
  // how many draws this stream has made.
  RngStream fork(std::uint64_t tag) const;

  bool operator==(const RngStream&) const = default;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_;
  std::uint64_t key_;
};

// Stable 64-bit tag for a short ASCII label, used to name forked streams.
std::uint64_t stream_tag(const char* label);

}  // namespace imvae
