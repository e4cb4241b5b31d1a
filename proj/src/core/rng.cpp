// SPDX-License-Identifier: Apache-2.0
#include "imvae/core/rng.hpp"

#include <cmath>
#include <numbers>

#include "imvae/core/error.hpp"

namespace imvae {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter)
    : seed_(seed), stream_id_(stream_id), counter_(counter),
      key_(mix64(seed ^ mix64(stream_id + kGolden)) | 1ULL) {}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t x = key_ * (counter_ + 1) + kGolden * counter_;
  ++counter_;
  return mix64(mix64(x) ^ key_);
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::normal() {
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RngStream::uniform_index(std::size_t n) {
  if (n == 0) throw InvalidArgument("uniform_index over an empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

std::vector<std::size_t> RngStream::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

Tensor RngStream::normal_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = normal();
  return t;
}

RngStream RngStream::fork(std::uint64_t tag) const {
  return RngStream(seed_, mix64(stream_id_ * kGolden + mix64(tag ^ 0xD1B54A32D192ED03ULL)));
}

std::uint64_t stream_tag(const char* label) {
  // FNV-1a
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char* p = label; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace imvae
