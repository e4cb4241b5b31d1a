// SPDX-License-Identifier: Apache-2.0
#include "imvae/core/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

namespace imvae::kernels {

#if defined(IMVAE_HAVE_AVX2)
const Table* avx2_table_impl();
#endif

const Table* avx2_table() {
#if defined(IMVAE_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const Table* detect() {
  if (const char* env = std::getenv("IMVAE_KERNELS")) {
    const std::string_view want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && avx2_table()) return avx2_table();
  }
  if (const Table* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const Table*>& slot() {
  static std::atomic<const Table*> current{detect()};
  return current;
}

}  // namespace

const Table& active() { return *slot().load(std::memory_order_acquire); }

bool select(std::string_view name) {
  if (name == "scalar") {
    slot().store(&scalar_table(), std::memory_order_release);
    return true;
  }
  if (name == "avx2" && avx2_table()) {
    slot().store(avx2_table(), std::memory_order_release);
    return true;
  }
  return false;
}

}  // namespace imvae::kernels
