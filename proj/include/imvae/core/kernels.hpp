// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel inner loops used by the tensor ops and optimizers.
//
// Every kernel has a portable scalar reference implementation. On x86-64 an
// AVX2+FMA variant is compiled in a separate translation unit and selected at
// runtime when the CPU supports it. Setting IMVAE_KERNELS=scalar in the
// environment pins the reference path. The two variants agree to rounding
// (see tests/unit/test_kernels.cpp); a given variant is bitwise deterministic.

#include <cstddef>
#include <string_view>

namespace imvae::kernels {

struct Table {
  const char* name;

  // C[m,n] (+)= A[m,k] * B[k,n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  // C[m,n] (+)= A[k,m]^T * B[k,n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  // C[m,n] (+)= A[m,k] * B[n,k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);

  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  // out = x + y, out = x * y (out may alias x or y)
  void (*add)(std::size_t n, const double* x, const double* y, double* out);
  void (*mul)(std::size_t n, const double* x, const double* y, double* out);
  double (*dot)(std::size_t n, const double* x, const double* y);
  double (*sum)(std::size_t n, const double* x);

  // Row-broadcast bias add: a[i,:] += bias for each of m rows of width n.
  void (*add_row)(std::size_t m, std::size_t n, const double* bias, double* a);
  // out[j] (+)= sum_i a[i,j]
  void (*col_sum)(std::size_t m, std::size_t n, const double* a, double* out, bool accumulate);

  // Bias-corrected Adam update over n entries. step_size already includes the
  // sign and the first-moment bias correction; v_scale is 1/(1 - beta2^t).
  void (*adam)(std::size_t n, double* param, const double* grad, double* m, double* v,
               double beta1, double beta2, double step_size, double v_scale, double epsilon);
};

const Table& scalar_table();

// AVX2+FMA table, or nullptr when not compiled in or not supported by the CPU.
const Table* avx2_table();

// Table chosen at first use: IMVAE_KERNELS=scalar|avx2 overrides detection.
const Table& active();

// Pins the active table by name ("scalar" or "avx2"); returns false when the
// requested variant is unavailable. Intended for tests and benchmarks.
bool select(std::string_view name);

}  // namespace imvae::kernels
