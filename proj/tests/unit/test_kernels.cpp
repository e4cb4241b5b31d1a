// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "imvae/core/kernels.hpp"
#include "imvae/core/rng.hpp"

using namespace imvae;

namespace {

std::vector<double> random_vec(RngStream& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol = 1e-12) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol * (1.0 + std::abs(a[i])));
}

}  // namespace

TEST_CASE("scalar table is always available") {
  CHECK(std::string(kernels::scalar_table().name) == "scalar");
  CHECK(kernels::active().name != nullptr);
}

TEST_CASE("avx2 kernels match the scalar reference") {
  const kernels::Table* simd = kernels::avx2_table();
  if (!simd) {
    MESSAGE("AVX2 not available; equivalence skipped");
    return;
  }
  const auto& ref = kernels::scalar_table();
  RngStream rng(7, 1);
  for (std::size_t m : {1u, 3u, 8u}) {
    for (std::size_t n : {1u, 4u, 5u, 13u}) {
      for (std::size_t k : {1u, 7u, 9u, 16u}) {
        const auto a = random_vec(rng, m * k), b = random_vec(rng, k * n), bt = random_vec(rng, n * k);
        const auto at = random_vec(rng, k * m);
        for (bool acc : {false, true}) {
          auto c0 = random_vec(rng, m * n);
          auto c1 = c0;
          ref.gemm_nn(m, n, k, a.data(), b.data(), c0.data(), acc);
          simd->gemm_nn(m, n, k, a.data(), b.data(), c1.data(), acc);
          expect_close(c0, c1);
          c1 = c0;
          ref.gemm_tn(m, n, k, at.data(), b.data(), c0.data(), acc);
          simd->gemm_tn(m, n, k, at.data(), b.data(), c1.data(), acc);
          expect_close(c0, c1);
          c1 = c0;
          ref.gemm_nt(m, n, k, a.data(), bt.data(), c0.data(), acc);
          simd->gemm_nt(m, n, k, a.data(), bt.data(), c1.data(), acc);
          expect_close(c0, c1);
        }
      }
    }
  }
  for (std::size_t n : {1u, 3u, 4u, 8u, 17u, 100u}) {
    const auto x = random_vec(rng, n), y = random_vec(rng, n);
    CHECK(ref.dot(n, x.data(), y.data()) == doctest::Approx(simd->dot(n, x.data(), y.data())).epsilon(1e-12));
    CHECK(ref.sum(n, x.data()) == doctest::Approx(simd->sum(n, x.data())).epsilon(1e-12));

    std::vector<double> o0(n), o1(n);
    ref.add(n, x.data(), y.data(), o0.data());
    simd->add(n, x.data(), y.data(), o1.data());
    expect_close(o0, o1);
    ref.mul(n, x.data(), y.data(), o0.data());
    simd->mul(n, x.data(), y.data(), o1.data());
    expect_close(o0, o1);
    o0 = y;
    o1 = y;
    ref.axpy(n, 0.37, x.data(), o0.data());
    simd->axpy(n, 0.37, x.data(), o1.data());
    expect_close(o0, o1);

    const std::size_t rows = 3;
    auto mat = random_vec(rng, rows * n);
    auto m0 = mat, m1 = mat;
    ref.add_row(rows, n, x.data(), m0.data());
    simd->add_row(rows, n, x.data(), m1.data());
    expect_close(m0, m1);
    ref.col_sum(rows, n, mat.data(), o0.data(), false);
    simd->col_sum(rows, n, mat.data(), o1.data(), false);
    expect_close(o0, o1);

    auto p0 = random_vec(rng, n), g = random_vec(rng, n);
    auto mm0 = random_vec(rng, n), vv0 = random_vec(rng, n);
    for (auto& v : vv0) v = std::abs(v);
    auto p1 = p0, mm1 = mm0, vv1 = vv0;
    ref.adam(n, p0.data(), g.data(), mm0.data(), vv0.data(), 0.9, 0.999, 0.01, 1000.0, 1e-8);
    simd->adam(n, p1.data(), g.data(), mm1.data(), vv1.data(), 0.9, 0.999, 0.01, 1000.0, 1e-8);
    expect_close(p0, p1);
    expect_close(mm0, mm1);
    expect_close(vv0, vv1);
  }
}

TEST_CASE("kernel selection by name") {
  const std::string before = kernels::active().name;
  CHECK(kernels::select("scalar"));
  CHECK(std::string(kernels::active().name) == "scalar");
  CHECK_FALSE(kernels::select("neon-does-not-exist"));
  kernels::select(before);
  CHECK(std::string(kernels::active().name) == before);
}
