// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite-difference oracle for tape gradients. Independent of the
// backward pass: it only evaluates forward values.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "imvae/core/rng.hpp"
#include "imvae/core/tape.hpp"

namespace imvae::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// |a - f| / max(|a|, |f|, floor). The floor keeps entries whose true
// gradient is ~0 from dominating through roundoff in the difference quotient.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss` builds a scalar on the given tape from the parameters.
inline GradCheckResult check_gradients(std::vector<Parameter*> params, const std::function<Var(Tape&)>& loss,
                                       double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }
  std::vector<Tensor> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  auto eval = [&] {
    Tape tape(GradMode::disabled);
    return loss(tape).value().item();
  };
  GradCheckResult r;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& v = params[k]->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double fp = eval();
      v[i] = orig - h;
      const double fm = eval();
      v[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[k][i], numeric));
      ++r.checked;
    }
  }
  return r;
}

inline Tensor random_tensor(RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

}  // namespace imvae::testing
