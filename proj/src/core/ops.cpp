// SPDX-License-Identifier: Apache-2.0
#include "imvae/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "imvae/core/error.hpp"
#include "imvae/core/kernels.hpp"

namespace imvae::ops {
namespace {

const kernels::Table& K() { return kernels::active(); }

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_to_string(t.shape()));
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands recorded on different tapes");
}

void accumulate(Tensor& dst, const Tensor& src) { K().axpy(src.size(), 1.0, src.ptr(), dst.ptr()); }

}  // namespace

double activation_value(double x, Activation kind) {
  switch (kind) {
    case Activation::tanh:
      return std::tanh(x);
    case Activation::softplus:
      return x > 30.0 ? x : std::log1p(std::exp(x));
    case Activation::sigmoid:
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
  }
  return x;
}

Tensor activation_forward(const Tensor& x, Activation kind) {
  Tensor out = x;
  for (auto& v : out.data()) v = activation_value(v, kind);
  return out;
}

Tensor affine_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2(x, "affine");
  require_rank2(weight, "affine");
  if (x.dim(1) != weight.dim(0) || bias.size() != weight.dim(1)) {
    throw DimensionError("affine: x " + shape_to_string(x.shape()) + " W " + shape_to_string(weight.shape()) + " b " +
                         shape_to_string(bias.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  Tensor out({m, n});
  K().gemm_nn(m, n, k, x.ptr(), weight.ptr(), out.ptr(), false);
  K().add_row(m, n, bias.ptr(), out.ptr());
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  require_rank2(logits, "softmax_rows");
  Tensor out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const double lse = log_sum_exp(row);
    for (auto& v : row) v = std::exp(v - lse);
  }
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("log_sum_exp of an empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  if (std::isinf(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: " + shape_to_string(av.shape()) + " x " + shape_to_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  K().gemm_nn(m, n, k, av.ptr(), bv.ptr(), out.ptr(), false);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib, m, n, k](const Tape& t, const Tensor& g, std::span<Tensor* const> in) {
    if (in[0]) K().gemm_nt(m, k, n, g.ptr(), t.value(ib).ptr(), in[0]->ptr(), true);
    if (in[1]) K().gemm_tn(k, n, m, t.value(ia).ptr(), g.ptr(), in[1]->ptr(), true);
  });
}

Var add_bias(Var a, Var bias) {
  require_same_tape(a, bias);
  const Tensor& av = a.value();
  require_rank2(av, "add_bias");
  if (bias.value().size() != av.dim(1)) {
    throw DimensionError("add_bias: " + shape_to_string(av.shape()) + " + " + shape_to_string(bias.value().shape()));
  }
  Tensor out = av;
  const std::size_t m = av.dim(0), n = av.dim(1);
  K().add_row(m, n, bias.value().ptr(), out.ptr());
  return a.tape->record(std::move(out), {a.id, bias.id}, [m, n](const Tape&, const Tensor& g, std::span<Tensor* const> in) {
    if (in[0]) accumulate(*in[0], g);
    if (in[1]) K().col_sum(m, n, g.ptr(), in[1]->ptr(), true);
  });
}

Var affine(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank2(xv, "affine");
  require_rank2(wv, "affine");
  if (xv.dim(1) != wv.dim(0) || bias.value().size() != wv.dim(1)) {
    throw DimensionError("affine: x " + shape_to_string(xv.shape()) + " W " + shape_to_string(wv.shape()) + " b " +
                         shape_to_string(bias.value().shape()));
  }
  return add_bias(matmul(x, weight), bias);
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.value().shape());
  K().add(out.size(), a.value().ptr(), b.value().ptr(), out.ptr());
  return a.tape->record(std::move(out), {a.id, b.id}, [](const Tape&, const Tensor& g, std::span<Tensor* const> in) {
    if (in[0]) accumulate(*in[0], g);
    if (in[1]) accumulate(*in[1], g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  K().axpy(out.size(), -1.0, b.value().ptr(), out.ptr());
  return a.tape->record(std::move(out), {a.id, b.id}, [](const Tape&, const Tensor& g, std::span<Tensor* const> in) {
    if (in[0]) accumulate(*in[0], g);
    if (in[1]) K().axpy(g.size(), -1.0, g.ptr(), in[1]->ptr());
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.value().shape());
  K().mul(out.size(), a.value().ptr(), b.value().ptr(), out.ptr());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](const Tape& t, const Tensor& g, std::span<Tensor* const> in) {
    const std::size_t n = g.size();
    for (int side = 0; side < 2; ++side) {
      if (!in[side]) continue;
      const double* other = t.value(side == 0 ? ib : ia).ptr();
      double* dst = in[side]->ptr();
      for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * other[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape->record(std::move(out), {a.id}, [s](const Tape&, const Tensor& g, std::span<Tensor* const> in) {
    K().axpy(g.size(), s, g.ptr(), in[0]->ptr());
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  return a.tape->record(std::move(out), {a.id}, [](const Tape&, const Tensor& g, std::span<Tensor* const> in) {
    accumulate(*in[0], g);
  });
}

Var activation(Var x, Activation kind) {
  Tensor out = activation_forward(x.value(), kind);
  const std::size_t ix = x.id;
  const std::size_t iy = x.tape->size();  // id the output node will get
  return x.tape->record(std::move(out), {ix}, [ix, iy, kind](const Tape& t, const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& xv = t.value(ix);
    const Tensor& yv = t.value(iy);
    double* dst = in[0]->ptr();
    const std::size_t n = g.size();
    switch (kind) {
      case Activation::tanh:
        for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * (1.0 - yv[i] * yv[i]);
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * yv[i] * (1.0 - yv[i]);
        break;
      case Activation::softplus:
        for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * activation_value(xv[i], Activation::sigmoid);
        break;
      case Activation::relu:
        for (std::size_t i = 0; i < n; ++i) dst[i] += xv[i] > 0.0 ? g[i] : 0.0;
        break;
    }
  });
}

Var exp(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::exp(v);
  const std::size_t iy = x.tape->size();
  return x.tape->record(std::move(out), {x.id}, [iy](const Tape& t, const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& y = t.value(iy);
    double* dst = in[0]->ptr();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i];
  });
}

Var square(Var x) {
  Tensor out(x.value().shape());
  K().mul(out.size(), x.value().ptr(), x.value().ptr(), out.ptr());
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix](const Tape& t, const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& xv = t.value(ix);
    double* dst = in[0]->ptr();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += 2.0 * g[i] * xv[i];
  });
}

Var batchnorm_train(Var x, Var gamma, Var beta, BatchStats* stats) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const Tensor& xv = x.value();
  require_rank2(xv, "batchnorm");
  const std::size_t m = xv.dim(0), d = xv.dim(1);
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("batchnorm: x " + shape_to_string(xv.shape()) + " gamma " +
                         shape_to_string(gamma.value().shape()) + " beta " + shape_to_string(beta.value().shape()));
  }
  if (m < 2) throw InvalidArgument("batchnorm in train mode needs a batch of at least 2 rows, got 1");

  Tensor mean({d});
  K().col_sum(m, d, xv.ptr(), mean.ptr(), false);
  for (auto& v : mean.data()) v /= static_cast<double>(m);
  Tensor var({d});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv(i, j) - mean[j];
      var[j] += c * c;
    }
  }
  for (auto& v : var.data()) v /= static_cast<double>(m);

  Tensor inv_std({d});
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + kBatchNormEpsilon);
  Tensor xhat({m, d});
  Tensor out({m, d});
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mean[j]) * inv_std[j];
      out(i, j) = gv[j] * xhat(i, j) + bv[j];
    }
  }
  if (stats) *stats = BatchStats{mean, var};

  const std::size_t ig = gamma.id;
  return x.tape->record(std::move(out), {x.id, gamma.id, beta.id},
                        [xhat = std::move(xhat), inv_std = std::move(inv_std), ig, m, d](
                            const Tape& t, const Tensor& g, std::span<Tensor* const> in) {
                          if (in[2]) K().col_sum(m, d, g.ptr(), in[2]->ptr(), true);
                          if (in[1]) {
                            double* dg = in[1]->ptr();
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < d; ++j) dg[j] += g(i, j) * xhat(i, j);
                          }
                          if (!in[0]) return;
                          const Tensor& gv = t.value(ig);
                          std::vector<double> sum_dxhat(d, 0.0), sum_dxhat_xhat(d, 0.0);
                          for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < d; ++j) {
                              const double dxh = g(i, j) * gv[j];
                              sum_dxhat[j] += dxh;
                              sum_dxhat_xhat[j] += dxh * xhat(i, j);
                            }
                          }
                          const double md = static_cast<double>(m);
                          Tensor& dx = *in[0];
                          for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < d; ++j) {
                              const double dxh = g(i, j) * gv[j];
                              dx(i, j) += inv_std[j] / md * (md * dxh - sum_dxhat[j] - xhat(i, j) * sum_dxhat_xhat[j]);
                            }
                          }
                        });
}

Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const Tensor& xv = x.value();
  require_rank2(xv, "batchnorm");
  const std::size_t m = xv.dim(0), d = xv.dim(1);
  if (gamma.value().size() != d || beta.value().size() != d || mean.size() != d || var.size() != d) {
    throw DimensionError("batchnorm: x " + shape_to_string(xv.shape()) + " gamma " +
                         shape_to_string(gamma.value().shape()) + " running stats " + shape_to_string(mean.shape()));
  }
  Tensor inv_std({d});
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + kBatchNormEpsilon);
  Tensor xhat({m, d});
  Tensor out({m, d});
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mean[j]) * inv_std[j];
      out(i, j) = gv[j] * xhat(i, j) + bv[j];
    }
  }
  const std::size_t ig = gamma.id;
  return x.tape->record(std::move(out), {x.id, gamma.id, beta.id},
                        [xhat = std::move(xhat), inv_std = std::move(inv_std), ig, m, d](
                            const Tape& t, const Tensor& g, std::span<Tensor* const> in) {
                          if (in[2]) K().col_sum(m, d, g.ptr(), in[2]->ptr(), true);
                          const Tensor& gv = t.value(ig);
                          for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < d; ++j) {
                              if (in[1]) (*in[1])[j] += g(i, j) * xhat(i, j);
                              if (in[0]) (*in[0])(i, j) += g(i, j) * gv[j] * inv_std[j];
                            }
                          }
                        });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) out[i] = K().sum(n, av.ptr() + i * n);
  return a.tape->record(std::move(out), {a.id}, [m, n](const Tape&, const Tensor& g, std::span<Tensor* const> in) {
    double* dst = in[0]->ptr();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[i * n + j] += g[i];
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::scalar(K().sum(av.size(), av.ptr()));
  return a.tape->record(std::move(out), {a.id}, [](const Tape&, const Tensor& g, std::span<Tensor* const> in) {
    const double gs = g[0];
    for (auto& v : in[0]->data()) v += gs;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var repeat_rows(Var a, std::size_t times) {
  const Tensor& av = a.value();
  if (times == 0) throw InvalidArgument("repeat_rows: times must be positive");
  std::vector<Tensor> parts(times, av);
  Tensor out = vstack(parts);
  const std::size_t block = av.size();
  return a.tape->record(std::move(out), {a.id}, [times, block](const Tape&, const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t r = 0; r < times; ++r) K().axpy(block, 1.0, g.ptr() + r * block, in[0]->ptr());
  });
}

Var mean_over_blocks(Var a, std::size_t times) {
  const Tensor& av = a.value();
  if (av.rank() != 1 || times == 0 || av.size() % times != 0) {
    throw DimensionError("mean_over_blocks: cannot split " + shape_to_string(av.shape()) + " into " +
                         std::to_string(times) + " blocks");
  }
  const std::size_t m = av.size() / times;
  Tensor out({m});
  for (std::size_t r = 0; r < times; ++r) K().axpy(m, 1.0, av.ptr() + r * m, out.ptr());
  const double inv = 1.0 / static_cast<double>(times);
  for (auto& v : out.data()) v *= inv;
  return a.tape->record(std::move(out), {a.id}, [times, m, inv](const Tape&, const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t r = 0; r < times; ++r) K().axpy(m, inv, g.ptr(), in[0]->ptr() + r * m);
  });
}

namespace {

void require_block_rows(const Tensor& x, const Tensor& p, const char* what) {
  if (x.rank() != 2 || p.rank() != 2 || x.dim(1) != p.dim(1) || p.dim(0) % x.dim(0) != 0) {
    throw DimensionError(std::string(what) + ": x " + shape_to_string(x.shape()) + " vs " + shape_to_string(p.shape()));
  }
}

}  // namespace

Var bernoulli_log_likelihood(const Tensor& x, Var p) {
  const Tensor& pv = p.value();
  require_block_rows(x, pv, "bernoulli_log_likelihood");
  const std::size_t m = x.dim(0), d = x.dim(1), rows = pv.dim(0);
  constexpr double lo = kBernoulliClamp, hi = 1.0 - kBernoulliClamp;
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + (r % m) * d;
    const double* pr = pv.ptr() + r * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double pc = std::clamp(pr[j], lo, hi);
      s += xr[j] * std::log(pc) + (1.0 - xr[j]) * std::log1p(-pc);
    }
    out[r] = s;
  }
  const std::size_t ip = p.id;
  return p.tape->record(std::move(out), {ip}, [x, ip, m, d, rows](const Tape& t, const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& pv = t.value(ip);
    double* dst = in[0]->ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.ptr() + (r % m) * d;
      const double* pr = pv.ptr() + r * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double pj = pr[j];
        if (pj < lo || pj > hi) continue;
        dst[r * d + j] += g[r] * (xr[j] / pj - (1.0 - xr[j]) / (1.0 - pj));
      }
    }
  });
}

Var gaussian_log_likelihood(const Tensor& x, Var mu, Var logvar) {
  require_same_tape(mu, logvar);
  const Tensor& mv = mu.value();
  const Tensor& lv = logvar.value();
  require_same_shape(mv, lv, "gaussian_log_likelihood");
  require_block_rows(x, mv, "gaussian_log_likelihood");
  const std::size_t m = x.dim(0), d = x.dim(1), rows = mv.dim(0);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + (r % m) * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = xr[j] - mv(r, j);
      s += -half_log_2pi - 0.5 * lv(r, j) - 0.5 * diff * diff * std::exp(-lv(r, j));
    }
    out[r] = s;
  }
  const std::size_t im = mu.id, il = logvar.id;
  return mu.tape->record(std::move(out), {im, il}, [x, im, il, m, d, rows](const Tape& t, const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& mv = t.value(im);
    const Tensor& lv = t.value(il);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.ptr() + (r % m) * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = xr[j] - mv(r, j);
        const double prec = std::exp(-lv(r, j));
        if (in[0]) (*in[0])(r, j) += g[r] * diff * prec;
        if (in[1]) (*in[1])(r, j) += g[r] * (-0.5 + 0.5 * diff * diff * prec);
      }
    }
  });
}

Var weighted_cross_entropy(Var logits, std::span<const std::size_t> labels, const Tensor& weights) {
  const Tensor& lv = logits.value();
  require_rank2(lv, "weighted_cross_entropy");
  const std::size_t m = lv.dim(0), k = lv.dim(1);
  if (labels.size() != m || weights.size() != m) {
    throw DimensionError("weighted_cross_entropy: logits " + shape_to_string(lv.shape()) + " with " +
                         std::to_string(labels.size()) + " labels and " + std::to_string(weights.size()) + " weights");
  }
  Tensor probs = softmax_rows(lv);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= k) throw InvalidArgument("label " + std::to_string(labels[i]) + " out of range for " + std::to_string(k) + " classes");
    out[i] = weights[i] * (log_sum_exp(lv.row(i)) - lv(i, labels[i]));
  }
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return logits.tape->record(std::move(out), {logits.id},
                             [probs = std::move(probs), y = std::move(y), weights, m, k](
                                 const Tape&, const Tensor& g, std::span<Tensor* const> in) {
                               Tensor& dst = *in[0];
                               for (std::size_t i = 0; i < m; ++i) {
                                 const double c = g[i] * weights[i];
                                 for (std::size_t j = 0; j < k; ++j) dst(i, j) += c * (probs(i, j) - (j == y[i] ? 1.0 : 0.0));
                               }
                             });
}

}  // namespace imvae::ops
