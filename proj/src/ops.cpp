// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fairkd/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <string>

namespace fairkd {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

// c[m, n] += op(a) * op(b). a is [m, k] (or [k, m] when ta), b is [k, n]
// (or [n, k] when tb). Eigen's single-threaded GEMM is deterministic for a
// fixed problem size.
template <typename T>
void gemm_acc(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
              const T* b, T* c) {
  using Eigen::Index;
  const auto M = static_cast<Index>(m), N = static_cast<Index>(n), K = static_cast<Index>(k);
  MutMap<T> C(c, M, N);
  if (!ta && !tb) {
    C.noalias() += ConstMap<T>(a, M, K) * ConstMap<T>(b, K, N);
  } else if (!ta && tb) {
    C.noalias() += ConstMap<T>(a, M, K) * ConstMap<T>(b, N, K).transpose();
  } else if (ta && !tb) {
    C.noalias() += ConstMap<T>(a, K, M).transpose() * ConstMap<T>(b, K, N);
  } else {
    C.noalias() += ConstMap<T>(a, K, M).transpose() * ConstMap<T>(b, N, K).transpose();
  }
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

std::size_t last_extent(const char* op, const Shape& s) {
  if (s.empty()) throw ShapeError(std::string(op) + ": expected rank >= 1, got a scalar");
  return s.back();
}

template <typename T>
void check_finite_or_neg_inf(const char* op, std::span<const T> v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T x = v[i];
    if (std::isnan(x) || (std::isinf(x) && x > 0)) {
      throw ValueError(std::string(op) + ": non-finite input at flat index " + std::to_string(i));
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sb.size() != 2 || sa.back() != sb[0]) {
    throw ShapeError("matmul: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  }
  const std::size_t k = sa.back(), n = sb[1], m = a.size() / k;
  Shape out_shape = sa;
  out_shape.back() = n;
  std::vector<T> out(m * n, T(0));
  gemm_acc(false, false, m, n, k, a.values().data(), b.values().data(), out.data());
  return Tensor<T>::from_op("matmul", std::move(out_shape), std::move(out), {a, b},
                            [m, n, k](const BackwardContext<T>& ctx) {
                              const T* g = ctx.grad().data();
                              if (ctx.wants(0)) {
                                gemm_acc(false, true, m, k, n, g, ctx.input(1).data(),
                                         ctx.input_grad(0).data());
                              }
                              if (ctx.wants(1)) {
                                gemm_acc(true, false, k, n, m, ctx.input(0).data(), g,
                                         ctx.input_grad(1).data());
                              }
                            });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sb.size() != 2 || sa.back() != sb[1]) {
    throw ShapeError("matmul_nt: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  }
  const std::size_t k = sa.back(), n = sb[0], m = a.size() / k;
  Shape out_shape = sa;
  out_shape.back() = n;
  std::vector<T> out(m * n, T(0));
  gemm_acc(false, true, m, n, k, a.values().data(), b.values().data(), out.data());
  return Tensor<T>::from_op("matmul_nt", std::move(out_shape), std::move(out), {a, b},
                            [m, n, k](const BackwardContext<T>& ctx) {
                              const T* g = ctx.grad().data();
                              if (ctx.wants(0)) {
                                gemm_acc(false, false, m, k, n, g, ctx.input(1).data(),
                                         ctx.input_grad(0).data());
                              }
                              if (ctx.wants(1)) {
                                gemm_acc(true, false, n, k, m, g, ctx.input(0).data(),
                                         ctx.input_grad(1).data());
                              }
                            });
}

namespace {

struct BatchDims {
  std::size_t batch, m, k, n;
};

BatchDims batch_dims(const char* op, const Shape& sa, const Shape& sb, bool b_transposed) {
  if (sa.size() < 3 || sa.size() != sb.size() ||
      !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(sa) + " and " +
                     to_string(sb));
  }
  BatchDims d{};
  d.batch = 1;
  for (std::size_t i = 0; i + 2 < sa.size(); ++i) d.batch *= sa[i];
  d.m = sa[sa.size() - 2];
  d.k = sa.back();
  const std::size_t b_inner = b_transposed ? sb.back() : sb[sb.size() - 2];
  d.n = b_transposed ? sb[sb.size() - 2] : sb.back();
  if (b_inner != d.k) {
    throw ShapeError(std::string(op) + ": inner extents differ in " + to_string(sa) + " and " +
                     to_string(sb));
  }
  return d;
}

}  // namespace

template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const BatchDims d = batch_dims("batched_matmul", a.shape(), b.shape(), false);
  Shape out_shape = a.shape();
  out_shape.back() = d.n;
  std::vector<T> out(d.batch * d.m * d.n, T(0));
  const T* pa = a.values().data();
  const T* pb = b.values().data();
  for (std::size_t i = 0; i < d.batch; ++i) {
    gemm_acc(false, false, d.m, d.n, d.k, pa + i * d.m * d.k, pb + i * d.k * d.n,
             out.data() + i * d.m * d.n);
  }
  return Tensor<T>::from_op(
      "batched_matmul", std::move(out_shape), std::move(out), {a, b},
      [d](const BackwardContext<T>& ctx) {
        const T* g = ctx.grad().data();
        const T* pa = ctx.input(0).data();
        const T* pb = ctx.input(1).data();
        const bool wa = ctx.wants(0), wb = ctx.wants(1);
        T* ga = wa ? ctx.input_grad(0).data() : nullptr;
        T* gb = wb ? ctx.input_grad(1).data() : nullptr;
        for (std::size_t i = 0; i < d.batch; ++i) {
          const T* gi = g + i * d.m * d.n;
          if (wa) gemm_acc(false, true, d.m, d.k, d.n, gi, pb + i * d.k * d.n, ga + i * d.m * d.k);
          if (wb) gemm_acc(true, false, d.k, d.n, d.m, pa + i * d.m * d.k, gi, gb + i * d.k * d.n);
        }
      });
}

template <typename T>
Tensor<T> batched_matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  const BatchDims d = batch_dims("batched_matmul_nt", a.shape(), b.shape(), true);
  Shape out_shape = a.shape();
  out_shape.back() = d.n;
  std::vector<T> out(d.batch * d.m * d.n, T(0));
  const T* pa = a.values().data();
  const T* pb = b.values().data();
  for (std::size_t i = 0; i < d.batch; ++i) {
    gemm_acc(false, true, d.m, d.n, d.k, pa + i * d.m * d.k, pb + i * d.n * d.k,
             out.data() + i * d.m * d.n);
  }
  return Tensor<T>::from_op(
      "batched_matmul_nt", std::move(out_shape), std::move(out), {a, b},
      [d](const BackwardContext<T>& ctx) {
        const T* g = ctx.grad().data();
        const T* pa = ctx.input(0).data();
        const T* pb = ctx.input(1).data();
        const bool wa = ctx.wants(0), wb = ctx.wants(1);
        T* ga = wa ? ctx.input_grad(0).data() : nullptr;
        T* gb = wb ? ctx.input_grad(1).data() : nullptr;
        for (std::size_t i = 0; i < d.batch; ++i) {
          const T* gi = g + i * d.m * d.n;
          if (wa) gemm_acc(false, false, d.m, d.k, d.n, gi, pb + i * d.n * d.k, ga + i * d.m * d.k);
          if (wb) gemm_acc(true, false, d.n, d.k, d.m, gi, pa + i * d.m * d.k, gb + i * d.n * d.k);
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  auto va = a.values();
  auto vb = b.values();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return Tensor<T>::from_op("add", a.shape(), std::move(out), {a, b},
                            [](const BackwardContext<T>& ctx) {
                              auto g = ctx.grad();
                              for (std::size_t in = 0; in < 2; ++in) {
                                if (!ctx.wants(in)) continue;
                                auto gi = ctx.input_grad(in);
                                for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                              }
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  auto va = a.values();
  auto vb = b.values();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  return Tensor<T>::from_op("sub", a.shape(), std::move(out), {a, b},
                            [](const BackwardContext<T>& ctx) {
                              auto g = ctx.grad();
                              if (ctx.wants(0)) {
                                auto ga = ctx.input_grad(0);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                              }
                              if (ctx.wants(1)) {
                                auto gb = ctx.input_grad(1);
                                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                              }
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  auto va = a.values();
  auto vb = b.values();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return Tensor<T>::from_op("mul", a.shape(), std::move(out), {a, b},
                            [](const BackwardContext<T>& ctx) {
                              auto g = ctx.grad();
                              auto va = ctx.input(0);
                              auto vb = ctx.input(1);
                              if (ctx.wants(0)) {
                                auto ga = ctx.input_grad(0);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
                              }
                              if (ctx.wants(1)) {
                                auto gb = ctx.input_grad(1);
                                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto va = a.values();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * factor;
  return Tensor<T>::from_op("scale", a.shape(), std::move(out), {a},
                            [factor](const BackwardContext<T>& ctx) {
                              auto g = ctx.grad();
                              auto ga = ctx.input_grad(0);
                              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                            });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = last_extent("add_bias", x.shape());
  if (bias.rank() != 1 || bias.extent(0) != n) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match rows of " +
                     to_string(x.shape()));
  }
  auto vx = x.values();
  auto vb = bias.values();
  std::vector<T> out(vx.size());
  for (std::size_t o = 0; o < out.size(); o += n) {
    for (std::size_t j = 0; j < n; ++j) out[o + j] = vx[o + j] + vb[j];
  }
  return Tensor<T>::from_op("add_bias", x.shape(), std::move(out), {x, bias},
                            [n](const BackwardContext<T>& ctx) {
                              auto g = ctx.grad();
                              if (ctx.wants(0)) {
                                auto gx = ctx.input_grad(0);
                                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                              }
                              if (ctx.wants(1)) {
                                auto gb = ctx.input_grad(1);
                                for (std::size_t o = 0; o < g.size(); o += n) {
                                  for (std::size_t j = 0; j < n; ++j) gb[j] += g[o + j];
                                }
                              }
                            });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += static_cast<double>(v);
  return Tensor<T>::from_op("sum", {}, {static_cast<T>(acc)}, {x},
                            [](const BackwardContext<T>& ctx) {
                              const T g = ctx.grad()[0];
                              for (T& v : ctx.input_grad(0)) v += g;
                            });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const std::size_t n = x.size();
  double acc = 0.0;
  for (T v : x.values()) acc += static_cast<double>(v);
  return Tensor<T>::from_op("mean", {}, {static_cast<T>(acc / static_cast<double>(n))}, {x},
                            [n](const BackwardContext<T>& ctx) {
                              const T g = ctx.grad()[0] / static_cast<T>(n);
                              for (T& v : ctx.input_grad(0)) v += g;
                            });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  auto v = x.values();
  return Tensor<T>::from_op("reshape", std::move(shape), std::vector<T>(v.begin(), v.end()), {x},
                            [](const BackwardContext<T>& ctx) {
                              auto g = ctx.grad();
                              auto gx = ctx.input_grad(0);
                              for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                            });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t n = last_extent("softmax_rows", x.shape());
  auto v = x.values();
  check_finite_or_neg_inf<T>("softmax_rows", v);
  const std::size_t rows = v.size() / n;
  std::vector<T> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = v.data() + r * n;
    T* yi = out.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xi[j]);
    if (std::isinf(mx)) {
      throw ValueError("softmax_rows: row " + std::to_string(r) + " has no finite entry");
    }
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      yi[j] = std::isinf(xi[j]) ? T(0) : std::exp(xi[j] - mx);
      total += yi[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < n; ++j) yi[j] *= inv;
  }
  return Tensor<T>::from_op("softmax_rows", x.shape(), std::move(out), {x},
                            [n, rows](const BackwardContext<T>& ctx) {
                              auto y = ctx.value();
                              auto g = ctx.grad();
                              auto gx = ctx.input_grad(0);
                              for (std::size_t r = 0; r < rows; ++r) {
                                const std::size_t o = r * n;
                                T dot = 0;
                                for (std::size_t j = 0; j < n; ++j) dot += y[o + j] * g[o + j];
                                for (std::size_t j = 0; j < n; ++j) {
                                  gx[o + j] += y[o + j] * (g[o + j] - dot);
                                }
                              }
                            });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t d = last_extent("layer_norm", x.shape());
  if (gain.rank() != 1 || gain.extent(0) != d || bias.rank() != 1 || bias.extent(0) != d) {
    throw ShapeError("layer_norm: gain " + to_string(gain.shape()) + " / bias " +
                     to_string(bias.shape()) + " do not match rows of " + to_string(x.shape()));
  }
  if (!(eps > 0)) throw ValueError("layer_norm: eps must be positive");
  auto v = x.values();
  auto vg = gain.values();
  auto vb = bias.values();
  const std::size_t rows = v.size() / d;
  std::vector<T> out(v.size()), xhat(v.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = v.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xi[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[r] = static_cast<T>(rs);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = static_cast<T>((xi[j] - mu) * rs);
      xhat[r * d + j] = h;
      out[r * d + j] = vg[j] * h + vb[j];
    }
  }
  return Tensor<T>::from_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](const BackwardContext<T>& ctx) {
        auto g = ctx.grad();
        auto vg = ctx.input(1);
        if (ctx.wants(0)) {
          auto gx = ctx.input_grad(0);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * d;
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = static_cast<double>(g[o + j]) * vg[j];
              m1 += dh;
              m2 += dh * xhat[o + j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = static_cast<double>(g[o + j]) * vg[j];
              gx[o + j] += static_cast<T>(rstd[r] * (dh - m1 - xhat[o + j] * m2));
            }
          }
        }
        if (ctx.wants(1)) {
          auto gg = ctx.input_grad(1);
          for (std::size_t o = 0; o < g.size(); o += d) {
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[o + j] * xhat[o + j];
          }
        }
        if (ctx.wants(2)) {
          auto gb = ctx.input_grad(2);
          for (std::size_t o = 0; o < g.size(); o += d) {
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[o + j];
          }
        }
      });
}

namespace {

// sqrt(2 / pi) and the cubic coefficient of the tanh GELU approximation.
constexpr double kGeluScale = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  auto v = x.values();
  std::vector<T> out(v.size()), th(v.size());
  const T c0 = static_cast<T>(kGeluScale), c1 = static_cast<T>(kGeluCubic);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T z = v[i];
    th[i] = std::tanh(c0 * (z + c1 * z * z * z));
    out[i] = T(0.5) * z * (T(1) + th[i]);
  }
  return Tensor<T>::from_op("gelu", x.shape(), std::move(out), {x},
                            [c0, c1, th = std::move(th)](const BackwardContext<T>& ctx) {
                              auto v = ctx.input(0);
                              auto g = ctx.grad();
                              auto gx = ctx.input_grad(0);
                              for (std::size_t i = 0; i < v.size(); ++i) {
                                const T z = v[i];
                                const T dz = T(0.5) * (T(1) + th[i]) +
                                             T(0.5) * z * (T(1) - th[i] * th[i]) * c0 *
                                                 (T(1) + T(3) * c1 * z * z);
                                gx[i] += g[i] * dz;
                              }
                            });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids, Shape index_shape) {
  if (table.rank() != 2) {
    throw ShapeError("embedding: table must be rank 2, got " + to_string(table.shape()));
  }
  if (numel(index_shape) != ids.size()) {
    throw ShapeError("embedding: index shape " + to_string(index_shape) + " does not hold " +
                     std::to_string(ids.size()) + " ids");
  }
  const std::size_t vocab = table.extent(0), d = table.extent(1);
  auto vt = table.values();
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ValueError("embedding: token id " + std::to_string(ids[i]) + " at position " +
                       std::to_string(i) + " is outside [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(vt.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Shape out_shape = std::move(index_shape);
  out_shape.push_back(d);
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return Tensor<T>::from_op("embedding", std::move(out_shape), std::move(out), {table},
                            [d, idx = std::move(idx)](const BackwardContext<T>& ctx) {
                              auto g = ctx.grad();
                              auto gt = ctx.input_grad(0);
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                T* row = gt.data() + static_cast<std::size_t>(idx[i]) * d;
                                const T* gi = g.data() + i * d;
                                for (std::size_t j = 0; j < d; ++j) row[j] += gi[j];
                              }
                            });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  const std::size_t d = last_extent("gather_rows", x.shape());
  const std::size_t n = x.size() / d;
  if (rows.empty()) throw ValueError("gather_rows: empty row selection");
  auto v = x.values();
  std::vector<T> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       to_string(x.shape()));
    }
    std::copy_n(v.data() + rows[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> sel(rows.begin(), rows.end());
  return Tensor<T>::from_op("gather_rows", {rows.size(), d}, std::move(out), {x},
                            [d, sel = std::move(sel)](const BackwardContext<T>& ctx) {
                              auto g = ctx.grad();
                              auto gx = ctx.input_grad(0);
                              for (std::size_t i = 0; i < sel.size(); ++i) {
                                for (std::size_t j = 0; j < d; ++j) {
                                  gx[sel[i] * d + j] += g[i * d + j];
                                }
                              }
                            });
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.extent(2) % heads != 0) {
    throw ShapeError("split_heads: cannot split " + to_string(x.shape()) + " into " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t B = x.extent(0), s = x.extent(1), d = x.extent(2), dk = d / heads;
  auto v = x.values();
  std::vector<T> out(v.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t a = 0; a < heads; ++a)
        std::copy_n(v.data() + (b * s + t) * d + a * dk, dk,
                    out.data() + ((b * heads + a) * s + t) * dk);
  return Tensor<T>::from_op(
      "split_heads", {B, heads, s, dk}, std::move(out), {x},
      [B, s, d, dk, heads](const BackwardContext<T>& ctx) {
        auto g = ctx.grad();
        auto gx = ctx.input_grad(0);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < s; ++t)
            for (std::size_t a = 0; a < heads; ++a) {
              const T* src = g.data() + ((b * heads + a) * s + t) * dk;
              T* dst = gx.data() + (b * s + t) * d + a * dk;
              for (std::size_t j = 0; j < dk; ++j) dst[j] += src[j];
            }
      });
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("merge_heads: expected rank 4, got " + to_string(x.shape()));
  const std::size_t B = x.extent(0), A = x.extent(1), s = x.extent(2), dk = x.extent(3);
  const std::size_t d = A * dk;
  auto v = x.values();
  std::vector<T> out(v.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t t = 0; t < s; ++t)
        std::copy_n(v.data() + ((b * A + a) * s + t) * dk, dk, out.data() + (b * s + t) * d + a * dk);
  return Tensor<T>::from_op("merge_heads", {B, s, d}, std::move(out), {x},
                            [B, A, s, dk, d](const BackwardContext<T>& ctx) {
                              auto g = ctx.grad();
                              auto gx = ctx.input_grad(0);
                              for (std::size_t b = 0; b < B; ++b)
                                for (std::size_t a = 0; a < A; ++a)
                                  for (std::size_t t = 0; t < s; ++t) {
                                    const T* src = g.data() + (b * s + t) * d + a * dk;
                                    T* dst = gx.data() + ((b * A + a) * s + t) * dk;
                                    for (std::size_t j = 0; j < dk; ++j) dst[j] += src[j];
                                  }
                            });
}

template <typename T>
Tensor<T> mask_keys(const Tensor<T>& scores, std::span<const std::uint8_t> key_valid) {
  if (scores.rank() != 4 || scores.extent(2) != scores.extent(3)) {
    throw ShapeError("mask_keys: expected [B, A, s, s], got " + to_string(scores.shape()));
  }
  const std::size_t B = scores.extent(0), A = scores.extent(1), s = scores.extent(2);
  if (key_valid.size() != B * s) {
    throw ShapeError("mask_keys: mask holds " + std::to_string(key_valid.size()) +
                     " flags, expected " + std::to_string(B * s));
  }
  auto v = scores.values();
  std::vector<T> out(v.begin(), v.end());
  std::vector<std::uint8_t> valid(key_valid.begin(), key_valid.end());
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t q = 0; q < s; ++q)
        for (std::size_t k = 0; k < s; ++k)
          if (!valid[b * s + k]) out[((b * A + a) * s + q) * s + k] = kNegInf;
  return Tensor<T>::from_op("mask_keys", scores.shape(), std::move(out), {scores},
                            [B, A, s, valid = std::move(valid)](const BackwardContext<T>& ctx) {
                              auto g = ctx.grad();
                              auto gx = ctx.input_grad(0);
                              for (std::size_t b = 0; b < B; ++b)
                                for (std::size_t a = 0; a < A; ++a)
                                  for (std::size_t q = 0; q < s; ++q) {
                                    const std::size_t o = ((b * A + a) * s + q) * s;
                                    for (std::size_t k = 0; k < s; ++k)
                                      if (valid[b * s + k]) gx[o + k] += g[o + k];
                                  }
                            });
}

namespace {

// Writes softmax(x / t) of one row into `p` and returns log-sum-exp(x / t).
template <typename T>
double softmax_row(const T* x, std::size_t n, double t, double* p) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(x[j]) / t);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    p[j] = std::exp(static_cast<double>(x[j]) / t - mx);
    total += p[j];
  }
  for (std::size_t j = 0; j < n; ++j) p[j] /= total;
  return mx + std::log(total);
}

void check_rows(const char* op, std::span<const std::size_t> rows, std::size_t n_rows) {
  if (rows.empty()) throw ValueError(std::string(op) + ": no rows selected");
  for (std::size_t r : rows) {
    if (r >= n_rows) {
      throw ShapeError(std::string(op) + ": row " + std::to_string(r) + " out of range (" +
                       std::to_string(n_rows) + " rows)");
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, std::span<const std::size_t> rows,
                             std::span<const std::int32_t> labels) {
  const std::size_t V = last_extent("cross_entropy_rows", logits.shape());
  const std::size_t n_rows = logits.size() / V;
  check_rows("cross_entropy_rows", rows, n_rows);
  if (labels.size() != rows.size()) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(rows.size()) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::int32_t l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= V) {
      throw ValueError("cross_entropy_rows: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(V) + ")");
    }
  }
  auto v = logits.values();
  check_finite_or_neg_inf<T>("cross_entropy_rows", v);
  std::vector<double> p(V);
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const T* x = v.data() + rows[i] * V;
    const double lse = softmax_row(x, V, 1.0, p.data());
    total += lse - static_cast<double>(x[labels[i]]);
  }
  const double loss = total / static_cast<double>(rows.size());
  std::vector<std::size_t> sel(rows.begin(), rows.end());
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  return Tensor<T>::from_op(
      "cross_entropy_rows", {}, {static_cast<T>(loss)}, {logits},
      [V, sel = std::move(sel), lab = std::move(lab)](const BackwardContext<T>& ctx) {
        const double g = static_cast<double>(ctx.grad()[0]) / static_cast<double>(sel.size());
        auto v = ctx.input(0);
        auto gx = ctx.input_grad(0);
        std::vector<double> p(V);
        for (std::size_t i = 0; i < sel.size(); ++i) {
          softmax_row(v.data() + sel[i] * V, V, 1.0, p.data());
          p[lab[i]] -= 1.0;
          T* gi = gx.data() + sel[i] * V;
          for (std::size_t j = 0; j < V; ++j) gi[j] += static_cast<T>(g * p[j]);
        }
      });
}

template <typename T>
Tensor<T> soft_cross_entropy_rows(const Tensor<T>& target, const Tensor<T>& logits,
                                  std::span<const std::size_t> rows, T temperature) {
  if (!(temperature > 0)) throw ValueError("soft_cross_entropy_rows: temperature must be > 0");
  require_same_shape("soft_cross_entropy_rows", target.shape(), logits.shape());
  const std::size_t V = last_extent("soft_cross_entropy_rows", logits.shape());
  const std::size_t n_rows = logits.size() / V;
  check_rows("soft_cross_entropy_rows", rows, n_rows);
  auto vt = target.values();
  auto vs = logits.values();
  check_finite_or_neg_inf<T>("soft_cross_entropy_rows", vt);
  check_finite_or_neg_inf<T>("soft_cross_entropy_rows", vs);
  const double t = static_cast<double>(temperature);
  std::vector<double> p(V), q(V);
  double total = 0.0;
  for (std::size_t r : rows) {
    softmax_row(vt.data() + r * V, V, t, p.data());
    const double lse = softmax_row(vs.data() + r * V, V, t, q.data());
    for (std::size_t j = 0; j < V; ++j) {
      if (p[j] > 0) total -= p[j] * (static_cast<double>(vs[r * V + j]) / t - lse);
    }
  }
  const double loss = t * t * total / static_cast<double>(rows.size());
  std::vector<std::size_t> sel(rows.begin(), rows.end());
  return Tensor<T>::from_op(
      "soft_cross_entropy_rows", {}, {static_cast<T>(loss)}, {logits},
      [V, t, target, sel = std::move(sel)](const BackwardContext<T>& ctx) {
        const double g = static_cast<double>(ctx.grad()[0]) * t / static_cast<double>(sel.size());
        auto vt = target.values();
        auto vs = ctx.input(0);
        auto gx = ctx.input_grad(0);
        std::vector<double> p(V), q(V);
        for (std::size_t r : sel) {
          softmax_row(vt.data() + r * V, V, t, p.data());
          softmax_row(vs.data() + r * V, V, t, q.data());
          T* gi = gx.data() + r * V;
          for (std::size_t j = 0; j < V; ++j) gi[j] += static_cast<T>(g * (q[j] - p[j]));
        }
      });
}

template <typename T>
Tensor<T> masked_mse(const Tensor<T>& pred, const Tensor<T>& target,
                     std::span<const std::uint8_t> mask) {
  require_same_shape("masked_mse", pred.shape(), target.shape());
  const std::size_t n = pred.size();
  if (!mask.empty() && mask.size() != n) {
    throw ShapeError("masked_mse: mask holds " + std::to_string(mask.size()) +
                     " flags for " + std::to_string(n) + " elements");
  }
  auto vp = pred.values();
  auto vt = target.values();
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double diff = static_cast<double>(vp[i]) - static_cast<double>(vt[i]);
    total += diff * diff;
    ++count;
  }
  if (count == 0) throw ValueError("masked_mse: mask selects no elements");
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return Tensor<T>::from_op(
      "masked_mse", {}, {static_cast<T>(total / static_cast<double>(count))}, {pred},
      [count, target, m = std::move(m)](const BackwardContext<T>& ctx) {
        const double g = 2.0 * static_cast<double>(ctx.grad()[0]) / static_cast<double>(count);
        auto vp = ctx.input(0);
        auto vt = target.values();
        auto gp = ctx.input_grad(0);
        for (std::size_t i = 0; i < vp.size(); ++i) {
          if (!m.empty() && !m[i]) continue;
          gp[i] += static_cast<T>(g * (static_cast<double>(vp[i]) - static_cast<double>(vt[i])));
        }
      });
}

template <typename T>
Tensor<T> kl_rows(const Tensor<T>& target, const Tensor<T>& q,
                  std::span<const std::uint8_t> row_valid) {
  require_same_shape("kl_rows", target.shape(), q.shape());
  const std::size_t n = last_extent("kl_rows", q.shape());
  const std::size_t rows = q.size() / n;
  if (!row_valid.empty() && row_valid.size() != rows) {
    throw ShapeError("kl_rows: row mask holds " + std::to_string(row_valid.size()) +
                     " flags for " + std::to_string(rows) + " rows");
  }
  auto vp = target.values();
  auto vq = q.values();
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!row_valid.empty() && !row_valid[r]) continue;
    double sp = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      sp += vp[r * n + j];
      sq += vq[r * n + j];
    }
    if (std::abs(sp - 1.0) > 1e-4 || std::abs(sq - 1.0) > 1e-4) {
      throw ValueError("kl_rows: row " + std::to_string(r) +
                       " is not a probability vector (sums " + std::to_string(sp) + ", " +
                       std::to_string(sq) + ")");
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double pj = vp[r * n + j];
      if (pj > 0) total += pj * (std::log(pj) - std::log(static_cast<double>(vq[r * n + j])));
    }
    ++count;
  }
  if (count == 0) throw ValueError("kl_rows: no valid rows");
  std::vector<std::uint8_t> valid(row_valid.begin(), row_valid.end());
  return Tensor<T>::from_op(
      "kl_rows", {}, {static_cast<T>(total / static_cast<double>(count))}, {q},
      [n, rows, count, target, valid = std::move(valid)](const BackwardContext<T>& ctx) {
        const double g = static_cast<double>(ctx.grad()[0]) / static_cast<double>(count);
        auto vp = target.values();
        auto vq = ctx.input(0);
        auto gq = ctx.input_grad(0);
        for (std::size_t r = 0; r < rows; ++r) {
          if (!valid.empty() && !valid[r]) continue;
          for (std::size_t j = 0; j < n; ++j) {
            const double pj = vp[r * n + j];
            if (pj > 0) gq[r * n + j] -= static_cast<T>(g * pj / static_cast<double>(vq[r * n + j]));
          }
        }
      });
}

#define FAIRKD_INSTANTIATE_OPS(T)                                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> batched_matmul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> batched_matmul_nt(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>, Shape);          \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> merge_heads(const Tensor<T>&);                                              \
  template Tensor<T> mask_keys(const Tensor<T>&, std::span<const std::uint8_t>);                 \
  template Tensor<T> cross_entropy_rows(const Tensor<T>&, std::span<const std::size_t>,          \
                                        std::span<const std::int32_t>);                          \
  template Tensor<T> soft_cross_entropy_rows(const Tensor<T>&, const Tensor<T>&,                 \
                                             std::span<const std::size_t>, T);                   \
  template Tensor<T> masked_mse(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>); \
  template Tensor<T> kl_rows(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>);

FAIRKD_INSTANTIATE_OPS(float)
FAIRKD_INSTANTIATE_OPS(double)

#undef FAIRKD_INSTANTIATE_OPS

}  // namespace fairkd
