/*
 * Copyright 2026 The bmae Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "bmae/tape.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <type_traits>

#include "bmae/error.hpp"

namespace bmae {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;

// c (+)= op(a) * op(b), with a stored rows_a x cols_a and b rows_b x cols_b.
template <typename T>
void gemm(bool ta, const T* a, std::int64_t rows_a, std::int64_t cols_a,
          bool tb, const T* b, std::int64_t rows_b, std::int64_t cols_b, T* c,
          bool accumulate) {
  ConstMap<T> A(a, rows_a, cols_a);
  ConstMap<T> B(b, rows_b, cols_b);
  const auto m = ta ? cols_a : rows_a;
  const auto n = tb ? rows_b : cols_b;
  MutMap<T> C(c, m, n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      C.noalias() += lhs * rhs;
    } else {
      C.noalias() = lhs * rhs;
    }
  };
  if (!ta && !tb) run(A, B);
  else if (ta && !tb) run(A.transpose(), B);
  else if (!ta && tb) run(A, B.transpose());
  else run(A.transpose(), B.transpose());
}

// Sum in a fixed association order. Eigen's vectorized reductions peel to
// the runtime alignment of the buffer, which makes results depend on where
// the allocator placed it.
template <typename T>
T ordered_sum(const T* p, std::int64_t n) {
  constexpr int kLanes = 16;
  T acc[kLanes] = {};
  std::int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) acc[l] += p[i + l];
  for (int l = 0; i < n; ++i, ++l) acc[l] += p[i];
  T total = 0;
  for (int l = 0; l < kLanes; ++l) total += acc[l];
  return total;
}

std::int64_t norm_axis(std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r;
  BMAE_REQUIRE(axis >= 0 && axis < r, "axis " + std::to_string(axis) +
                                          " out of range for rank " +
                                          std::to_string(rank));
  return axis;
}

struct AxisSplit {
  std::int64_t outer = 1, dim = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::int64_t axis) {
  AxisSplit r;
  for (std::int64_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.dim = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T>
Buffer<T>& grad_buf(TensorNode<T>& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <typename T>
void check_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b,
                      const char* op) {
  BMAE_REQUIRE(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                           to_string(a.shape()) + " vs " +
                                           to_string(b.shape()));
}

// Eigen evaluates the unaligned head of a buffer with scalar code, and its
// scalar and packet transcendentals differ in the last bits. Running fn on
// an aligned copy keeps results independent of where a buffer was allocated.
template <typename T, typename F>
void aligned_apply(const T* in, T* out, std::size_t n, F fn) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  thread_local Arr buf;
  if (static_cast<std::size_t>(buf.size()) < n) buf.resize(static_cast<Eigen::Index>(n));
  auto head = buf.head(static_cast<Eigen::Index>(n));
  head = Eigen::Map<const Arr>(in, static_cast<Eigen::Index>(n));
  head = fn(head);
  std::copy(head.data(), head.data() + n, out);
}

// Standard normal CDF. The float path uses Eigen's vectorized erf.
template <typename T>
void normal_cdf(std::span<const T> x, std::span<T> out) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  if constexpr (std::is_same_v<T, float>) {
    aligned_apply(x.data(), out.data(), x.size(),
                  [&](const auto& a) { return 0.5f * (1.0f + (a * inv_sqrt2).erf()); });
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
  }
}

template <typename T>
auto as_array(std::span<const T> v) {
  return Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(v.data(),
                                                            static_cast<Eigen::Index>(v.size()));
}
template <typename T>
auto as_array(const Buffer<T>& v) {
  return as_array(std::span<const T>(v));
}
template <typename T>
auto as_array(Buffer<T>& v) {
  return Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(v.data(),
                                                      static_cast<Eigen::Index>(v.size()));
}

}  // namespace

template <typename T>
BasicTensor<T> BasicTape<T>::make_output(
    Shape shape, Buffer<T> values,
    std::initializer_list<const TensorT*> inputs) {
  TensorT out(std::move(shape), std::move(values));
  bool tracked = false;
  for (const auto* in : inputs) {
    if (recording_ && in && in->defined() && in->tracked()) tracked = true;
  }
  out.node()->tracked = tracked;
  return out;
}

template <typename T>
BasicTensor<T> BasicTape<T>::matmul(const TensorT& a, const TensorT& b,
                                    bool transpose_a, bool transpose_b) {
  const auto rank = a.rank();
  BMAE_REQUIRE((rank == 2 || rank == 3) && b.rank() == rank,
               "matmul: unsupported ranks " + to_string(a.shape()) + " x " +
                   to_string(b.shape()));
  const std::int64_t batch = rank == 3 ? a.dim(0) : 1;
  BMAE_REQUIRE(rank == 2 || b.dim(0) == batch,
               "matmul: batch mismatch " + to_string(a.shape()) + " x " +
                   to_string(b.shape()));
  const auto ra = a.dim(rank - 2), ca = a.dim(rank - 1);
  const auto rb = b.dim(rank - 2), cb = b.dim(rank - 1);
  const auto m = transpose_a ? ca : ra;
  const auto k = transpose_a ? ra : ca;
  const auto k2 = transpose_b ? cb : rb;
  const auto n = transpose_b ? rb : cb;
  BMAE_REQUIRE(k == k2, "matmul: inner dimension mismatch " +
                            to_string(a.shape()) + " x " +
                            to_string(b.shape()));

  Shape out_shape = rank == 3 ? Shape{batch, m, n} : Shape{m, n};
  Buffer<T> out(static_cast<std::size_t>(batch * m * n));
  const auto sa = ra * ca, sb = rb * cb, sc = m * n;
  for (std::int64_t g = 0; g < batch; ++g) {
    gemm<T>(transpose_a, a.data().data() + g * sa, ra, ca, transpose_b,
            b.data().data() + g * sb, rb, cb, out.data() + g * sc, false);
  }
  auto result = make_output(std::move(out_shape), std::move(out), {&a, &b});
  if (!result.tracked()) return result;

  record([an = a.node(), bn = b.node(), on = result.node(), transpose_a,
          transpose_b, batch, ra, ca, rb, cb, m, n, sa, sb, sc] {
    if (on->grad.empty()) return;
    const T* dc = on->grad.data();
    if (an->tracked) {
      T* da = grad_buf(*an).data();
      for (std::int64_t g = 0; g < batch; ++g) {
        if (!transpose_a) {
          gemm<T>(false, dc + g * sc, m, n, !transpose_b,
                  bn->value.data() + g * sb, rb, cb, da + g * sa, true);
        } else {
          gemm<T>(transpose_b, bn->value.data() + g * sb, rb, cb, true,
                  dc + g * sc, m, n, da + g * sa, true);
        }
      }
    }
    if (bn->tracked) {
      T* db = grad_buf(*bn).data();
      for (std::int64_t g = 0; g < batch; ++g) {
        if (!transpose_b) {
          gemm<T>(!transpose_a, an->value.data() + g * sa, ra, ca, false,
                  dc + g * sc, m, n, db + g * sb, true);
        } else {
          gemm<T>(true, dc + g * sc, m, n, transpose_a,
                  an->value.data() + g * sa, ra, ca, db + g * sb, true);
        }
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::add(const TensorT& a, const TensorT& b) {
  const bool same = a.shape() == b.shape();
  const bool bcast = !same && b.rank() == 1 && a.rank() >= 1 &&
                     b.dim(0) == a.dim(a.rank() - 1);
  BMAE_REQUIRE(same || bcast, "add: shape mismatch " + to_string(a.shape()) +
                                  " vs " + to_string(b.shape()));
  Buffer<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  const auto width = static_cast<std::int64_t>(bd.size());
  const auto rows = width == 0 ? 0 : static_cast<std::int64_t>(out.size()) / width;
  if (same) {
    as_array(out) += as_array(bd);
  } else {
    MutMap<T>(out.data(), rows, width).rowwise() +=
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bd.data(), width);
  }
  auto result = make_output(a.shape(), std::move(out), {&a, &b});
  if (!result.tracked()) return result;
  record([an = a.node(), bn = b.node(), on = result.node(), same, width, rows] {
    if (on->grad.empty()) return;
    const auto& g = on->grad;
    if (an->tracked) as_array(grad_buf(*an)) += as_array(g);
    if (bn->tracked) {
      auto& db = grad_buf(*bn);
      if (same) {
        as_array(db) += as_array(g);
      } else {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db.data(), width) +=
            ConstMap<T>(g.data(), rows, width).colwise().sum();
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::sub(const TensorT& a, const TensorT& b) {
  check_same_shape(a, b, "sub");
  Buffer<T> out(a.data().begin(), a.data().end());
  as_array(out) -= as_array(b.data());
  auto result = make_output(a.shape(), std::move(out), {&a, &b});
  if (!result.tracked()) return result;
  record([an = a.node(), bn = b.node(), on = result.node()] {
    if (on->grad.empty()) return;
    if (an->tracked) as_array(grad_buf(*an)) += as_array(on->grad);
    if (bn->tracked) as_array(grad_buf(*bn)) -= as_array(on->grad);
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::mul(const TensorT& a, const TensorT& b) {
  check_same_shape(a, b, "mul");
  Buffer<T> out(a.data().begin(), a.data().end());
  as_array(out) *= as_array(b.data());
  auto result = make_output(a.shape(), std::move(out), {&a, &b});
  if (!result.tracked()) return result;
  record([an = a.node(), bn = b.node(), on = result.node()] {
    if (on->grad.empty()) return;
    const auto g = as_array(on->grad);
    if (an->tracked) as_array(grad_buf(*an)) += g * as_array(bn->value);
    if (bn->tracked) as_array(grad_buf(*bn)) += g * as_array(an->value);
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::scale(const TensorT& a, T factor) {
  Buffer<T> out(a.data().begin(), a.data().end());
  as_array(out) *= factor;
  auto result = make_output(a.shape(), std::move(out), {&a});
  if (!result.tracked()) return result;
  record([an = a.node(), on = result.node(), factor] {
    if (on->grad.empty()) return;
    as_array(grad_buf(*an)) += factor * as_array(on->grad);
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::softmax(const TensorT& x, std::int64_t axis) {
  axis = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), axis);
  Buffer<T> out(x.data().begin(), x.data().end());
  if (sp.inner == 1) {
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      T* row = out.data() + o * sp.dim;
      const T mx = *std::max_element(row, row + sp.dim);
      for (std::int64_t d = 0; d < sp.dim; ++d) row[d] -= mx;
      aligned_apply(row, row, static_cast<std::size_t>(sp.dim), [](const auto& a) { return a.exp(); });
      const T total = ordered_sum(row, sp.dim);
      for (std::int64_t d = 0; d < sp.dim; ++d) row[d] /= total;
    }
  } else {
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        T* base = out.data() + o * sp.dim * sp.inner + i;
        T mx = base[0];
        for (std::int64_t d = 1; d < sp.dim; ++d)
          mx = std::max(mx, base[d * sp.inner]);
        T total = 0;
        for (std::int64_t d = 0; d < sp.dim; ++d) {
          base[d * sp.inner] = std::exp(base[d * sp.inner] - mx);
          total += base[d * sp.inner];
        }
        for (std::int64_t d = 0; d < sp.dim; ++d) base[d * sp.inner] /= total;
      }
    }
  }
  auto result = make_output(x.shape(), std::move(out), {&x});
  if (!result.tracked()) return result;
  record([xn = x.node(), on = result.node(), sp] {
    if (on->grad.empty()) return;
    auto& dx = grad_buf(*xn);
    const auto& y = on->value;
    const auto& g = on->grad;
    if (sp.inner == 1) {
      Buffer<T> prod(static_cast<std::size_t>(sp.dim));
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        const T* yr = y.data() + o * sp.dim;
        const T* gr = g.data() + o * sp.dim;
        for (std::int64_t d = 0; d < sp.dim; ++d) prod[d] = yr[d] * gr[d];
        const T dot = ordered_sum(prod.data(), sp.dim);
        T* dr = dx.data() + o * sp.dim;
        for (std::int64_t d = 0; d < sp.dim; ++d) dr[d] += yr[d] * (gr[d] - dot);
      }
      return;
    }
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const std::int64_t base = o * sp.dim * sp.inner + i;
        T dot = 0;
        for (std::int64_t d = 0; d < sp.dim; ++d) {
          const auto idx = base + d * sp.inner;
          dot += g[idx] * y[idx];
        }
        for (std::int64_t d = 0; d < sp.dim; ++d) {
          const auto idx = base + d * sp.inner;
          dx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::layernorm(const TensorT& x, const TensorT& gamma,
                                       const TensorT& beta, T eps,
                                       std::int64_t axis) {
  axis = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), axis);
  const bool affine = gamma.defined();
  BMAE_REQUIRE(gamma.defined() == beta.defined(),
               "layernorm: gamma and beta must both be given or both omitted");
  if (affine) {
    BMAE_REQUIRE(sp.inner == 1, "layernorm: affine form requires last axis");
    BMAE_REQUIRE(gamma.numel() == sp.dim && beta.numel() == sp.dim,
                 "layernorm: affine shape " + to_string(gamma.shape()) +
                     " does not match normalized dim " +
                     std::to_string(sp.dim));
  }
  const auto xs = x.data();
  Buffer<T> xhat(xs.size());
  Buffer<T> rstd(static_cast<std::size_t>(sp.outer * sp.inner));
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const std::int64_t base = o * sp.dim * sp.inner + i;
      T mu = 0;
      for (std::int64_t d = 0; d < sp.dim; ++d) mu += xs[base + d * sp.inner];
      mu /= static_cast<T>(sp.dim);
      T var = 0;
      for (std::int64_t d = 0; d < sp.dim; ++d) {
        const T c = xs[base + d * sp.inner] - mu;
        var += c * c;
      }
      var /= static_cast<T>(sp.dim);
      const T r = T(1) / std::sqrt(var + eps);
      rstd[o * sp.inner + i] = r;
      for (std::int64_t d = 0; d < sp.dim; ++d) {
        const auto idx = base + d * sp.inner;
        xhat[idx] = (xs[idx] - mu) * r;
      }
    }
  }
  Buffer<T> out = xhat;
  if (affine) {
    const auto gs = gamma.data();
    const auto bs = beta.data();
    auto m = MutMap<T>(out.data(), sp.outer, sp.dim);
    m.array().rowwise() *= Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>>(gs.data(), sp.dim);
    m.array().rowwise() += Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>>(bs.data(), sp.dim);
  }
  auto result = make_output(x.shape(), std::move(out), {&x, &gamma, &beta});
  if (!result.tracked()) return result;
  record([xn = x.node(), gn = affine ? gamma.node() : nullptr,
          bn = affine ? beta.node() : nullptr, on = result.node(),
          xhat = std::move(xhat), rstd = std::move(rstd), sp] {
    if (on->grad.empty()) return;
    const auto& g = on->grad;
    using RowVec = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;
    if (gn && gn->tracked) {
      RowVec(grad_buf(*gn).data(), sp.dim) +=
          ConstMap<T>(g.data(), sp.outer, sp.dim)
              .cwiseProduct(ConstMap<T>(xhat.data(), sp.outer, sp.dim))
              .colwise()
              .sum();
    }
    if (bn && bn->tracked)
      RowVec(grad_buf(*bn).data(), sp.dim) += ConstMap<T>(g.data(), sp.outer, sp.dim).colwise().sum();
    if (!xn->tracked) return;
    auto& dx = grad_buf(*xn);
    Buffer<T> dxhat(static_cast<std::size_t>(sp.dim));
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const std::int64_t base = o * sp.dim * sp.inner + i;
        T mean_g = 0, mean_gx = 0;
        for (std::int64_t d = 0; d < sp.dim; ++d) {
          const auto idx = base + d * sp.inner;
          const T gd = gn ? g[idx] * gn->value[d] : g[idx];
          dxhat[d] = gd;
          mean_g += gd;
          mean_gx += gd * xhat[idx];
        }
        mean_g /= static_cast<T>(sp.dim);
        mean_gx /= static_cast<T>(sp.dim);
        const T r = rstd[o * sp.inner + i];
        for (std::int64_t d = 0; d < sp.dim; ++d) {
          const auto idx = base + d * sp.inner;
          dx[idx] += r * (dxhat[d] - mean_g - xhat[idx] * mean_gx);
        }
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::gelu(const TensorT& x) {
  Buffer<T> cdf(x.data().size());
  normal_cdf<T>(x.data(), cdf);
  Buffer<T> out(cdf.size());
  as_array(out) = as_array(x.data()) * as_array(cdf);
  auto result = make_output(x.shape(), std::move(out), {&x});
  if (!result.tracked()) return result;
  record([xn = x.node(), on = result.node(), cdf = std::move(cdf)] {
    if (on->grad.empty()) return;
    constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
    const auto xv = as_array(xn->value);
    Buffer<T> pdf(xn->value.size());
    aligned_apply(xn->value.data(), pdf.data(), pdf.size(),
                  [&](const auto& a) { return inv_sqrt_2pi * (T(-0.5) * a * a).exp(); });
    as_array(grad_buf(*xn)) += as_array(on->grad) * (as_array(cdf) + xv * as_array(pdf));
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::gather(const TensorT& x,
                                    std::span<const std::int64_t> indices) {
  BMAE_REQUIRE(x.rank() >= 1, "gather: scalar input");
  const auto rows = x.dim(0);
  const auto width = rows == 0 ? 0 : x.numel() / rows;
  Shape shape = x.shape();
  shape[0] = static_cast<std::int64_t>(indices.size());
  Buffer<T> out(static_cast<std::size_t>(shape[0] * width));
  const auto xs = x.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto r = indices[i];
    BMAE_REQUIRE(r >= 0 && r < rows, "gather: index " + std::to_string(r) +
                                         " out of range for " +
                                         to_string(x.shape()));
    std::copy_n(xs.begin() + r * width, width, out.begin() + i * width);
  }
  auto result = make_output(std::move(shape), std::move(out), {&x});
  if (!result.tracked()) return result;
  record([xn = x.node(), on = result.node(),
          idx = std::vector<std::int64_t>(indices.begin(), indices.end()),
          width] {
    if (on->grad.empty()) return;
    auto& dx = grad_buf(*xn);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* src = on->grad.data() + i * width;
      T* dst = dx.data() + idx[i] * width;
      for (std::int64_t j = 0; j < width; ++j) dst[j] += src[j];
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::scatter_add(const TensorT& x,
                                         std::span<const std::int64_t> indices,
                                         std::int64_t n_rows) {
  BMAE_REQUIRE(x.rank() >= 1 &&
                   x.dim(0) == static_cast<std::int64_t>(indices.size()),
               "scatter_add: " + std::to_string(indices.size()) +
                   " indices for input " + to_string(x.shape()));
  const auto width = x.dim(0) == 0 ? 0 : x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = n_rows;
  Buffer<T> out(static_cast<std::size_t>(n_rows * width), T(0));
  const auto xs = x.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto r = indices[i];
    BMAE_REQUIRE(r >= 0 && r < n_rows, "scatter_add: index " +
                                           std::to_string(r) +
                                           " out of range");
    for (std::int64_t j = 0; j < width; ++j) out[r * width + j] += xs[i * width + j];
  }
  auto result = make_output(std::move(shape), std::move(out), {&x});
  if (!result.tracked()) return result;
  record([xn = x.node(), on = result.node(),
          idx = std::vector<std::int64_t>(indices.begin(), indices.end()),
          width] {
    if (on->grad.empty()) return;
    auto& dx = grad_buf(*xn);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::int64_t j = 0; j < width; ++j)
        dx[i * width + j] += on->grad[idx[i] * width + j];
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::concat(const std::vector<TensorT>& parts,
                                    std::int64_t axis) {
  BMAE_REQUIRE(!parts.empty(), "concat: no inputs");
  axis = norm_axis(axis, parts[0].rank());
  Shape shape = parts[0].shape();
  shape[axis] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    BMAE_REQUIRE(probe.size() == shape.size(),
                 "concat: rank mismatch " + to_string(parts[0].shape()) +
                     " vs " + to_string(p.shape()));
    probe[axis] = 0;
    Shape ref = parts[0].shape();
    ref[axis] = 0;
    BMAE_REQUIRE(probe == ref, "concat: shape mismatch " +
                                   to_string(parts[0].shape()) + " vs " +
                                   to_string(p.shape()));
    shape[axis] += p.dim(axis);
  }
  const auto sp = split_at(shape, axis);
  Buffer<T> out(static_cast<std::size_t>(numel(shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const auto block = p.dim(axis) * sp.inner;
    const auto src = p.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src.begin() + o * block, block,
                  out.begin() + o * sp.dim * sp.inner + offset);
    }
    offset += block;
  }
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || p.tracked();
  TensorT result(std::move(shape), std::move(out));
  result.node()->tracked = tracked;
  if (!tracked) return result;
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  record([nodes = std::move(nodes), offsets = std::move(offsets),
          on = result.node(), sp, axis] {
    if (on->grad.empty()) return;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      auto& n = *nodes[k];
      if (!n.tracked) continue;
      auto& dx = grad_buf(n);
      const auto block = n.shape[axis] * sp.inner;
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        const T* src = on->grad.data() + o * sp.dim * sp.inner + offsets[k];
        T* dst = dx.data() + o * block;
        for (std::int64_t j = 0; j < block; ++j) dst[j] += src[j];
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::sum(const TensorT& x, std::int64_t axis) {
  axis = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  Buffer<T> out(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
  const auto xs = x.data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t d = 0; d < sp.dim; ++d)
      for (std::int64_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += xs[(o * sp.dim + d) * sp.inner + i];
  auto result = make_output(std::move(shape), std::move(out), {&x});
  if (!result.tracked()) return result;
  record([xn = x.node(), on = result.node(), sp] {
    if (on->grad.empty()) return;
    auto& dx = grad_buf(*xn);
    for (std::int64_t o = 0; o < sp.outer; ++o)
      for (std::int64_t d = 0; d < sp.dim; ++d)
        for (std::int64_t i = 0; i < sp.inner; ++i)
          dx[(o * sp.dim + d) * sp.inner + i] += on->grad[o * sp.inner + i];
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::mean(const TensorT& x, std::int64_t axis) {
  const auto a = norm_axis(axis, x.rank());
  BMAE_REQUIRE(x.dim(a) > 0, "mean: empty axis");
  return scale(sum(x, a), T(1) / static_cast<T>(x.dim(a)));
}

template <typename T>
BasicTensor<T> BasicTape<T>::sum_all(const TensorT& x) {
  T total = 0;
  for (auto v : x.data()) total += v;
  auto result = make_output(Shape{}, Buffer<T>{total}, {&x});
  if (!result.tracked()) return result;
  record([xn = x.node(), on = result.node()] {
    if (on->grad.empty()) return;
    auto& dx = grad_buf(*xn);
    for (auto& v : dx) v += on->grad[0];
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::mean_all(const TensorT& x) {
  BMAE_REQUIRE(x.numel() > 0, "mean_all: empty tensor");
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> BasicTape<T>::transpose(const TensorT& x, std::int64_t axis_a,
                                       std::int64_t axis_b) {
  auto a = norm_axis(axis_a, x.rank());
  auto b = norm_axis(axis_b, x.rank());
  if (a > b) std::swap(a, b);
  const Shape& s = x.shape();
  std::int64_t p = 1, mid = 1, q = 1;
  for (std::int64_t i = 0; i < a; ++i) p *= s[i];
  for (std::int64_t i = a + 1; i < b; ++i) mid *= s[i];
  for (std::size_t i = b + 1; i < s.size(); ++i) q *= s[i];
  const auto na = s[a], nb = s[b];
  Shape shape = s;
  std::swap(shape[a], shape[b]);

  // Input viewed as [p, na, mid, nb, q]; output as [p, nb, mid, na, q].
  auto permute = [=](const T* in, T* out, bool accumulate) {
    for (std::int64_t ip = 0; ip < p; ++ip)
      for (std::int64_t ia = 0; ia < na; ++ia)
        for (std::int64_t im = 0; im < mid; ++im)
          for (std::int64_t ib = 0; ib < nb; ++ib) {
            const T* src = in + (((ip * na + ia) * mid + im) * nb + ib) * q;
            T* dst = out + (((ip * nb + ib) * mid + im) * na + ia) * q;
            if (accumulate) {
              for (std::int64_t j = 0; j < q; ++j) dst[j] += src[j];
            } else {
              std::copy_n(src, q, dst);
            }
          }
  };
  Buffer<T> out(x.data().size());
  permute(x.data().data(), out.data(), false);
  auto result = make_output(std::move(shape), std::move(out), {&x});
  if (!result.tracked()) return result;
  // The inverse permutation is the same swap applied to the output layout.
  record([xn = x.node(), on = result.node(), p, na, mid, nb, q] {
    if (on->grad.empty()) return;
    auto& dx = grad_buf(*xn);
    for (std::int64_t ip = 0; ip < p; ++ip)
      for (std::int64_t ib = 0; ib < nb; ++ib)
        for (std::int64_t im = 0; im < mid; ++im)
          for (std::int64_t ia = 0; ia < na; ++ia) {
            const T* src =
                on->grad.data() + (((ip * nb + ib) * mid + im) * na + ia) * q;
            T* dst = dx.data() + (((ip * na + ia) * mid + im) * nb + ib) * q;
            for (std::int64_t j = 0; j < q; ++j) dst[j] += src[j];
          }
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::reshape(const TensorT& x, Shape shape) {
  BMAE_REQUIRE(numel(shape) == x.numel(), "reshape: cannot view " +
                                              to_string(x.shape()) + " as " +
                                              to_string(shape));
  Buffer<T> out(x.data().begin(), x.data().end());
  auto result = make_output(std::move(shape), std::move(out), {&x});
  if (!result.tracked()) return result;
  record([xn = x.node(), on = result.node()] {
    if (on->grad.empty()) return;
    auto& dx = grad_buf(*xn);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += on->grad[i];
  });
  return result;
}

template <typename T>
BasicTensor<T> BasicTape<T>::cross_entropy(
    const TensorT& logits, std::span<const std::int32_t> labels) {
  BMAE_REQUIRE(logits.rank() == 2, "cross_entropy: logits must be N x C, got " +
                                       to_string(logits.shape()));
  const auto n = logits.dim(0), c = logits.dim(1);
  BMAE_REQUIRE(static_cast<std::int64_t>(labels.size()) == n,
               "cross_entropy: " + std::to_string(labels.size()) +
                   " labels for " + std::to_string(n) + " rows");
  BMAE_REQUIRE(n > 0, "cross_entropy: empty batch");
  const auto xs = logits.data();
  Buffer<T> probs(xs.begin(), xs.end());
  T loss = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto y = labels[i];
    BMAE_REQUIRE(y >= 0 && y < c, "cross_entropy: label " + std::to_string(y) +
                                      " outside [0, " + std::to_string(c) +
                                      ")");
    T* row = probs.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T total = 0;
    for (std::int64_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const T log_z = mx + std::log(total);
    loss += log_z - row[y];
    for (std::int64_t j = 0; j < c; ++j) row[j] = std::exp(row[j] - log_z);
  }
  loss /= static_cast<T>(n);
  auto result = make_output(Shape{}, Buffer<T>{loss}, {&logits});
  if (!result.tracked()) return result;
  record([ln = logits.node(), on = result.node(), probs = std::move(probs),
          ys = std::vector<std::int32_t>(labels.begin(), labels.end()), n, c] {
    if (on->grad.empty()) return;
    auto& dl = grad_buf(*ln);
    const T g = on->grad[0] / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < c; ++j) {
        const T onehot = j == ys[i] ? T(1) : T(0);
        dl[i * c + j] += g * (probs[i * c + j] - onehot);
      }
    }
  });
  return result;
}

template <typename T>
void BasicTape<T>::backward(const TensorT& loss) {
  BMAE_REQUIRE(loss.numel() == 1, "backward: loss must be scalar, got shape " +
                                      to_string(loss.shape()));
  if (!loss.tracked()) {
    records_.clear();
    return;
  }
  grad_buf(*loss.node())[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  records_.clear();
}

template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace bmae
