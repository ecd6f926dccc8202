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

// Straight-line 64-bit reimplementation of the MAE forward pass, written
// with plain loops and masks instead of the tape's gather/reshape path.
// Test-only.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bmae/model.hpp"

namespace bmae::testing {

using Mat = std::vector<std::vector<double>>;

inline Mat weight(const Parameters64& p, const std::string& name) {
  const auto& t = p.at(name);
  const auto rows = t.dim(0), cols = t.dim(1);
  Mat m(rows, std::vector<double>(cols));
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) m[i][j] = t.data()[i * cols + j];
  return m;
}

inline std::vector<double> vec(const Parameters64& p, const std::string& name) {
  const auto d = p.at(name).data();
  return {d.begin(), d.end()};
}

inline Mat affine(const Mat& x, const Mat& w, const std::vector<double>& b) {
  Mat y(x.size(), std::vector<double>(b.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      double acc = b[j];
      for (std::size_t k = 0; k < w.size(); ++k) acc += x[i][k] * w[k][j];
      y[i][j] = acc;
    }
  return y;
}

inline Mat layer_norm(const Mat& x, const std::vector<double>& g,
                      const std::vector<double>& b, double eps) {
  Mat y = x;
  for (auto& row : y) {
    double mu = 0, var = 0;
    for (double v : row) mu += v;
    mu /= row.size();
    for (double v : row) var += (v - mu) * (v - mu);
    var /= row.size();
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = (row[j] - mu) / std::sqrt(var + eps) * g[j] + b[j];
  }
  return y;
}

// group[i] is the attention group of token i; tokens only attend inside
// their own group.
inline Mat self_attention(const Parameters64& p, const std::string& pre, const Mat& h,
                          std::int64_t heads, const std::vector<std::int64_t>& group) {
  const auto q = affine(h, weight(p, pre + "wq"), vec(p, pre + "bq"));
  const auto k = affine(h, weight(p, pre + "wk"), vec(p, pre + "bk"));
  const auto v = affine(h, weight(p, pre + "wv"), vec(p, pre + "bv"));
  const std::size_t n = h.size(), d = h[0].size(), dh = d / heads;
  Mat o(n, std::vector<double>(d, 0.0));
  for (std::int64_t hd = 0; hd < heads; ++hd)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n, -1e300);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        if (group[i] != group[j]) continue;
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i][hd * dh + c] * k[j][hd * dh + c];
        s[j] = dot / std::sqrt(double(dh));
        mx = std::max(mx, s[j]);
      }
      double total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        s[j] = group[i] == group[j] ? std::exp(s[j] - mx) : 0.0;
        total += s[j];
      }
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < dh; ++c) o[i][hd * dh + c] += s[j] / total * v[j][hd * dh + c];
    }
  return affine(o, weight(p, pre + "wo"), vec(p, pre + "bo"));
}

inline Mat transformer_block(const Parameters64& p, const std::string& pre, const Mat& x,
                             std::int64_t heads, const std::vector<std::int64_t>& group,
                             double eps) {
  auto y = x;
  const auto a = self_attention(p, pre + "attn.",
                                layer_norm(x, vec(p, pre + "ln1.g"), vec(p, pre + "ln1.b"), eps),
                                heads, group);
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y[i].size(); ++j) y[i][j] += a[i][j];
  auto m = affine(layer_norm(y, vec(p, pre + "ln2.g"), vec(p, pre + "ln2.b"), eps),
                  weight(p, pre + "mlp.w1"), vec(p, pre + "mlp.b1"));
  for (auto& row : m)
    for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  m = affine(m, weight(p, pre + "mlp.w2"), vec(p, pre + "mlp.b2"));
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y[i].size(); ++j) y[i][j] += m[i][j];
  return y;
}

inline std::vector<double> sincos_row(std::int64_t r, std::int64_t c, std::int64_t dim) {
  std::vector<double> e(dim);
  const auto q = dim / 4;
  for (std::int64_t i = 0; i < q; ++i) {
    const double w = 1.0 / std::pow(10000.0, double(i) / q);
    e[i] = std::sin(r * w);
    e[q + i] = std::cos(r * w);
    e[2 * q + i] = std::sin(c * w);
    e[3 * q + i] = std::cos(c * w);
  }
  return e;
}

// `patches` is K x patch_dim; returns one latent per visible index.
inline Mat oracle_encode(const Parameters64& p, const ModelConfig& cfg, const Mat& patches,
                         const std::vector<std::int64_t>& visible) {
  Mat x;
  for (auto idx : visible) x.push_back(patches[idx]);
  x = affine(x, weight(p, "enc.patch_embed.w"), vec(p, "enc.patch_embed.b"));
  for (std::size_t i = 0; i < visible.size(); ++i) {
    const auto pe = sincos_row(visible[i] / cfg.grid_cols(), visible[i] % cfg.grid_cols(),
                               cfg.embed_dim);
    for (std::int64_t j = 0; j < cfg.embed_dim; ++j) x[i][j] += pe[j];
  }
  const std::vector<std::int64_t> one_group(visible.size(), 0);
  for (std::int64_t l = 0; l < cfg.enc_depth; ++l)
    x = transformer_block(p, "enc.blocks." + std::to_string(l) + ".", x, cfg.enc_heads,
                          one_group, cfg.ln_eps);
  return layer_norm(x, vec(p, "enc.norm.g"), vec(p, "enc.norm.b"), cfg.ln_eps);
}

// Attention group of every grid cell for decoder layer `layer`.
inline std::vector<std::int64_t> oracle_groups(const ModelConfig& cfg, std::int64_t layer) {
  const auto rows = cfg.grid_rows(), cols = cfg.grid_cols();
  std::vector<std::int64_t> g(rows * cols, 0);
  if (cfg.decoder_attn == DecoderAttn::kGlobal) return g;
  const bool odd = layer % 2 == 1;
  const auto sh = odd && cfg.win_h < rows ? cfg.win_h / 2 : 0;
  const auto sw = odd && cfg.win_w < cols ? cfg.win_w / 2 : 0;
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      // Undo the cyclic shift, then find the window in the shifted frame.
      const auto rs = (r - sh + rows) % rows, cs = (c - sw + cols) % cols;
      g[r * cols + c] = (rs / cfg.win_h) * (cols / cfg.win_w) + cs / cfg.win_w;
    }
  return g;
}

inline Mat oracle_decode(const Parameters64& p, const ModelConfig& cfg, const Mat& latents,
                         const std::vector<std::int64_t>& visible) {
  const auto k = cfg.n_patches();
  const auto y = affine(latents, weight(p, "dec.embed.w"), vec(p, "dec.embed.b"));
  Mat x(k, vec(p, "dec.mask_token"));
  for (std::size_t i = 0; i < visible.size(); ++i) x[visible[i]] = y[i];
  for (std::int64_t i = 0; i < k; ++i) {
    const auto pe = sincos_row(i / cfg.grid_cols(), i % cfg.grid_cols(), cfg.dec_dim);
    for (std::int64_t j = 0; j < cfg.dec_dim; ++j) x[i][j] += pe[j];
  }
  for (std::int64_t l = 0; l < cfg.dec_depth; ++l)
    x = transformer_block(p, "dec.blocks." + std::to_string(l) + ".", x, cfg.dec_heads,
                          oracle_groups(cfg, l), cfg.ln_eps);
  x = layer_norm(x, vec(p, "dec.norm.g"), vec(p, "dec.norm.b"), cfg.ln_eps);
  return affine(x, weight(p, "dec.pred.w"), vec(p, "dec.pred.b"));
}

inline std::vector<double> oracle_classify(const Parameters64& p, const ModelConfig& cfg,
                                           const Mat& patches) {
  std::vector<std::int64_t> all(cfg.n_patches());
  for (std::int64_t i = 0; i < cfg.n_patches(); ++i) all[i] = i;
  const auto z = oracle_encode(p, cfg, patches, all);
  Mat pooled(1, std::vector<double>(cfg.embed_dim, 0.0));
  for (const auto& row : z)
    for (std::int64_t j = 0; j < cfg.embed_dim; ++j) pooled[0][j] += row[j] / z.size();
  return affine(pooled, weight(p, "head.w"), vec(p, "head.b"))[0];
}

}  // namespace bmae::testing
