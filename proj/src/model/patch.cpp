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

#include <algorithm>
#include <cmath>

#include "bmae/error.hpp"
#include "bmae/model.hpp"

namespace bmae {

std::string_view to_string(DecoderAttn a) {
  return a == DecoderAttn::kGlobal ? "global" : "shifted_local";
}

DecoderAttn parse_decoder_attn(std::string_view s) {
  if (s == "global") return DecoderAttn::kGlobal;
  if (s == "shifted_local") return DecoderAttn::kShiftedLocal;
  throw ConfigError("model: unknown decoder_attn '" + std::string(s) + "'");
}

std::int64_t ModelConfig::n_masked() const {
  // The small epsilon keeps products like 0.29 * 100 from flooring to 28.
  return static_cast<std::int64_t>(std::floor(mask_ratio * n_patches() + 1e-9));
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { return ConfigError("model: " + what); };
  if (patch_h <= 0 || patch_w <= 0 || input_h <= 0 || input_w <= 0)
    throw bad("input and patch sizes must be positive");
  if (input_h % patch_h != 0 || input_w % patch_w != 0)
    throw bad("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
              " is not divisible by patch " + std::to_string(patch_h) + "x" +
              std::to_string(patch_w));
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw bad("mask_ratio must be in [0, 1)");
  if (embed_dim <= 0 || enc_heads <= 0 || embed_dim % enc_heads != 0)
    throw bad("embed_dim must be a positive multiple of enc_heads");
  if (dec_dim <= 0 || dec_heads <= 0 || dec_dim % dec_heads != 0)
    throw bad("dec_dim must be a positive multiple of dec_heads");
  if (embed_dim % 4 != 0 || dec_dim % 4 != 0)
    throw bad("embed_dim and dec_dim must be multiples of 4 (2-D sin-cos table)");
  if (enc_depth < 0 || dec_depth < 0 || mlp_ratio <= 0) throw bad("depths must be >= 0");
  if (n_classes < 1) throw bad("n_classes must be >= 1");
  if (!(norm_eps > 0.0) || !(ln_eps > 0.0)) throw bad("eps values must be positive");
  if (!(input_std > 0.0) || !std::isfinite(input_mean))
    throw bad("input_std must be positive and input_mean finite");
  if (decoder_attn == DecoderAttn::kShiftedLocal) {
    if (win_h <= 0 || win_w <= 0 || grid_rows() % win_h != 0 || grid_cols() % win_w != 0)
      throw bad("attention window must tile the " + std::to_string(grid_rows()) + "x" +
                std::to_string(grid_cols()) + " patch grid");
  }
}

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::base() {
  ModelConfig c;
  c.embed_dim = 768;
  c.enc_depth = 12;
  c.enc_heads = 12;
  c.dec_dim = 512;
  c.dec_depth = 16;
  c.dec_heads = 16;
  c.decoder_attn = DecoderAttn::kShiftedLocal;
  return c;
}

PatchSet patchify(std::span<const float> image, std::int64_t height,
                  std::int64_t width, std::int64_t patch_h, std::int64_t patch_w) {
  BMAE_REQUIRE(patch_h > 0 && patch_w > 0 && height % patch_h == 0 && width % patch_w == 0,
               "patchify: " + std::to_string(height) + "x" + std::to_string(width) +
                   " not divisible by " + std::to_string(patch_h) + "x" +
                   std::to_string(patch_w));
  BMAE_REQUIRE(static_cast<std::int64_t>(image.size()) == height * width,
               "patchify: image has " + std::to_string(image.size()) + " values, expected " +
                   std::to_string(height * width));
  PatchSet p{height / patch_h, width / patch_w, patch_h, patch_w, {}};
  p.values.resize(image.size());
  float* out = p.values.data();
  for (std::int64_t r = 0; r < p.rows; ++r)
    for (std::int64_t c = 0; c < p.cols; ++c)
      for (std::int64_t i = 0; i < patch_h; ++i) {
        const float* src = image.data() + (r * patch_h + i) * width + c * patch_w;
        out = std::copy(src, src + patch_w, out);
      }
  return p;
}

std::vector<float> unpatchify(const PatchSet& p) {
  const auto width = p.cols * p.patch_w;
  std::vector<float> image(p.values.size());
  const float* src = p.values.data();
  for (std::int64_t r = 0; r < p.rows; ++r)
    for (std::int64_t c = 0; c < p.cols; ++c)
      for (std::int64_t i = 0; i < p.patch_h; ++i) {
        std::copy(src, src + p.patch_w, image.data() + (r * p.patch_h + i) * width + c * p.patch_w);
        src += p.patch_w;
      }
  return image;
}

std::vector<std::int64_t> MaskPlan::visible() const {
  std::vector<std::int64_t> v(perm.begin(), perm.end() - n_masked);
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<std::int64_t> MaskPlan::masked() const {
  std::vector<std::int64_t> v(perm.end() - n_masked, perm.end());
  std::sort(v.begin(), v.end());
  return v;
}

MaskPlan make_mask(std::int64_t n_patches, double mask_ratio, Prng& rng) {
  BMAE_REQUIRE(mask_ratio >= 0.0 && mask_ratio < 1.0, "make_mask: ratio outside [0, 1)");
  MaskPlan plan;
  plan.perm = rng.permutation(n_patches);
  plan.n_masked = static_cast<std::int64_t>(std::floor(mask_ratio * n_patches + 1e-9));
  return plan;
}

MaskPlan no_mask(std::int64_t n_patches) {
  MaskPlan plan;
  plan.perm.resize(static_cast<std::size_t>(n_patches));
  for (std::int64_t i = 0; i < n_patches; ++i) plan.perm[i] = i;
  return plan;
}

template <typename T>
std::vector<T> recon_targets(std::span<const T> patches, std::int64_t patch_dim,
                             double eps) {
  BMAE_REQUIRE(patch_dim > 0 && patches.size() % patch_dim == 0,
               "recon_targets: size not a multiple of the patch dimension");
  std::vector<T> out(patches.size());
  const std::size_t n = patches.size() / patch_dim;
  for (std::size_t k = 0; k < n; ++k) {
    const T* p = patches.data() + k * patch_dim;
    double mean = 0.0;
    for (std::int64_t i = 0; i < patch_dim; ++i) mean += p[i];
    mean /= patch_dim;
    double var = 0.0;
    for (std::int64_t i = 0; i < patch_dim; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= patch_dim;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::int64_t i = 0; i < patch_dim; ++i)
      out[k * patch_dim + i] = static_cast<T>((p[i] - mean) * inv);
  }
  return out;
}

template <typename T>
std::vector<T> sincos_pos_embed_2d(std::int64_t rows, std::int64_t cols,
                                   std::int64_t dim) {
  BMAE_REQUIRE(dim % 4 == 0, "sincos_pos_embed_2d: dim must be a multiple of 4");
  const std::int64_t quarter = dim / 4;
  std::vector<T> table(static_cast<std::size_t>(rows * cols * dim));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      T* row = table.data() + (r * cols + c) * dim;
      for (std::int64_t i = 0; i < quarter; ++i) {
        const double omega = std::pow(10000.0, -static_cast<double>(i) / quarter);
        row[i] = static_cast<T>(std::sin(r * omega));
        row[quarter + i] = static_cast<T>(std::cos(r * omega));
        row[2 * quarter + i] = static_cast<T>(std::sin(c * omega));
        row[3 * quarter + i] = static_cast<T>(std::cos(c * omega));
      }
    }
  return table;
}

std::vector<std::int64_t> window_order(const ModelConfig& cfg, std::int64_t layer) {
  if (cfg.decoder_attn == DecoderAttn::kGlobal) return {};
  const auto rows = cfg.grid_rows(), cols = cfg.grid_cols();
  const bool shifted = layer % 2 == 1;
  const auto sh = shifted && cfg.win_h < rows ? cfg.win_h / 2 : 0;
  const auto sw = shifted && cfg.win_w < cols ? cfg.win_w / 2 : 0;
  std::vector<std::int64_t> order;
  order.reserve(static_cast<std::size_t>(rows * cols));
  for (std::int64_t wr = 0; wr < rows / cfg.win_h; ++wr)
    for (std::int64_t wc = 0; wc < cols / cfg.win_w; ++wc)
      for (std::int64_t i = 0; i < cfg.win_h; ++i)
        for (std::int64_t j = 0; j < cfg.win_w; ++j) {
          const auto r = (wr * cfg.win_h + i + sh) % rows;
          const auto c = (wc * cfg.win_w + j + sw) % cols;
          order.push_back(r * cols + c);
        }
  return order;
}

template std::vector<float> recon_targets(std::span<const float>, std::int64_t, double);
template std::vector<double> recon_targets(std::span<const double>, std::int64_t, double);
template std::vector<float> sincos_pos_embed_2d(std::int64_t, std::int64_t, std::int64_t);
template std::vector<double> sincos_pos_embed_2d(std::int64_t, std::int64_t, std::int64_t);

}  // namespace bmae
