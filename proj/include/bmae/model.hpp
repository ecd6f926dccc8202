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

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bmae/prng.hpp"
#include "bmae/tape.hpp"
#include "bmae/tensor.hpp"

namespace bmae {

enum class DecoderAttn { kGlobal, kShiftedLocal };

std::string_view to_string(DecoderAttn a);
DecoderAttn parse_decoder_attn(std::string_view s);  // throws ConfigError

struct ModelConfig {
  std::int64_t input_h = 128;  // mel bins
  std::int64_t input_w = 512;  // frames
  std::int64_t patch_h = 16;
  std::int64_t patch_w = 16;
  std::int64_t embed_dim = 64;
  std::int64_t enc_depth = 4;
  std::int64_t enc_heads = 2;
  std::int64_t dec_dim = 64;
  std::int64_t dec_depth = 2;
  std::int64_t dec_heads = 2;
  std::int64_t mlp_ratio = 4;
  double mask_ratio = 0.8;
  std::int64_t n_classes = 20;
  DecoderAttn decoder_attn = DecoderAttn::kGlobal;
  std::int64_t win_h = 4;
  std::int64_t win_w = 8;
  double norm_eps = 1e-6;  // patch-normalized targets
  double ln_eps = 1e-6;    // layer norm
  // Fixed standardization of log-mel inputs, (x - input_mean) / input_std.
  // Defaults are the statistics of the reference synthetic corpus.
  double input_mean = -2.2;
  double input_std = 3.3;

  std::int64_t grid_rows() const { return input_h / patch_h; }
  std::int64_t grid_cols() const { return input_w / patch_w; }
  std::int64_t n_patches() const { return grid_rows() * grid_cols(); }
  std::int64_t patch_dim() const { return patch_h * patch_w; }
  std::int64_t n_masked() const;

  void validate() const;  // throws ConfigError

  /// Desk-scale default: embed 64, depth 4 encoder, depth 2 decoder, 2 heads.
  static ModelConfig tiny();
  /// ViT-B encoder (768, 12 layers, 12 heads) with a 16-layer decoder using
  /// shifted local attention.
  static ModelConfig base();
};

// ---------------------------------------------------------------------------
// Patches and masks

/// Non-overlapping tiles in row-major grid order (frequency-major rows,
/// time-major columns); each tile is flattened row-major.
struct PatchSet {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::int64_t patch_h = 0;
  std::int64_t patch_w = 0;
  std::vector<float> values;  // K x (patch_h * patch_w)

  std::int64_t count() const { return rows * cols; }
  std::int64_t dim() const { return patch_h * patch_w; }
};

/// `image` is height x width, row-major. Throws ContractError when the shape
/// is not divisible by the patch size.
PatchSet patchify(std::span<const float> image, std::int64_t height,
                  std::int64_t width, std::int64_t patch_h, std::int64_t patch_w);
std::vector<float> unpatchify(const PatchSet& patches);

struct MaskPlan {
  std::vector<std::int64_t> perm;
  std::int64_t n_masked = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(perm.size()); }
  /// Visible (first K - n_masked of perm) and masked (last n_masked) indices,
  /// each sorted ascending.
  std::vector<std::int64_t> visible() const;
  std::vector<std::int64_t> masked() const;
};

MaskPlan make_mask(std::int64_t n_patches, double mask_ratio, Prng& rng);
/// Plan with nothing masked and the identity permutation.
MaskPlan no_mask(std::int64_t n_patches);

/// Per-patch standardization, population variance, eps inside the root.
template <typename T>
std::vector<T> recon_targets(std::span<const T> patches, std::int64_t patch_dim,
                             double eps);

/// Fixed 2-D sine-cosine table, (rows * cols) x dim; the first half of each
/// row encodes the grid row, the second half the grid column. dim % 4 == 0.
template <typename T>
std::vector<T> sincos_pos_embed_2d(std::int64_t rows, std::int64_t cols,
                                   std::int64_t dim);

// ---------------------------------------------------------------------------
// Parameters

/// Ownership of a named array: encoder (theta), decoder (psi), head (phi).
enum class ParamGroup { kEncoder, kDecoder, kHead };

std::string_view to_string(ParamGroup g);
/// Derived from the name prefix: "enc.", "dec." or "head.".
ParamGroup group_of(std::string_view name);

template <typename T>
class BasicParameters {
 public:
  using TensorT = BasicTensor<T>;

  struct Entry {
    std::string name;
    TensorT tensor;
    bool trainable = true;
  };

  void add(std::string name, TensorT tensor, bool trainable = true);
  bool contains(std::string_view name) const;
  const TensorT& at(std::string_view name) const;
  TensorT& at(std::string_view name);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Enables or disables gradients on every trainable array of a group.
  void set_trainable(ParamGroup g, bool on);
  void zero_grad();
  bool has_group(ParamGroup g) const;

  /// Deep copy; gradients are not copied.
  BasicParameters clone() const;
  /// Deep copy keeping only the listed groups.
  BasicParameters subset(std::initializer_list<ParamGroup> groups) const;
  /// Replaces all arrays of group g with deep copies from `src`.
  void assign_group(const BasicParameters& src, ParamGroup g);

  template <typename U>
  BasicParameters<U> cast() const {
    BasicParameters<U> out;
    for (const auto& e : entries_) {
      std::vector<U> v(e.tensor.data().begin(), e.tensor.data().end());
      out.add(e.name, BasicTensor<U>(e.tensor.shape(), std::move(v)), e.trainable);
    }
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

using Parameters = BasicParameters<float>;
using Parameters64 = BasicParameters<double>;

/// Weights truncated normal (sigma 0.02, cut at 2 sigma), biases zero, layer
/// norm gains one. Each array draws from its own stream keyed by name, so
/// re-initializing one group reproduces a fresh init of that group.
template <typename T>
BasicParameters<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Throws ContractError unless every array the config needs is present with
/// the right shape. Missing groups are allowed when listed as optional.
template <typename T>
void check_parameters(const BasicParameters<T>& p, const ModelConfig& cfg,
                      bool need_decoder, bool need_head);

// ---------------------------------------------------------------------------
// Forward passes. Batches are stacked along rows: `patches` is
// (B * K) x patch_dim and `plans` holds one MaskPlan per item.

/// Encoder over visible patches only. Returns (B * n_visible) x embed_dim.
template <typename T>
BasicTensor<T> encode(BasicTape<T>& tape, const BasicParameters<T>& params,
                      const BasicTensor<T>& patches,
                      std::span<const MaskPlan> plans, const ModelConfig& cfg);

/// Inserts mask tokens, restores grid order and predicts every patch.
/// Returns (B * K) x patch_dim.
template <typename T>
BasicTensor<T> decode(BasicTape<T>& tape, const BasicParameters<T>& params,
                      const BasicTensor<T>& latents,
                      std::span<const MaskPlan> plans, const ModelConfig& cfg);

/// Mean over masked patches of the per-element squared error, averaged over
/// the batch. Visible rows of `pred` are never read.
template <typename T>
BasicTensor<T> mae_loss(BasicTape<T>& tape, const BasicTensor<T>& pred,
                        const BasicTensor<T>& targets,
                        std::span<const MaskPlan> plans);

/// encode + decode + mae_loss with patch-normalized targets.
template <typename T>
BasicTensor<T> mae_forward_loss(BasicTape<T>& tape,
                                const BasicParameters<T>& params,
                                const BasicTensor<T>& patches,
                                std::span<const MaskPlan> plans,
                                const ModelConfig& cfg);

/// Unmasked encoding mean-pooled over patches: B x embed_dim.
template <typename T>
BasicTensor<T> pooled_features(BasicTape<T>& tape,
                               const BasicParameters<T>& params,
                               const BasicTensor<T>& patches,
                               const ModelConfig& cfg);

/// Linear head on pooled features: B x n_classes.
template <typename T>
BasicTensor<T> apply_head(BasicTape<T>& tape, const BasicParameters<T>& params,
                          const BasicTensor<T>& features);

template <typename T>
BasicTensor<T> classify(BasicTape<T>& tape, const BasicParameters<T>& params,
                        const BasicTensor<T>& patches, const ModelConfig& cfg);

/// Decoder attention windows for one layer: rows of the returned vector list
/// grid indices window by window. Empty for global attention. Odd layers are
/// cyclically shifted by half a window along each axis the window does not
/// already span.
std::vector<std::int64_t> window_order(const ModelConfig& cfg, std::int64_t layer);

}  // namespace bmae
