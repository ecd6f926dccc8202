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

#include <cmath>

#include "bmae/error.hpp"
#include "bmae/model.hpp"

namespace bmae {

namespace {

template <typename T>
BasicTensor<T> linear(BasicTape<T>& tape, const BasicTensor<T>& x,
                      const BasicParameters<T>& p, const std::string& prefix,
                      const std::string& suffix = "") {
  return tape.add(tape.matmul(x, p.at(prefix + "w" + suffix)), p.at(prefix + "b" + suffix));
}

// Multi-head self-attention over `batch` independent sequences of `seq` rows.
template <typename T>
BasicTensor<T> attention(BasicTape<T>& tape, const BasicParameters<T>& p,
                         const std::string& prefix, const BasicTensor<T>& h,
                         std::int64_t batch, std::int64_t seq, std::int64_t heads) {
  const auto dim = h.dim(1);
  const auto dh = dim / heads;
  auto split = [&](const BasicTensor<T>& t) {
    auto r = tape.reshape(t, {batch, seq, heads, dh});
    return tape.reshape(tape.transpose(r, 1, 2), {batch * heads, seq, dh});
  };
  auto q = tape.scale(linear(tape, h, p, prefix, "q"), T(1) / std::sqrt(static_cast<T>(dh)));
  auto k = linear(tape, h, p, prefix, "k");
  auto v = linear(tape, h, p, prefix, "v");
  auto scores = tape.softmax(tape.matmul(split(q), split(k), false, true));
  auto o = tape.matmul(scores, split(v));
  o = tape.transpose(tape.reshape(o, {batch, heads, seq, dh}), 1, 2);
  o = tape.reshape(o, {batch * seq, dim});
  return linear(tape, o, p, prefix, "o");
}

// Pre-norm transformer block. With a non-empty `order` (grid indices listed
// window by window), attention runs inside each window.
template <typename T>
BasicTensor<T> block(BasicTape<T>& tape, const BasicParameters<T>& p,
                     const std::string& prefix, const BasicTensor<T>& x,
                     std::int64_t batch, std::int64_t seq, std::int64_t heads,
                     const std::vector<std::int64_t>& order, std::int64_t window,
                     T eps) {
  auto h = tape.layernorm(x, p.at(prefix + "ln1.g"), p.at(prefix + "ln1.b"), eps);
  BasicTensor<T> a;
  if (order.empty()) {
    a = attention(tape, p, prefix + "attn.", h, batch, seq, heads);
  } else {
    std::vector<std::int64_t> rows(static_cast<std::size_t>(batch * seq));
    std::vector<std::int64_t> back(rows.size());
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t j = 0; j < seq; ++j) {
        rows[b * seq + j] = b * seq + order[j];
        back[b * seq + order[j]] = b * seq + j;
      }
    a = attention(tape, p, prefix + "attn.", tape.gather(h, rows), batch * (seq / window),
                  window, heads);
    a = tape.gather(a, back);
  }
  auto y = tape.add(x, a);
  auto m = tape.layernorm(y, p.at(prefix + "ln2.g"), p.at(prefix + "ln2.b"), eps);
  m = linear(tape, tape.gelu(linear(tape, m, p, prefix + "mlp.", "1")), p, prefix + "mlp.", "2");
  return tape.add(y, m);
}

std::int64_t common_masked(std::span<const MaskPlan> plans, std::int64_t k) {
  BMAE_REQUIRE(!plans.empty(), "empty batch");
  for (const auto& pl : plans) {
    BMAE_REQUIRE(pl.size() == k, "mask plan covers " + std::to_string(pl.size()) +
                                     " patches, model has " + std::to_string(k));
    BMAE_REQUIRE(pl.n_masked == plans[0].n_masked, "mask plans in a batch differ in size");
  }
  return plans[0].n_masked;
}

}  // namespace

template <typename T>
BasicTensor<T> encode(BasicTape<T>& tape, const BasicParameters<T>& params,
                      const BasicTensor<T>& patches, std::span<const MaskPlan> plans,
                      const ModelConfig& cfg) {
  const auto k = cfg.n_patches();
  const auto batch = static_cast<std::int64_t>(plans.size());
  BMAE_REQUIRE(patches.rank() == 2 && patches.dim(1) == cfg.patch_dim() &&
                   patches.dim(0) == batch * k,
               "encode: patches " + to_string(patches.shape()) + " do not match " +
                   std::to_string(batch) + " items of " + std::to_string(k) + "x" +
                   std::to_string(cfg.patch_dim()));
  const auto n_vis = k - common_masked(plans, k);
  std::vector<std::int64_t> rows, pos_rows;
  rows.reserve(static_cast<std::size_t>(batch * n_vis));
  for (std::int64_t b = 0; b < batch; ++b)
    for (auto idx : plans[b].visible()) {
      rows.push_back(b * k + idx);
      pos_rows.push_back(idx);
    }
  auto x = linear(tape, tape.gather(patches, rows), params, "enc.patch_embed.");
  x = tape.add(x, tape.gather(params.at("enc.pos"), pos_rows));
  const auto eps = static_cast<T>(cfg.ln_eps);
  for (std::int64_t i = 0; i < cfg.enc_depth; ++i)
    x = block(tape, params, "enc.blocks." + std::to_string(i) + ".", x, batch, n_vis,
              cfg.enc_heads, {}, 0, eps);
  return tape.layernorm(x, params.at("enc.norm.g"), params.at("enc.norm.b"), eps);
}

template <typename T>
BasicTensor<T> decode(BasicTape<T>& tape, const BasicParameters<T>& params,
                      const BasicTensor<T>& latents, std::span<const MaskPlan> plans,
                      const ModelConfig& cfg) {
  const auto k = cfg.n_patches();
  const auto batch = static_cast<std::int64_t>(plans.size());
  const auto n_masked = common_masked(plans, k);
  BMAE_REQUIRE(latents.rank() == 2 && latents.dim(0) == batch * (k - n_masked) &&
                   latents.dim(1) == cfg.embed_dim,
               "decode: latents " + to_string(latents.shape()) + " do not match the plan (" +
                   std::to_string(batch) + " x " + std::to_string(k - n_masked) + " visible)");
  std::vector<std::int64_t> vis_rows, mask_rows, pos_rows;
  for (std::int64_t b = 0; b < batch; ++b) {
    for (auto idx : plans[b].visible()) vis_rows.push_back(b * k + idx);
    for (auto idx : plans[b].masked()) mask_rows.push_back(b * k + idx);
    for (std::int64_t i = 0; i < k; ++i) pos_rows.push_back(i);
  }
  auto y = linear(tape, latents, params, "dec.embed.");
  auto x = tape.scatter_add(y, vis_rows, batch * k);
  if (n_masked > 0) {
    auto token = tape.reshape(params.at("dec.mask_token"), {1, cfg.dec_dim});
    const std::vector<std::int64_t> zeros(mask_rows.size(), 0);
    x = tape.add(x, tape.scatter_add(tape.gather(token, zeros), mask_rows, batch * k));
  }
  x = tape.add(x, tape.gather(params.at("dec.pos"), pos_rows));
  const auto eps = static_cast<T>(cfg.ln_eps);
  const auto window = cfg.decoder_attn == DecoderAttn::kGlobal ? k : cfg.win_h * cfg.win_w;
  for (std::int64_t i = 0; i < cfg.dec_depth; ++i)
    x = block(tape, params, "dec.blocks." + std::to_string(i) + ".", x, batch, k,
              cfg.dec_heads, window_order(cfg, i), window, eps);
  x = tape.layernorm(x, params.at("dec.norm.g"), params.at("dec.norm.b"), eps);
  return linear(tape, x, params, "dec.pred.");
}

template <typename T>
BasicTensor<T> mae_loss(BasicTape<T>& tape, const BasicTensor<T>& pred,
                        const BasicTensor<T>& targets, std::span<const MaskPlan> plans) {
  BMAE_REQUIRE(pred.shape() == targets.shape(),
               "mae_loss: pred " + to_string(pred.shape()) + " vs targets " +
                   to_string(targets.shape()));
  BMAE_REQUIRE(!plans.empty(), "mae_loss: empty batch");
  const auto k = plans[0].size();
  const auto n_masked = common_masked(plans, k);
  BMAE_REQUIRE(n_masked >= 1, "mae_loss: no masked patches");
  BMAE_REQUIRE(pred.rank() == 2 && pred.dim(0) == k * static_cast<std::int64_t>(plans.size()),
               "mae_loss: pred rows do not match the plans");
  std::vector<std::int64_t> rows;
  for (std::size_t b = 0; b < plans.size(); ++b)
    for (auto idx : plans[b].masked()) rows.push_back(static_cast<std::int64_t>(b) * k + idx);
  auto diff = tape.sub(tape.gather(pred, rows), tape.gather(targets, rows));
  return tape.mean_all(tape.square(diff));
}

template <typename T>
BasicTensor<T> mae_forward_loss(BasicTape<T>& tape, const BasicParameters<T>& params,
                                const BasicTensor<T>& patches, std::span<const MaskPlan> plans,
                                const ModelConfig& cfg) {
  BasicTensor<T> targets(patches.shape(),
                         recon_targets<T>(patches.data(), cfg.patch_dim(), cfg.norm_eps));
  auto latents = encode(tape, params, patches, plans, cfg);
  auto pred = decode(tape, params, latents, plans, cfg);
  return mae_loss(tape, pred, targets, plans);
}

template <typename T>
BasicTensor<T> pooled_features(BasicTape<T>& tape, const BasicParameters<T>& params,
                               const BasicTensor<T>& patches, const ModelConfig& cfg) {
  const auto k = cfg.n_patches();
  BMAE_REQUIRE(patches.rank() == 2 && patches.dim(0) % k == 0,
               "pooled_features: patches " + to_string(patches.shape()));
  const auto batch = patches.dim(0) / k;
  const std::vector<MaskPlan> plans(static_cast<std::size_t>(batch), no_mask(k));
  auto x = encode(tape, params, patches, plans, cfg);
  return tape.mean(tape.reshape(x, {batch, k, cfg.embed_dim}), 1);
}

template <typename T>
BasicTensor<T> apply_head(BasicTape<T>& tape, const BasicParameters<T>& params,
                          const BasicTensor<T>& features) {
  return linear(tape, features, params, "head.");
}

template <typename T>
BasicTensor<T> classify(BasicTape<T>& tape, const BasicParameters<T>& params,
                        const BasicTensor<T>& patches, const ModelConfig& cfg) {
  return apply_head(tape, params, pooled_features(tape, params, patches, cfg));
}

#define BMAE_INSTANTIATE(T)                                                              \
  template BasicTensor<T> encode(BasicTape<T>&, const BasicParameters<T>&,               \
                                 const BasicTensor<T>&, std::span<const MaskPlan>,       \
                                 const ModelConfig&);                                    \
  template BasicTensor<T> decode(BasicTape<T>&, const BasicParameters<T>&,               \
                                 const BasicTensor<T>&, std::span<const MaskPlan>,       \
                                 const ModelConfig&);                                    \
  template BasicTensor<T> mae_loss(BasicTape<T>&, const BasicTensor<T>&,                 \
                                   const BasicTensor<T>&, std::span<const MaskPlan>);    \
  template BasicTensor<T> mae_forward_loss(BasicTape<T>&, const BasicParameters<T>&,     \
                                           const BasicTensor<T>&,                        \
                                           std::span<const MaskPlan>, const ModelConfig&); \
  template BasicTensor<T> pooled_features(BasicTape<T>&, const BasicParameters<T>&,      \
                                          const BasicTensor<T>&, const ModelConfig&);    \
  template BasicTensor<T> apply_head(BasicTape<T>&, const BasicParameters<T>&,           \
                                     const BasicTensor<T>&);                             \
  template BasicTensor<T> classify(BasicTape<T>&, const BasicParameters<T>&,             \
                                   const BasicTensor<T>&, const ModelConfig&);

BMAE_INSTANTIATE(float)
BMAE_INSTANTIATE(double)

#undef BMAE_INSTANTIATE

}  // namespace bmae
