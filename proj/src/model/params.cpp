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

#include "bmae/error.hpp"
#include "bmae/model.hpp"

namespace bmae {

namespace {

enum class Kind { kWeight, kBias, kGain, kFixedEnc, kFixedDec, kToken };

struct Spec {
  std::string name;
  Shape shape;
  Kind kind;
};

void block_specs(std::vector<Spec>& out, const std::string& prefix, std::int64_t dim,
                 std::int64_t mlp_ratio) {
  const auto hidden = dim * mlp_ratio;
  out.push_back({prefix + "ln1.g", {dim}, Kind::kGain});
  out.push_back({prefix + "ln1.b", {dim}, Kind::kBias});
  for (const char* m : {"q", "k", "v", "o"}) {
    out.push_back({prefix + "attn.w" + m, {dim, dim}, Kind::kWeight});
    out.push_back({prefix + "attn.b" + m, {dim}, Kind::kBias});
  }
  out.push_back({prefix + "ln2.g", {dim}, Kind::kGain});
  out.push_back({prefix + "ln2.b", {dim}, Kind::kBias});
  out.push_back({prefix + "mlp.w1", {dim, hidden}, Kind::kWeight});
  out.push_back({prefix + "mlp.b1", {hidden}, Kind::kBias});
  out.push_back({prefix + "mlp.w2", {hidden, dim}, Kind::kWeight});
  out.push_back({prefix + "mlp.b2", {dim}, Kind::kBias});
}

std::vector<Spec> layout(const ModelConfig& cfg) {
  const auto k = cfg.n_patches(), p = cfg.patch_dim();
  const auto d = cfg.embed_dim, dd = cfg.dec_dim;
  std::vector<Spec> s;
  s.push_back({"enc.patch_embed.w", {p, d}, Kind::kWeight});
  s.push_back({"enc.patch_embed.b", {d}, Kind::kBias});
  s.push_back({"enc.pos", {k, d}, Kind::kFixedEnc});
  for (std::int64_t i = 0; i < cfg.enc_depth; ++i)
    block_specs(s, "enc.blocks." + std::to_string(i) + ".", d, cfg.mlp_ratio);
  s.push_back({"enc.norm.g", {d}, Kind::kGain});
  s.push_back({"enc.norm.b", {d}, Kind::kBias});

  s.push_back({"dec.embed.w", {d, dd}, Kind::kWeight});
  s.push_back({"dec.embed.b", {dd}, Kind::kBias});
  s.push_back({"dec.mask_token", {dd}, Kind::kToken});
  s.push_back({"dec.pos", {k, dd}, Kind::kFixedDec});
  for (std::int64_t i = 0; i < cfg.dec_depth; ++i)
    block_specs(s, "dec.blocks." + std::to_string(i) + ".", dd, cfg.mlp_ratio);
  s.push_back({"dec.norm.g", {dd}, Kind::kGain});
  s.push_back({"dec.norm.b", {dd}, Kind::kBias});
  s.push_back({"dec.pred.w", {dd, p}, Kind::kWeight});
  s.push_back({"dec.pred.b", {p}, Kind::kBias});

  s.push_back({"head.w", {d, cfg.n_classes}, Kind::kWeight});
  s.push_back({"head.b", {cfg.n_classes}, Kind::kBias});
  return s;
}

}  // namespace

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kDecoder: return "decoder";
    case ParamGroup::kHead: return "head";
  }
  return "?";
}

ParamGroup group_of(std::string_view name) {
  if (name.starts_with("enc.")) return ParamGroup::kEncoder;
  if (name.starts_with("dec.")) return ParamGroup::kDecoder;
  if (name.starts_with("head.")) return ParamGroup::kHead;
  throw ContractError("parameter name '" + std::string(name) + "' has no group prefix");
}

template <typename T>
void BasicParameters<T>::add(std::string name, TensorT tensor, bool trainable) {
  group_of(name);
  BMAE_REQUIRE(!index_.contains(name), "duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  tensor.set_requires_grad(trainable);
  entries_.push_back({std::move(name), std::move(tensor), trainable});
}

template <typename T>
bool BasicParameters<T>::contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

template <typename T>
const BasicTensor<T>& BasicParameters<T>::at(std::string_view name) const {
  const auto it = index_.find(name);
  BMAE_REQUIRE(it != index_.end(), "missing parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

template <typename T>
BasicTensor<T>& BasicParameters<T>::at(std::string_view name) {
  const auto it = index_.find(name);
  BMAE_REQUIRE(it != index_.end(), "missing parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

template <typename T>
void BasicParameters<T>::set_trainable(ParamGroup g, bool on) {
  for (auto& e : entries_)
    if (group_of(e.name) == g) e.tensor.set_requires_grad(on && e.trainable);
}

template <typename T>
void BasicParameters<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
bool BasicParameters<T>::has_group(ParamGroup g) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [g](const Entry& e) { return group_of(e.name) == g; });
}

template <typename T>
BasicParameters<T> BasicParameters<T>::clone() const {
  BasicParameters out;
  for (const auto& e : entries_) {
    auto t = e.tensor.clone();
    out.add(e.name, t, e.trainable);
    out.at(e.name).set_requires_grad(e.tensor.requires_grad());
  }
  return out;
}

template <typename T>
BasicParameters<T> BasicParameters<T>::subset(std::initializer_list<ParamGroup> groups) const {
  BasicParameters out;
  for (const auto& e : entries_) {
    if (std::find(groups.begin(), groups.end(), group_of(e.name)) == groups.end()) continue;
    out.add(e.name, e.tensor.clone(), e.trainable);
  }
  return out;
}

template <typename T>
void BasicParameters<T>::assign_group(const BasicParameters& src, ParamGroup g) {
  for (const auto& e : src.entries_) {
    if (group_of(e.name) != g) continue;
    auto& dst = at(e.name);
    BMAE_REQUIRE(dst.shape() == e.tensor.shape(),
                 "assign_group: shape mismatch for " + e.name + ": " +
                     to_string(dst.shape()) + " vs " + to_string(e.tensor.shape()));
    std::copy(e.tensor.data().begin(), e.tensor.data().end(), dst.mutable_data().begin());
  }
}

template <typename T>
BasicParameters<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BasicParameters<T> params;
  for (auto& s : layout(cfg)) {
    const auto n = numel(s.shape);
    std::vector<T> v(static_cast<std::size_t>(n), T(0));
    bool trainable = true;
    switch (s.kind) {
      case Kind::kWeight:
      case Kind::kToken: {
        Prng rng(seed, "init/" + s.name);
        for (auto& x : v) x = static_cast<T>(rng.truncated_normal(0.02));
        break;
      }
      case Kind::kGain: std::fill(v.begin(), v.end(), T(1)); break;
      case Kind::kBias: break;
      case Kind::kFixedEnc:
        v = sincos_pos_embed_2d<T>(cfg.grid_rows(), cfg.grid_cols(), cfg.embed_dim);
        trainable = false;
        break;
      case Kind::kFixedDec:
        v = sincos_pos_embed_2d<T>(cfg.grid_rows(), cfg.grid_cols(), cfg.dec_dim);
        trainable = false;
        break;
    }
    params.add(s.name, BasicTensor<T>(s.shape, std::move(v)), trainable);
  }
  return params;
}

template <typename T>
void check_parameters(const BasicParameters<T>& p, const ModelConfig& cfg,
                      bool need_decoder, bool need_head) {
  for (const auto& s : layout(cfg)) {
    const auto g = group_of(s.name);
    if (!p.contains(s.name)) {
      if ((g == ParamGroup::kDecoder && !need_decoder) || (g == ParamGroup::kHead && !need_head))
        continue;
      throw ContractError("parameters: missing '" + s.name + "'");
    }
    const auto& t = p.at(s.name);
    BMAE_REQUIRE(t.shape() == s.shape, "parameters: '" + s.name + "' has shape " +
                                           to_string(t.shape()) + ", config expects " +
                                           to_string(s.shape));
  }
}

template class BasicParameters<float>;
template class BasicParameters<double>;
template BasicParameters<float> init_parameters(const ModelConfig&, std::uint64_t);
template BasicParameters<double> init_parameters(const ModelConfig&, std::uint64_t);
template void check_parameters(const BasicParameters<float>&, const ModelConfig&, bool, bool);
template void check_parameters(const BasicParameters<double>&, const ModelConfig&, bool, bool);

}  // namespace bmae
