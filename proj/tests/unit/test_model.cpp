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
#include <set>

#include "bmae/error.hpp"
#include "bmae/model.hpp"
#include "doctest.h"
#include "unit/gradcheck.hpp"
#include "unit/mae_oracle.hpp"

using namespace bmae;
using testing::Mat;

namespace {

ModelConfig toy(std::int64_t h = 32, std::int64_t w = 32) {
  ModelConfig c;
  c.input_h = h;
  c.input_w = w;
  c.embed_dim = 8;
  c.enc_depth = 1;
  c.enc_heads = 2;
  c.dec_dim = 8;
  c.dec_depth = 1;
  c.dec_heads = 2;
  c.n_classes = 3;
  c.mask_ratio = 0.5;
  return c;
}

// Replaces every trainable array with N(0, scale) draws (gains around 1) so
// that all code paths carry signal.
template <typename T>
void randomize(BasicParameters<T>& p, std::uint64_t seed, double scale = 0.3) {
  for (auto& e : p.entries()) {
    if (!e.trainable) continue;
    Prng rng(seed, e.name);
    const bool gain = e.name.ends_with(".g");
    for (auto& v : e.tensor.mutable_data()) v = static_cast<T>((gain ? 1.0 : 0.0) + scale * rng.normal());
  }
}

Mat random_patches(std::int64_t k, std::int64_t dim, std::uint64_t seed) {
  Prng rng(seed, "patches");
  Mat m(k, std::vector<double>(dim));
  for (auto& row : m)
    for (auto& v : row) v = rng.normal();
  return m;
}

template <typename T>
BasicTensor<T> stack(const std::vector<Mat>& items) {
  std::vector<T> v;
  for (const auto& m : items)
    for (const auto& row : m) v.insert(v.end(), row.begin(), row.end());
  const auto rows = static_cast<std::int64_t>(items.size() * items[0].size());
  return BasicTensor<T>({rows, static_cast<std::int64_t>(items[0][0].size())}, std::move(v));
}

double rel_err(std::span<const double> got, const Mat& want) {
  double d2 = 0, w2 = 0;
  std::size_t i = 0;
  for (const auto& row : want)
    for (double w : row) {
      d2 += (got[i] - w) * (got[i] - w);
      w2 += w * w;
      ++i;
    }
  return std::sqrt(d2 / std::max(w2, 1e-300));
}

}  // namespace

TEST_CASE("model config validation and presets") {
  CHECK_NOTHROW(ModelConfig::tiny().validate());
  CHECK_NOTHROW(ModelConfig::base().validate());
  CHECK(ModelConfig::tiny().n_patches() == 256);
  CHECK(ModelConfig::tiny().n_masked() == 204);
  auto c = ModelConfig::tiny();
  c.mask_ratio = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::tiny();
  c.enc_heads = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::tiny();
  c.patch_w = 24;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::tiny();
  c.decoder_attn = DecoderAttn::kShiftedLocal;
  c.win_w = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_decoder_attn("shifted_local") == DecoderAttn::kShiftedLocal);
  CHECK_THROWS_AS(parse_decoder_attn("local"), ConfigError);
}

TEST_CASE("patchify: full-size grid and round trip") {
  Prng rng(1, "img");
  std::vector<float> img(128 * 512);
  for (auto& v : img) v = static_cast<float>(rng.normal());
  const auto ps = patchify(img, 128, 512, 16, 16);
  CHECK(ps.count() == 256);
  CHECK(ps.dim() == 256);
  CHECK(ps.rows == 8);
  CHECK(ps.cols == 32);
  CHECK(unpatchify(ps) == img);
  // Patch (r=2, c=5), element (i=3, j=7) comes from pixel (35, 87).
  CHECK(ps.values[(2 * 32 + 5) * 256 + 3 * 16 + 7] == img[35 * 512 + 87]);
  CHECK_THROWS_AS(patchify(img, 128, 512, 16, 24), ContractError);
  CHECK_THROWS_AS(patchify(std::span<const float>(img).first(100), 128, 512, 16, 16),
                  ContractError);
}

TEST_CASE("patchify: 32x32 toy corners") {
  std::vector<float> img(32 * 32, 0.0f);
  img[0] = 1;             // top-left
  img[31] = 2;            // top-right
  img[31 * 32] = 3;       // bottom-left
  img[31 * 32 + 31] = 4;  // bottom-right
  const auto ps = patchify(img, 32, 32, 16, 16);
  REQUIRE(ps.count() == 4);
  CHECK(ps.values[0 * 256 + 0] == 1);
  CHECK(ps.values[1 * 256 + 15] == 2);
  CHECK(ps.values[2 * 256 + 240] == 3);
  CHECK(ps.values[3 * 256 + 255] == 4);
  CHECK(std::count(ps.values.begin(), ps.values.end(), 0.0f) == 1024 - 4);
  CHECK(unpatchify(ps) == img);
}

TEST_CASE("make_mask: accounting") {
  Prng rng(3, "mask");
  const auto m = make_mask(256, 0.8, rng);
  CHECK(m.n_masked == 204);
  CHECK(m.visible().size() == 52);
  CHECK(make_mask(256, 0.0, rng).n_masked == 0);
  CHECK_THROWS_AS(make_mask(8, 1.0, rng), ContractError);
  for (std::int64_t k : {1, 2, 7, 16, 100, 256, 1000})
    for (double r : {0.0, 0.1, 0.25, 0.29, 0.5, 0.75, 0.8, 0.99}) {
      const auto plan = make_mask(k, r, rng);
      const auto vis = plan.visible(), msk = plan.masked();
      CHECK(static_cast<std::int64_t>(vis.size() + msk.size()) == k);
      // floor by exact integer arithmetic on the percentage
      const auto pct = static_cast<std::int64_t>(std::llround(r * 100));
      CHECK(plan.n_masked == pct * k / 100);
      std::set<std::int64_t> all(vis.begin(), vis.end());
      all.insert(msk.begin(), msk.end());
      CHECK(static_cast<std::int64_t>(all.size()) == k);
      // masked set = last n_masked entries of perm
      std::set<std::int64_t> tail(plan.perm.end() - plan.n_masked, plan.perm.end());
      CHECK(tail == std::set<std::int64_t>(msk.begin(), msk.end()));
    }
}

TEST_CASE("make_mask: every index masked with frequency one half") {
  Prng rng(4, "freq");
  std::vector<int> hits(8, 0);
  for (int t = 0; t < 10000; ++t)
    for (auto i : make_mask(8, 0.5, rng).masked()) ++hits[i];
  for (int h : hits) CHECK(std::abs(h / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("recon targets") {
  const double eps = 1e-6;
  std::vector<double> constant(256, 3.5);
  for (double v : recon_targets<double>(constant, 256, eps)) CHECK(v == 0.0);

  Prng rng(5, "t");
  std::vector<double> p(256), shifted(256);
  for (int i = 0; i < 256; ++i) {
    p[i] = 0.01 * rng.normal();  // small variance so eps matters
    shifted[i] = p[i] + 17.25;
  }
  const auto t = recon_targets<double>(p, 256, eps);
  double mean = 0, var = 0, pm = 0, pv = 0;
  for (int i = 0; i < 256; ++i) pm += p[i] / 256;
  for (int i = 0; i < 256; ++i) pv += (p[i] - pm) * (p[i] - pm) / 256;
  for (double v : t) mean += v / 256;
  for (double v : t) var += (v - mean) * (v - mean) / 256;
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(var - pv / (pv + eps)) < 1e-6);
  const auto ts = recon_targets<double>(shifted, 256, eps);
  for (int i = 0; i < 256; ++i) CHECK(ts[i] == doctest::Approx(t[i]).epsilon(1e-9));
}

TEST_CASE("mae_loss contracts") {
  Tape64 tape;
  Prng rng(6, "loss");
  const auto plan = make_mask(4, 0.5, rng);
  const std::vector<MaskPlan> plans{plan};
  auto targets = testing::random_tensor(rng, {4, 256}, 1.0, false);
  auto pred = targets.clone();
  for (auto i : plan.visible())
    for (int j = 0; j < 256; ++j) pred.mutable_data()[i * 256 + j] = 1e6 * (j % 7 - 3);
  CHECK(mae_loss(tape, pred, targets, plans).item() == 0.0);
  for (auto i : plan.masked())
    for (int j = 0; j < 256; ++j) pred.mutable_data()[i * 256 + j] += 1.0;
  CHECK(mae_loss(tape, pred, targets, plans).item() == doctest::Approx(1.0).epsilon(1e-12));

  // Random case against an explicit double loop.
  auto p2 = testing::random_tensor(rng, {4, 256}, 1.0, false);
  double total = 0;
  for (auto i : plan.masked())
    for (int j = 0; j < 256; ++j) {
      const double d = p2.data()[i * 256 + j] - targets.data()[i * 256 + j];
      total += d * d;
    }
  const double want = total / (plan.n_masked * 256.0);
  const double got = mae_loss(tape, p2, targets, plans).item();
  CHECK(std::abs(got - want) / want < 1e-7);

  const std::vector<MaskPlan> none{no_mask(4)};
  CHECK_THROWS_AS(mae_loss(tape, p2, targets, none), ContractError);
}

TEST_CASE("init: determinism, zero biases, sigma, groups") {
  const auto cfg = ModelConfig::tiny();
  const auto a = init_parameters<float>(cfg, 7);
  const auto b = init_parameters<float>(cfg, 7);
  const auto c = init_parameters<float>(cfg, 8);
  REQUIRE(a.size() == b.size());
  std::set<std::string> names;
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entries()[i];
    names.insert(ea.name);
    CHECK(std::equal(ea.tensor.data().begin(), ea.tensor.data().end(),
                     b.entries()[i].tensor.data().begin()));
    if (!std::equal(ea.tensor.data().begin(), ea.tensor.data().end(),
                    c.entries()[i].tensor.data().begin()))
      any_diff = true;
    const auto& n = ea.name;
    const bool is_bias = n.ends_with(".b") || n.ends_with(".b1") || n.ends_with(".b2") ||
                         n.ends_with(".bq") || n.ends_with(".bk") || n.ends_with(".bv") ||
                         n.ends_with(".bo");
    if (is_bias)
      for (float v : ea.tensor.data()) REQUIRE(v == 0.0f);
    if (n == "enc.pos" || n == "dec.pos") CHECK_FALSE(ea.trainable);
  }
  CHECK(any_diff);
  CHECK(names.size() == a.size());
  CHECK(group_of("enc.blocks.0.attn.wq") == ParamGroup::kEncoder);
  CHECK(group_of("dec.mask_token") == ParamGroup::kDecoder);
  CHECK(group_of("head.w") == ParamGroup::kHead);

  const auto w = a.at("enc.blocks.0.mlp.w1").data();  // 64 x 256
  REQUIRE(w.size() >= 10000);
  double m = 0, v = 0;
  for (std::size_t i = 0; i < 10000; ++i) m += w[i] / 10000.0;
  for (std::size_t i = 0; i < 10000; ++i) v += (w[i] - m) * (w[i] - m) / 10000.0;
  CHECK(std::sqrt(v) >= 0.015);
  CHECK(std::sqrt(v) <= 0.025);
  for (float x : a.at("dec.mask_token").data()) CHECK(std::abs(x) <= 0.04f);

  CHECK_NOTHROW(check_parameters(a, cfg, true, true));
  const auto enc_only = a.subset({ParamGroup::kEncoder});
  CHECK_FALSE(enc_only.has_group(ParamGroup::kDecoder));
  CHECK_FALSE(enc_only.has_group(ParamGroup::kHead));
  CHECK_NOTHROW(check_parameters(enc_only, cfg, false, false));
  CHECK_THROWS_AS(check_parameters(enc_only, cfg, true, false), ContractError);
}

TEST_CASE("encode: visibility contract and no-mask case") {
  const auto cfg = ModelConfig::tiny();
  auto params = init_parameters<float>(cfg, 1);
  Prng rng(2, "enc");
  std::vector<float> v(256 * 256);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  const auto plan = make_mask(256, 0.8, rng);
  const std::vector<MaskPlan> plans{plan};
  Tape tape(false);
  const auto base = encode(tape, params, Tensor({256, 256}, v), plans, cfg);
  CHECK(base.shape() == Shape{52, 64});

  const auto masked = plan.masked();
  auto swapped = v;
  std::swap_ranges(swapped.begin() + masked[0] * 256, swapped.begin() + masked[0] * 256 + 256,
                   swapped.begin() + masked[1] * 256);
  auto garbage = v;
  for (auto i : masked)
    for (int j = 0; j < 256; ++j) garbage[i * 256 + j] = 1e3f * static_cast<float>(rng.normal());
  for (const auto& alt : {swapped, garbage}) {
    const auto out = encode(tape, params, Tensor({256, 256}, alt), plans, cfg);
    CHECK(std::equal(out.data().begin(), out.data().end(), base.data().begin()));
  }

  const std::vector<MaskPlan> full{no_mask(256)};
  CHECK(encode(tape, params, Tensor({256, 256}, v), full, cfg).shape() == Shape{256, 64});
  CHECK_THROWS_AS(encode(tape, params, Tensor({255, 256}, std::vector<float>(255 * 256)), plans, cfg),
                  ContractError);
}

TEST_CASE("decode: full-size shape and zero weights") {
  const auto cfg = ModelConfig::tiny();
  auto params = init_parameters<float>(cfg, 1);
  Prng rng(3, "dec");
  std::vector<float> v(256 * 256);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  const std::vector<MaskPlan> plans{make_mask(256, 0.8, rng)};
  Tape tape(false);
  const auto z = encode(tape, params, Tensor({256, 256}, v), plans, cfg);
  CHECK(decode(tape, params, z, plans, cfg).shape() == Shape{256, 256});
  CHECK_THROWS_AS(decode(tape, params, z, std::vector<MaskPlan>{make_mask(256, 0.5, rng)}, cfg),
                  ContractError);

  for (auto& e : params.entries())
    if (e.trainable) std::fill(e.tensor.mutable_data().begin(), e.tensor.mutable_data().end(), 0.0f);
  auto& bias = params.at("dec.pred.b");
  for (int j = 0; j < 256; ++j) bias.mutable_data()[j] = 0.5f * j;
  const auto out = decode(tape, params, encode(tape, params, Tensor({256, 256}, v), plans, cfg),
                          plans, cfg);
  for (std::int64_t i = 0; i < 256; ++i)
    for (std::int64_t j = 0; j < 256; ++j) REQUIRE(out.data()[i * 256 + j] == 0.5f * j);
}

TEST_CASE("forward passes match the straight-line oracle") {
  const auto cfg = toy();
  auto params = init_parameters<double>(cfg, 11);
  randomize(params, 12);
  const std::vector<Mat> items{random_patches(4, 256, 1), random_patches(4, 256, 2)};
  const auto patches = stack<double>(items);
  Prng rng(13, "plans");
  const std::vector<MaskPlan> plans{make_mask(4, 0.5, rng), make_mask(4, 0.5, rng)};

  Tape64 tape(false);
  const auto z = encode(tape, params, patches, plans, cfg);
  const auto pred = decode(tape, params, z, plans, cfg);
  const auto logits = classify(tape, params, patches, cfg);
  for (std::size_t b = 0; b < 2; ++b) {
    const auto vis = plans[b].visible();
    const auto zo = testing::oracle_encode(params, cfg, items[b], vis);
    CHECK(rel_err(z.data().subspan(b * 2 * 8, 2 * 8), zo) < 1e-5);
    const auto po = testing::oracle_decode(params, cfg, zo, vis);
    CHECK(rel_err(pred.data().subspan(b * 4 * 256, 4 * 256), po) < 1e-5);
    const auto lo = testing::oracle_classify(params, cfg, items[b]);
    CHECK(rel_err(logits.data().subspan(b * 3, 3), Mat{lo}) < 1e-5);
  }
  CHECK(logits.shape() == Shape{2, 3});

  for (auto& x : params.at("head.w").mutable_data()) x = 0;
  for (auto& x : params.at("head.b").mutable_data()) x = 0;
  const auto zero_logits = classify(tape, params, patches, cfg);
  for (double x : zero_logits.data()) CHECK(x == 0.0);
}

TEST_CASE("shifted local attention") {
  // 4 x 4 grid, 2 x 2 windows.
  auto cfg = toy(64, 64);
  cfg.dec_depth = 2;
  cfg.decoder_attn = DecoderAttn::kShiftedLocal;
  cfg.win_h = cfg.win_w = 2;
  cfg.validate();
  auto params = init_parameters<double>(cfg, 21);
  randomize(params, 22);
  const auto item = random_patches(16, 256, 3);
  Prng rng(23, "plans");
  const std::vector<MaskPlan> plans{make_mask(16, 0.5, rng)};
  Tape64 tape(false);
  const auto z = encode(tape, params, stack<double>({item}), plans, cfg);
  const auto pred = decode(tape, params, z, plans, cfg);
  const auto zo = testing::oracle_encode(params, cfg, item, plans[0].visible());
  CHECK(rel_err(pred.data(), testing::oracle_decode(params, cfg, zo, plans[0].visible())) < 1e-5);

  // Window tables: every cell appears once per layer, and odd layers shift.
  for (std::int64_t layer : {0, 1}) {
    auto order = window_order(cfg, layer);
    REQUIRE(order.size() == 16);
    std::vector<std::int64_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::int64_t i = 0; i < 16; ++i) CHECK(sorted[i] == i);
  }
  CHECK(window_order(cfg, 0)[0] == 0);
  CHECK(window_order(cfg, 0)[1] == 1);
  CHECK(window_order(cfg, 0)[2] == 4);
  CHECK(window_order(cfg, 1)[0] == 5);  // shifted by (1, 1)

  // One unshifted layer: changing a latent only moves predictions in its window.
  cfg.dec_depth = 1;
  auto p1 = init_parameters<double>(cfg, 21);
  randomize(p1, 22);
  const std::vector<MaskPlan> none{no_mask(16)};
  const auto z1 = encode(tape, p1, stack<double>({item}), none, cfg);
  const auto base = decode(tape, p1, z1, none, cfg);
  auto z2 = z1.clone();
  for (std::int64_t j = 0; j < 8; ++j) z2.mutable_data()[0 * 8 + j] += 1.0;  // cell (0,0)
  const auto moved = decode(tape, p1, z2, none, cfg);
  for (std::int64_t cell = 0; cell < 16; ++cell) {
    bool changed = false;
    for (std::int64_t j = 0; j < 256; ++j)
      changed |= moved.data()[cell * 256 + j] != base.data()[cell * 256 + j];
    const bool same_window = cell == 0 || cell == 1 || cell == 4 || cell == 5;
    CHECK(changed == same_window);
  }
}

TEST_CASE("global attention equals a single full-grid window") {
  auto cfg = toy();
  auto params = init_parameters<double>(cfg, 31);
  randomize(params, 32);
  const auto patches = stack<double>({random_patches(4, 256, 4)});
  Prng rng(33, "plans");
  const std::vector<MaskPlan> plans{make_mask(4, 0.5, rng)};
  Tape64 tape(false);
  const auto z = encode(tape, params, patches, plans, cfg);
  const auto global = decode(tape, params, z, plans, cfg);
  cfg.decoder_attn = DecoderAttn::kShiftedLocal;
  cfg.win_h = cfg.grid_rows();
  cfg.win_w = cfg.grid_cols();
  cfg.dec_depth = 1;
  const auto local = decode(tape, params, z, plans, cfg);
  CHECK(std::equal(global.data().begin(), global.data().end(), local.data().begin()));
}

TEST_CASE("end-to-end gradients of the MAE and classifier losses") {
  auto cfg = toy();
  auto params = init_parameters<double>(cfg, 41);
  randomize(params, 42, 0.2);
  const auto patches = stack<double>({random_patches(4, 256, 5), random_patches(4, 256, 6)});
  Prng rng(43, "plans");
  const std::vector<MaskPlan> plans{make_mask(4, 0.5, rng), make_mask(4, 0.5, rng)};
  const std::vector<std::int32_t> labels{2, 0};

  // Key biases have an exactly zero gradient (softmax is shift invariant), so
  // the error is measured against an absolute floor of 1e-6.
  for (const auto group : {ParamGroup::kEncoder, ParamGroup::kDecoder}) {
    std::vector<Tensor64> inputs;
    for (auto& e : params.entries())
      if (e.trainable && group_of(e.name) == group) inputs.push_back(e.tensor);
    const auto r = testing::grad_check(
        inputs, [&](Tape64& t) { return mae_forward_loss(t, params, patches, plans, cfg); },
        1e-4, 1e-6, 24);
    CAPTURE(to_string(group));
    CAPTURE(r.worst_input);
    CHECK(r.max_rel_error < 1e-4);
  }
  std::vector<Tensor64> inputs;
  for (auto& e : params.entries())
    if (e.trainable && group_of(e.name) != ParamGroup::kDecoder) inputs.push_back(e.tensor);
  const auto r = testing::grad_check(
      inputs,
      [&](Tape64& t) { return t.cross_entropy(classify(t, params, patches, cfg), labels); },
      1e-4, 1e-6, 24);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("parameter copies") {
  const auto cfg = toy();
  auto a = init_parameters<float>(cfg, 1);
  auto b = a.clone();
  b.at("head.w").mutable_data()[0] += 1.0f;
  CHECK(a.at("head.w").data()[0] != b.at("head.w").data()[0]);
  auto fresh = init_parameters<float>(cfg, 2);
  a.assign_group(fresh, ParamGroup::kDecoder);
  CHECK(std::equal(a.at("dec.pred.w").data().begin(), a.at("dec.pred.w").data().end(),
                   fresh.at("dec.pred.w").data().begin()));
  CHECK(a.at("enc.patch_embed.w").data()[0] != fresh.at("enc.patch_embed.w").data()[0]);
  a.set_trainable(ParamGroup::kEncoder, false);
  CHECK_FALSE(a.at("enc.patch_embed.w").requires_grad());
  CHECK(a.at("head.w").requires_grad());
  CHECK_FALSE(a.at("enc.pos").requires_grad());
  const auto d = a.cast<double>();
  CHECK(d.at("head.w").data()[3] == static_cast<double>(a.at("head.w").data()[3]));
}
