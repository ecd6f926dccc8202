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

// Acceptance run. Prints one PASS/FAIL line per criterion. The learning
// criteria run on the reference corpus (20 classes x 100 recordings, seed 42)
// with the tiny model preset; the corpus is synthesized and cached under
// --data on first use.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bmae/checkpoint.hpp"
#include "bmae/config.hpp"
#include "bmae/corpus.hpp"
#include "bmae/curation.hpp"
#include "bmae/dataset.hpp"
#include "bmae/dsp.hpp"
#include "bmae/error.hpp"
#include "bmae/eval.hpp"
#include "bmae/manifest.hpp"
#include "bmae/model.hpp"
#include "bmae/prep.hpp"
#include "bmae/train.hpp"
#include "unit/dft_oracle.hpp"
#include "unit/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace bmae;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename... A>
std::string fmt(const char* f, A... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Desk-scale schedule for the learning criteria. One pretraining run is
// shared by all seeds; the seeds vary the supervised runs.
constexpr std::int64_t kPretrainSteps = 2000;
constexpr std::uint64_t kPretrainSeed = 0;
constexpr std::int64_t kStepsPerEpoch = 100;
constexpr std::int64_t kFinetuneEpochs = 4;
constexpr std::int64_t kProbeEpochs = 20;
constexpr int kSeeds = 3;

TrainConfig pretrain_config(std::uint64_t seed, std::int64_t steps) {
  auto t = TrainConfig::pretraining();
  t.steps_per_epoch = std::min(steps, kStepsPerEpoch);
  t.epochs = steps / t.steps_per_epoch;
  t.seed = seed;
  return t;
}

TrainConfig finetune_config(std::uint64_t seed) {
  auto t = TrainConfig::finetuning();
  t.epochs = kFinetuneEpochs;
  t.segments_per_file = 1;
  t.seed = seed;
  return t;
}

TrainConfig probe_config(std::uint64_t seed) {
  auto t = TrainConfig::finetuning();
  t.epochs = kProbeEpochs;
  t.seed = seed;
  return t;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation.
double stdev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string join(const std::vector<double>& v, const char* f = "%.2f") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(f, v[i]);
  return s;
}

template <typename T>
bool same_bits(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

bool same_group(const Parameters& a, const Parameters& b, ParamGroup g) {
  std::size_t n = 0;
  for (const auto& e : a.entries()) {
    if (group_of(e.name) != g) continue;
    if (!b.contains(e.name) || !same_bits(e.tensor.data(), b.at(e.name).data())) return false;
    ++n;
  }
  return n > 0;
}

// ---------------------------------------------------------------------------
// Reference corpus and the shared training runs

struct Reference {
  CorpusSpec spec;
  DspConfig dsp;
  ModelConfig model = ModelConfig::tiny();
  Manifest train, val;
  std::unique_ptr<CacheSource> source;
};

Reference prepare(const fs::path& dir) {
  Reference r;
  const auto stamp = to_json(r.spec).dump() + to_json(r.dsp).dump();
  const auto stamp_path = dir / "reference.json";
  std::string have;
  if (std::ifstream in(stamp_path); in) std::getline(in, have);
  const auto t0 = Clock::now();
  Manifest rows;
  if (have != stamp || !fs::exists(dir / "manifest.jsonl")) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    rows = synthesize_to_disk(r.spec, dir);
    std::ofstream(stamp_path) << stamp << "\n";
  } else {
    rows = read_manifest(dir / "manifest.jsonl");
  }
  const auto report = prep_cache(rows, dir, dir / "cache", r.dsp);
  if (!report.failed.empty()) throw DataError("prep failed for " + report.failed.front());
  r.train = filter_split(rows, Split::kTrain);
  r.val = filter_split(rows, Split::kVal);
  r.source = std::make_unique<CacheSource>(dir / "cache", r.dsp);
  std::printf("# reference corpus: %zu train / %zu val files, %lld segments cached (%.1f s)\n",
              r.train.size(), r.val.size(), static_cast<long long>(report.n_segments), since(t0));
  std::fflush(stdout);
  return r;
}

// Lazily computed runs shared by several criteria, keyed by seed.
class Lab {
 public:
  explicit Lab(const Reference& ref) : ref_(ref) {}

  template <typename F>
  auto timed(F&& f) {
    const auto t0 = Clock::now();
    auto out = f();
    transfer_seconds_ += since(t0);
    return std::optional(std::move(out));
  }

  const PretrainResult& pretrained() {
    if (!pretrained_) pretrained_ = timed([&] {
        return pretrain(ref_.train, *ref_.source, ref_.model,
                        pretrain_config(kPretrainSeed, kPretrainSteps));
      });
    return *pretrained_;
  }

  const SupervisedResult& finetuned(int seed) {
    auto& slot = finetuned_[seed];
    if (!slot) {
      const auto& init = pretrained().state.params;
      slot = timed([&] {
        return finetune(ref_.train, ref_.val, *ref_.source, ref_.model, finetune_config(seed), init);
      });
    }
    return *slot;
  }

  const SupervisedResult& scratch(int seed) {
    auto& slot = scratch_[seed];
    if (!slot) slot = timed([&] {
        const auto init = init_parameters<float>(ref_.model, static_cast<std::uint64_t>(seed));
        return finetune(ref_.train, ref_.val, *ref_.source, ref_.model, finetune_config(seed), init);
      });
    return *slot;
  }

  const SupervisedResult& probed(int seed) {
    auto& slot = probed_[seed];
    if (!slot) {
      const auto& init = pretrained().state.params;
      slot = linear_probe(ref_.train, ref_.val, *ref_.source, ref_.model, probe_config(seed), init);
    }
    return *slot;
  }

  const SupervisedResult& fraction(int seed, double f) {
    if (f == 1.0) return finetuned(seed);
    auto& slot = fractions_[{seed, f}];
    if (!slot) {
      const auto& init = pretrained().state.params;
      SupervisedOptions opts;
      opts.fraction = FractionSpec{f, static_cast<std::uint64_t>(seed), true};
      slot = finetune(ref_.train, ref_.val, *ref_.source, ref_.model, finetune_config(seed), init,
                      opts);
    }
    return *slot;
  }

  // Seconds spent in the pretraining and finetuning runs behind the transfer
  // comparison.
  double transfer_seconds() const { return transfer_seconds_; }

 private:
  const Reference& ref_;
  std::optional<PretrainResult> pretrained_;
  std::map<int, std::optional<SupervisedResult>> finetuned_, scratch_, probed_;
  std::map<std::pair<int, double>, std::optional<SupervisedResult>> fractions_;
  double transfer_seconds_ = 0.0;
};

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

template <typename T>
void randomize(BasicParameters<T>& p, std::uint64_t seed, double scale) {
  for (auto& e : p.entries()) {
    if (!e.trainable) continue;
    Prng rng(seed, e.name);
    const bool gain = e.name.ends_with(".g");
    for (auto& v : e.tensor.mutable_data()) v = (gain ? 1.0 : 0.0) + scale * rng.normal();
  }
}

Outcome gradient_fidelity() {
  using testing::project;
  using testing::random_tensor;
  const auto t0 = Clock::now();
  Prng rng(6, "fd");
  double worst = 0.0;
  std::string worst_name = "-";
  int n_checks = 0;
  auto check = [&](const std::string& name, const std::vector<Tensor64>& in,
                   const std::function<Tensor64(Tape64&)>& f, double floor = 1e-8,
                   std::size_t coords = 0) {
    const auto r = testing::grad_check(in, f, 1e-4, floor, coords);
    ++n_checks;
    if (r.max_rel_error > worst || !std::isfinite(r.max_rel_error)) {
      worst = r.max_rel_error;
      worst_name = name;
    }
  };

  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      auto a = random_tensor(rng, ta ? Shape{4, 3} : Shape{3, 4});
      auto b = random_tensor(rng, tb ? Shape{5, 4} : Shape{4, 5});
      check("matmul", {a, b}, [&](Tape64& t) { return project(t, t.matmul(a, b, ta, tb)); });
      auto a3 = random_tensor(rng, ta ? Shape{2, 4, 3} : Shape{2, 3, 4});
      auto b3 = random_tensor(rng, tb ? Shape{2, 5, 4} : Shape{2, 4, 5});
      check("batched matmul", {a3, b3},
            [&](Tape64& t) { return project(t, t.matmul(a3, b3, ta, tb)); });
    }
  {
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {3, 4});
    auto bias = random_tensor(rng, {4});
    check("add", {a, b}, [&](Tape64& t) { return project(t, t.add(a, b)); });
    check("broadcast add", {a, bias}, [&](Tape64& t) { return project(t, t.add(a, bias)); });
    check("sub", {a, b}, [&](Tape64& t) { return project(t, t.sub(a, b)); });
    check("mul", {a, b}, [&](Tape64& t) { return project(t, t.mul(a, b)); });
    check("scale", {a}, [&](Tape64& t) { return project(t, t.scale(a, -1.7)); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 5});
    check("softmax", {x}, [&](Tape64& t) { return project(t, t.softmax(x, -1)); });
    check("softmax axis 1", {x}, [&](Tape64& t) { return project(t, t.softmax(x, 1)); });
  }
  {
    auto x = random_tensor(rng, {4, 6});
    auto g = random_tensor(rng, {6});
    auto b = random_tensor(rng, {6});
    check("layernorm", {x, g, b},
          [&](Tape64& t) { return project(t, t.layernorm(x, g, b, 1e-6)); });
    auto x3 = random_tensor(rng, {2, 5, 3});
    check("layernorm axis 1", {x3},
          [&](Tape64& t) { return project(t, t.layernorm(x3, 1e-6, 1)); });
  }
  {
    auto x = random_tensor(rng, {20}, 2.0);
    check("gelu", {x}, [&](Tape64& t) { return project(t, t.gelu(x)); });
  }
  {
    auto x = random_tensor(rng, {4, 3});
    const std::vector<std::int64_t> idx{2, 0, 2, 3, 2};
    check("gather", {x}, [&](Tape64& t) { return project(t, t.gather(x, idx)); });
    auto y = random_tensor(rng, {5, 3});
    check("scatter_add", {y}, [&](Tape64& t) { return project(t, t.scatter_add(y, idx, 6)); });
  }
  {
    auto a = random_tensor(rng, {2, 3});
    auto b = random_tensor(rng, {4, 3});
    auto c = random_tensor(rng, {2, 5});
    check("concat", {a, b}, [&](Tape64& t) { return project(t, t.concat({a, b}, 0)); });
    check("concat axis 1", {a, c}, [&](Tape64& t) { return project(t, t.concat({a, c}, 1)); });
  }
  {
    auto x = random_tensor(rng, {3, 4, 2});
    check("mean", {x}, [&](Tape64& t) { return project(t, t.mean(x, 1)); });
    check("sum", {x}, [&](Tape64& t) { return project(t, t.sum(x, 0)); });
    check("mean_all", {x}, [&](Tape64& t) { return t.mean_all(t.square(x)); });
    check("sum_all", {x}, [&](Tape64& t) { return t.sum_all(t.square(x)); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 4, 5});
    check("transpose", {x}, [&](Tape64& t) { return project(t, t.transpose(x, 1, 2)); });
    check("reshape", {x}, [&](Tape64& t) { return project(t, t.reshape(x, {6, 20})); });
  }
  {
    auto logits = random_tensor(rng, {5, 8});
    const std::vector<std::int32_t> labels{0, 7, 3, 3, 1};
    check("cross_entropy", {logits}, [&](Tape64& t) { return t.cross_entropy(logits, labels); });
  }

  // End to end at the tiny preset. Key biases have an exactly zero gradient,
  // hence the absolute floor.
  for (const auto attn : {DecoderAttn::kGlobal, DecoderAttn::kShiftedLocal}) {
    auto cfg = ModelConfig::tiny();
    cfg.decoder_attn = attn;
    auto params = init_parameters<double>(cfg, 41);
    randomize(params, 42, 0.1);
    Prng data(43, "patches");
    auto patches = random_tensor(data, {2 * cfg.n_patches(), cfg.patch_dim()}, 1.0, false);
    const std::vector<MaskPlan> plans{make_mask(cfg.n_patches(), cfg.mask_ratio, data),
                                      make_mask(cfg.n_patches(), cfg.mask_ratio, data)};
    std::vector<Tensor64> inputs;
    for (auto& e : params.entries())
      if (e.trainable && group_of(e.name) != ParamGroup::kHead) inputs.push_back(e.tensor);
    check("mae loss, " + std::string(to_string(attn)) + " decoder", inputs,
          [&](Tape64& t) { return mae_forward_loss(t, params, patches, plans, cfg); }, 1e-6, 4);
    if (attn == DecoderAttn::kGlobal) {
      inputs.clear();
      for (auto& e : params.entries())
        if (e.trainable && group_of(e.name) != ParamGroup::kDecoder) inputs.push_back(e.tensor);
      const std::vector<std::int32_t> labels{3, 11};
      check("classifier loss", inputs,
            [&](Tape64& t) { return t.cross_entropy(classify(t, params, patches, cfg), labels); },
            1e-6, 4);
    }
  }
  const double secs = since(t0);
  Outcome o;
  o.pass = worst < 1e-4 && secs < 120.0;
  o.detail = fmt("%d checks, worst rel err %.2e (%s) < 1e-4; %.1f s < 120 s", n_checks, worst,
                 worst_name.c_str(), secs);
  return o;
}

// ---------------------------------------------------------------------------
// 2. Masking contracts

Outcome masking_contracts(const Reference& ref) {
  const auto& cfg = ref.model;
  const auto params = init_parameters<float>(cfg, 5);
  const auto ds = build_dataset(Manifest(ref.train.begin(), ref.train.begin() + 2), *ref.source);
  const std::span<const SegmentRef> segs(ds.segments.data(), 2);
  const auto patches = load_patches<float>(*ref.source, segs, cfg);
  const auto k = cfg.n_patches(), dim = cfg.patch_dim();

  Prng rng(7, "masking");
  const std::vector<MaskPlan> plans{make_mask(k, cfg.mask_ratio, rng),
                                    make_mask(k, cfg.mask_ratio, rng)};
  Tape tape(false);
  const auto z = encode(tape, params, patches, plans, cfg);
  auto garbage = patches.clone();
  for (std::size_t b = 0; b < plans.size(); ++b)
    for (auto i : plans[b].masked())
      for (std::int64_t j = 0; j < dim; ++j)
        garbage.mutable_data()[(static_cast<std::int64_t>(b) * k + i) * dim + j] =
            static_cast<float>(1e4 * rng.normal());
  const auto z2 = encode(tape, params, garbage, plans, cfg);
  const bool enc_ok = same_bits(z.data(), z2.data());

  const auto pred = decode(tape, params, z, plans, cfg);
  const auto targets = Tensor(patches.shape(), recon_targets<float>(patches.data(), dim, cfg.norm_eps));
  auto pred2 = pred.clone();
  for (std::size_t b = 0; b < plans.size(); ++b)
    for (auto i : plans[b].visible())
      for (std::int64_t j = 0; j < dim; ++j)
        pred2.mutable_data()[(static_cast<std::int64_t>(b) * k + i) * dim + j] =
            static_cast<float>(1e6 * rng.normal());
  const float l1 = mae_loss(tape, pred, targets, plans).item();
  const float l2 = mae_loss(tape, pred2, targets, plans).item();
  const bool loss_ok = std::bit_cast<std::uint32_t>(l1) == std::bit_cast<std::uint32_t>(l2);

  const auto grid = patchify(std::vector<float>(128 * 512, 0.0f), 128, 512, 16, 16).count();
  const auto n = make_mask(grid, 0.8, rng).n_masked;
  Outcome o;
  o.pass = enc_ok && loss_ok && grid == 256 && n == 204 && plans[0].n_masked == 204;
  o.detail = fmt("encode invariant to masked contents: %s; mae_loss invariant to visible "
                 "predictions: %s (%.9g); n_masked(%lld, 0.8) = %lld",
                 enc_ok ? "bitwise" : "NO", loss_ok ? "bitwise" : "NO", static_cast<double>(l1),
                 static_cast<long long>(grid), static_cast<long long>(n));
  return o;
}

// ---------------------------------------------------------------------------
// 3. DSP oracle

std::int64_t brute_force_windows(std::int64_t n, std::int64_t len, std::int64_t stride) {
  std::int64_t count = 0;
  for (std::int64_t start = 0;; start += stride) {
    ++count;
    if (start + len >= n) break;
  }
  return count;
}

Outcome dsp_oracle() {
  const DspConfig cfg;
  const auto len = static_cast<std::size_t>(cfg.segment_samples());
  Prng rng(3, "dsp-oracle");
  std::vector<float> x(len);
  for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
  const auto p = stft_power(x, cfg);

  // Every 8th frame plus the last one.
  long double err = 0, norm = 0;
  for (std::int64_t f = 0; f < p.cols; f += (f + 8 < p.cols ? 8 : std::max<std::int64_t>(1, p.cols - 1 - f))) {
    std::vector<long double> frame(static_cast<std::size_t>(cfg.win));
    for (std::size_t n = 0; n < frame.size(); ++n)
      frame[n] = static_cast<long double>(x[static_cast<std::size_t>(f * cfg.hop) + n]) *
                 testing::hann(n, frame.size());
    const auto ref = testing::naive_power(frame);
    for (int b = 0; b < cfg.n_bins(); ++b) {
      err += (p(b, f) - ref[b]) * (p(b, f) - ref[b]);
      norm += ref[b] * ref[b];
    }
    if (f == p.cols - 1) break;
  }
  const double stft_rel = static_cast<double>(std::sqrt(err / norm));

  std::vector<long double> w(static_cast<std::size_t>(cfg.n_mels * cfg.n_bins()));
  for (int m = 0; m < cfg.n_mels; ++m)
    for (int b = 0; b < cfg.n_bins(); ++b) w[m * cfg.n_bins() + b] = testing::oracle_weight(m, b, cfg);
  const auto mel = mel_project(p, cfg);
  err = norm = 0;
  for (int m = 0; m < cfg.n_mels; ++m)
    for (std::int64_t f = 0; f < p.cols; ++f) {
      long double ref = 0;
      for (int b = 0; b < cfg.n_bins(); ++b) ref += w[m * cfg.n_bins() + b] * p(b, f);
      err += (mel(m, f) - ref) * (mel(m, f) - ref);
      norm += ref * ref;
    }
  const double mel_rel = static_cast<double>(std::sqrt(err / norm));

  int count_ok = 0;
  Prng durations(2, "durations");
  for (int i = 0; i < 100; ++i) {
    const auto n = static_cast<std::int64_t>(durations.uniform(0.5, 30.0) * cfg.sample_rate);
    const auto want = brute_force_windows(n, cfg.segment_samples(), cfg.stride_samples());
    if (segment_count(n, cfg) == want && static_cast<std::int64_t>(segment(n, cfg).size()) == want)
      ++count_ok;
  }
  Outcome o;
  o.pass = stft_rel < 1e-6 && mel_rel < 1e-6 && count_ok == 100;
  o.detail = fmt("stft_power rel err %.2e, mel_project rel err %.2e (< 1e-6); segment counts "
                 "%d/100 match",
                 stft_rel, mel_rel, count_ok);
  return o;
}

// ---------------------------------------------------------------------------
// 4. Metric oracle

// Uniform-random predictions: the rank of the true label is uniform on
// 0..C-1. Ranks are drawn by stratified sampling (one draw per stratum of
// [0, 1), strata shuffled over files), which keeps each file's marginal
// uniform while removing most of the Monte Carlo spread. The remaining scores
// are uniform draws in random class order.
Outcome metric_oracle() {
  constexpr std::int64_t kClasses = 1212;
  constexpr std::int64_t kFiles = 10000;
  Prng rng(4, "chance");
  const auto strata = rng.permutation(kFiles);
  std::vector<FileOutcome> outcomes;
  std::vector<double> probs(kClasses), draws(kClasses);
  for (std::int64_t i = 0; i < kFiles; ++i) {
    const auto label = static_cast<std::int32_t>(i % kClasses);
    const double u = (static_cast<double>(strata[i]) + rng.uniform()) / kFiles;
    const auto rank = static_cast<std::int64_t>(u * kClasses);
    for (auto& d : draws) d = rng.uniform();
    std::sort(draws.begin(), draws.end(), std::greater<>());
    const auto order = rng.permutation(kClasses - 1);
    probs[label] = draws[rank];
    std::int64_t next = 0;
    for (std::int64_t r = 0; r < kClasses; ++r) {
      if (r == rank) continue;
      auto c = order[next++];
      if (c >= label) ++c;
      probs[c] = draws[r];
    }
    outcomes.push_back({"f" + std::to_string(i), label, topk_hit(probs, label, 1),
                        topk_hit(probs, label, 5)});
  }
  std::vector<std::int32_t> classes(kClasses);
  std::iota(classes.begin(), classes.end(), 0);
  const auto chance = class_averaged(outcomes, classes);

  // Two correct files of class 0, one wrong file of class 1.
  const std::vector<FileOutcome> skewed{{"a", 0, true, true}, {"b", 0, true, true}, {"c", 1, false, false}};
  const std::vector<std::int32_t> two{0, 1};
  const auto skew = class_averaged(skewed, two);

  Outcome o;
  o.pass = chance.top1 >= 0.05 && chance.top1 <= 0.11 && chance.top5 >= 0.31 &&
           chance.top5 <= 0.51 && skew.top1 == 50.0;
  o.detail = fmt("C=1212, 10000 files: top-1 %.3f%% in [0.05, 0.11], top-5 %.3f%% in [0.31, "
                 "0.51] (expected %.3f / %.3f); skewed case %.1f",
                 chance.top1, chance.top5, 100.0 / kClasses, 500.0 / kClasses, skew.top1);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Transfer ordering

Outcome transfer_ordering(Lab& lab) {
  std::vector<double> pre, scr;
  for (int s = 0; s < kSeeds; ++s) {
    pre.push_back(lab.finetuned(s).best_val.top1);
    scr.push_back(lab.scratch(s).best_val.top1);
  }
  const double gap = mean(pre) - mean(scr);
  const double secs = lab.transfer_seconds();
  Outcome o;
  o.pass = gap >= 5.0 && secs < 1800.0;
  o.detail = fmt("val top-1 after %lld finetune epochs, pretrained (%lld shared steps) [%s] mean "
                 "%.2f vs scratch [%s] mean %.2f: %+.2f >= 5; %.0f s < 1800 s",
                 static_cast<long long>(kFinetuneEpochs), static_cast<long long>(kPretrainSteps),
                 join(pre).c_str(), mean(pre), join(scr).c_str(), mean(scr), gap, secs);
  return o;
}

// ---------------------------------------------------------------------------
// 6. Probe ordering

Outcome probe_ordering(Lab& lab) {
  std::vector<double> probe, full;
  double chance = 0.0;
  for (int s = 0; s < kSeeds; ++s) {
    const auto& r = lab.probed(s);
    probe.push_back(r.best_val.top1);
    full.push_back(lab.finetuned(s).best_val.top1);
    chance = 100.0 / static_cast<double>(r.best_val.n_eval_classes);
  }
  Outcome o;
  o.pass = mean(probe) > 2.0 * chance && mean(probe) < mean(full);
  o.detail = fmt("probe [%s] mean %.2f > 2 x chance %.2f and < finetune mean %.2f", join(probe).c_str(),
                 mean(probe), 2.0 * chance, mean(full));
  return o;
}

// ---------------------------------------------------------------------------
// 7. Mix exactness

Outcome mix_exactness(const Reference& ref) {
  bool ratios_ok = true;
  std::string shown;
  for (const auto* text : {"1:1", "3:1", "7:1", "15:1"}) {
    const auto m = MixSpec::parse(text);
    try {
      m.validate(64);
    } catch (const ConfigError&) {
      ratios_ok = false;
    }
    const auto g = m.n_general(64), b = m.n_bio(64);
    ratios_ok = ratios_ok && g + b == 64 && g * m.ratio_bio == b * m.ratio_general;
    shown += fmt("%s=%lld+%lld ", text, static_cast<long long>(g), static_cast<long long>(b));
  }

  auto t = pretrain_config(0, 4);
  t.batch_size = 64;
  PretrainOptions opts;
  opts.mix = MixSpec::parse("15:1");
  const auto r = pretrain(ref.train, *ref.source, ref.model, t, opts);
  bool batches_ok = !r.steps.empty();
  for (const auto& s : r.steps) batches_ok = batches_ok && s.n_general == 60 && s.n_bio == 4;
  Outcome o;
  o.pass = ratios_ok && batches_ok;
  o.detail = fmt("%zu logged batches at 15:1, batch 64: %s 60 general + 4 bio; ratios %s",
                 r.steps.size(), batches_ok ? "all" : "NOT all", shown.c_str());
  return o;
}

// ---------------------------------------------------------------------------
// 8. Fraction monotonicity

Outcome fraction_monotonicity(Lab& lab) {
  const std::vector<double> fractions{1.0, 0.5, 0.25};
  std::vector<std::vector<double>> acc(fractions.size());
  for (std::size_t i = 0; i < fractions.size(); ++i)
    for (int s = 0; s < kSeeds; ++s) acc[i].push_back(lab.fraction(s, fractions[i]).best_val.top1);
  bool pass = true;
  std::string detail;
  for (std::size_t i = 0; i < fractions.size(); ++i)
    detail += fmt("f=%.2f [%s] mean %.2f; ", fractions[i], join(acc[i]).c_str(), mean(acc[i]));
  for (std::size_t i = 0; i + 1 < fractions.size(); ++i) {
    const double gap = mean(acc[i]) - mean(acc[i + 1]);
    const double se = std::sqrt((std::pow(stdev(acc[i]), 2) + std::pow(stdev(acc[i + 1]), 2)) / kSeeds);
    pass = pass && gap >= -se;
    detail += fmt("gap %.2f/%.2f: %+.2f (SE %.2f)%s", fractions[i], fractions[i + 1], gap, se,
                  i + 2 < fractions.size() ? "; " : "");
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 9. Curation contracts

// Silent: no call overlaps the window. Vocal: calls cover at least one full
// call length of the window. Anything in between is left out.
std::map<std::pair<std::string, std::int64_t>, bool> certify_segments(const Reference& ref) {
  const auto protos = generate_prototypes(ref.spec.n_classes, ref.spec.seed, ref.spec.domain_mix);
  std::set<std::string> wanted;
  for (const auto& row : ref.train) wanted.insert(row.id);
  std::map<std::pair<std::string, std::int64_t>, bool> out;
  for (const auto& plan : plan_corpus(ref.spec)) {
    if (!wanted.count(plan.id)) continue;
    const auto rec = render_planned(plan, protos, ref.spec);
    for (const auto& span : segment(static_cast<std::int64_t>(rec.samples.size()), ref.dsp)) {
      const double lo = static_cast<double>(span.start_sample) / rec.sample_rate;
      const double hi = lo + ref.dsp.segment_s;
      double covered = 0.0;
      for (const auto& ev : rec.events)
        covered += std::max(0.0, std::min(hi, ev.end_s) - std::max(lo, ev.start_s));
      if (covered == 0.0)
        out[{rec.id, span.segment_idx}] = true;
      else if (covered >= kCallSeconds - 1e-9)
        out[{rec.id, span.segment_idx}] = false;
    }
  }
  return out;
}

Outcome curation_contracts(const Reference& ref, Lab& lab) {
  const auto& classifier = lab.finetuned(0).best;
  const auto ds = build_dataset(ref.train, *ref.source);
  const auto scores = score_segments_classifier(ds, *ref.source, classifier, ref.model);
  const auto mode = FilterMode::kConfKeepHigh;

  const auto at_zero = filter_segments(scores, mode, 0.0);
  const bool zero_ok = at_zero.report.segments_dropped_pct == 0.0 &&
                       at_zero.kept.size() == scores.size();

  bool monotone = true;
  std::vector<std::size_t> previous = at_zero.kept;
  for (int q = 1; q <= 10; ++q) {
    const auto kept = filter_segments(scores, mode, score_quantile(scores, mode, q / 10.0)).kept;
    monotone = monotone && kept.size() <= previous.size() &&
               std::includes(previous.begin(), previous.end(), kept.begin(), kept.end());
    previous = kept;
  }

  const double tau = score_quantile(scores, mode, 0.5);
  const auto median = filter_segments(scores, mode, tau);
  std::vector<bool> kept(scores.size(), false);
  for (auto i : median.kept) kept[i] = true;
  const auto certified = certify_segments(ref);
  std::int64_t n_silent = 0, n_vocal = 0, drop_silent = 0, drop_vocal = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto it = certified.find({scores[i].recording_id, scores[i].segment_idx});
    if (it == certified.end()) continue;
    (it->second ? n_silent : n_vocal) += 1;
    if (!kept[i]) (it->second ? drop_silent : drop_vocal) += 1;
  }
  const double silent_pct = n_silent ? 100.0 * drop_silent / n_silent : 0.0;
  const double vocal_pct = n_vocal ? 100.0 * drop_vocal / n_vocal : 0.0;
  Outcome o;
  o.pass = zero_ok && monotone && n_silent > 0 && n_vocal > 0 && silent_pct > vocal_pct;
  o.detail = fmt("tau=0 drops %.1f%%; kept sets nested over 11 quantiles: %s; median tau %.3f "
                 "drops %.1f%% of %lld silent vs %.1f%% of %lld vocal segments",
                 at_zero.report.segments_dropped_pct, monotone ? "yes" : "NO", tau, silent_pct,
                 static_cast<long long>(n_silent), vocal_pct, static_cast<long long>(n_vocal));
  return o;
}

// ---------------------------------------------------------------------------
// 10. Freeze contracts

Outcome freeze_contracts(const Reference& ref, Lab& lab) {
  auto t = pretrain_config(0, 10);
  const auto init = init_parameters<float>(ref.model, 0);
  PretrainOptions opts;
  opts.freeze_decoder = true;
  opts.init = &init;
  const auto r = pretrain(ref.train, *ref.source, ref.model, t, opts);
  const bool dec_same = same_group(init, r.state.params, ParamGroup::kDecoder);
  const bool enc_moved = !same_group(init, r.state.params, ParamGroup::kEncoder);

  bool probe_same = true;
  for (int s = 0; s < kSeeds; ++s)
    probe_same = probe_same && same_group(lab.pretrained().state.params, lab.probed(s).last.params,
                                          ParamGroup::kEncoder) &&
                 same_group(lab.pretrained().state.params, lab.probed(s).best, ParamGroup::kEncoder);
  Outcome o;
  o.pass = r.steps.size() == 10 && dec_same && enc_moved && probe_same;
  o.detail = fmt("freeze-decoder over %zu steps: decoder %s, encoder %s; linear probe encoder %s "
                 "(%d seeds)",
                 r.steps.size(), dec_same ? "bitwise unchanged" : "CHANGED",
                 enc_moved ? "updated" : "NOT updated", probe_same ? "bitwise unchanged" : "CHANGED",
                 kSeeds);
  return o;
}

// ---------------------------------------------------------------------------
// 11. Persistence

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome persistence(const Reference& ref, const fs::path& scratch_dir) {
  fs::create_directories(scratch_dir);
  auto t = pretrain_config(0, 20);
  t.steps_per_epoch = 5;
  t.epochs = 4;
  t.save_every = 1;
  CheckpointMeta meta;
  meta.model = ref.model;
  meta.train = to_json(t);
  const auto mid = scratch_dir / "epoch_0002.bmae";
  PretrainOptions opts;
  opts.on_epoch = [&](const TrainState& s, const std::vector<TraceRecord>&) {
    if (s.epoch != 2) return;
    auto m = meta;
    m.epoch = s.epoch;
    save_checkpoint(mid, s.params, m, &s.optim);
  };
  const auto full = pretrain(ref.train, *ref.source, ref.model, t, opts);

  // Bitwise round trip of parameters and optimizer moments, and stable bytes.
  const auto last = scratch_dir / "last.bmae";
  save_checkpoint(last, full.state.params, meta, &full.state.optim);
  const auto loaded = load_checkpoint(last);
  bool round_trip = loaded.optim.has_value() && loaded.params.size() == full.state.params.size();
  for (const auto& e : full.state.params.entries())
    round_trip = round_trip && loaded.params.contains(e.name) &&
                 same_bits(e.tensor.data(), loaded.params.at(e.name).data());
  if (round_trip)
    for (const auto& [name, m] : full.state.optim.m)
      round_trip = round_trip && loaded.optim->m.count(name) &&
                   same_bits<float>(m, loaded.optim->m.at(name)) &&
                   same_bits<float>(full.state.optim.v.at(name), loaded.optim->v.at(name));
  const auto resaved = scratch_dir / "resaved.bmae";
  save_checkpoint(resaved, loaded.params, loaded.meta, &*loaded.optim);
  const bool stable = file_bytes(last) == file_bytes(resaved);

  // Resume from the epoch-2 checkpoint.
  const auto ck = load_checkpoint(mid);
  TrainState state{ck.params, *ck.optim, ck.meta.epoch};
  PretrainOptions resume_opts;
  resume_opts.resume = &state;
  const auto resumed = pretrain(ref.train, *ref.source, ref.model, t, resume_opts);
  bool trace_same = resumed.steps.size() == 10 && full.steps.size() == 20;
  for (std::size_t i = 0; trace_same && i < resumed.steps.size(); ++i) {
    const auto& a = full.steps[10 + i];
    const auto& b = resumed.steps[i];
    trace_same = a.step == b.step && std::bit_cast<std::uint64_t>(a.loss) == std::bit_cast<std::uint64_t>(b.loss);
  }
  bool params_same = true;
  for (const auto& e : full.state.params.entries())
    params_same = params_same && same_bits(e.tensor.data(), resumed.state.params.at(e.name).data());

  const auto enc = scratch_dir / "encoder.bmae";
  export_encoder(enc, full.state.params, meta);
  const auto exported = load_checkpoint(enc);
  bool enc_only = !exported.optim && exported.params.size() > 0;
  for (const auto& e : exported.params.entries())
    enc_only = enc_only && group_of(e.name) == ParamGroup::kEncoder;
  enc_only = enc_only && !exported.params.has_group(ParamGroup::kDecoder) &&
             !exported.params.has_group(ParamGroup::kHead);

  Outcome o;
  o.pass = round_trip && stable && trace_same && params_same && enc_only;
  o.detail = fmt("round trip %s, re-save bytes %s; resume from epoch 2: loss trace %s, final "
                 "weights %s; encoder export %s",
                 round_trip ? "bitwise" : "DIFFERS", stable ? "identical" : "DIFFER",
                 trace_same ? "bitwise equal" : "DIFFERS", params_same ? "bitwise equal" : "DIFFER",
                 enc_only ? "encoder arrays only" : "HAS decoder/head/optimizer arrays");
  return o;
}

// ---------------------------------------------------------------------------
// 12. Pretraining progress

Outcome pretraining_progress(const Reference& ref) {
  std::vector<double> first, after, ratio, tail;
  for (int s = 0; s < kSeeds; ++s) {
    const auto r = pretrain(ref.train, *ref.source, ref.model, pretrain_config(s, 200));
    first.push_back(r.steps.front().loss);
    after.push_back(r.steps.back().loss);
    ratio.push_back(after.back() / first.back());
    double t = 0.0;
    for (std::size_t i = r.steps.size() - 10; i < r.steps.size(); ++i) t += r.steps[i].loss / 10.0;
    tail.push_back(t);
  }
  Outcome o;
  o.pass = mean(ratio) <= 0.5;
  o.detail = fmt("step-1 loss [%s], step-200 loss [%s]; mean ratio %.3f, required <= 0.5 "
                 "(last-10-step mean [%s])",
                 join(first, "%.4f").c_str(), join(after, "%.4f").c_str(), mean(ratio),
                 join(tail, "%.4f").c_str());
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bmae acceptance run"};
  std::string data = "acceptance_data";
  std::vector<int> only;
  std::vector<int> expect_fail;
  app.add_option("--data", data, "Reference corpus directory; created when missing");
  app.add_option("--only", only, "Criteria to run, e.g. 1,2,7")->delimiter(',');
  app.add_option("--expect-fail", expect_fail,
                 "Criteria known to fail; they do not change the exit status")
      ->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected(only.begin(), only.end());
  const std::set<int> expected(expect_fail.begin(), expect_fail.end());
  auto wanted = [&](int id) { return selected.empty() || selected.count(id) > 0; };

  const auto t0 = Clock::now();
  std::optional<Reference> ref;
  std::optional<Lab> lab;
  auto reference = [&]() -> const Reference& {
    if (!ref) {
      ref = prepare(data);
      lab.emplace(*ref);
    }
    return *ref;
  };
  auto shared = [&]() -> Lab& {
    reference();
    return *lab;
  };

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient fidelity", [&] { return gradient_fidelity(); }},
      {"masking contracts", [&] { return masking_contracts(reference()); }},
      {"DSP oracle", [&] { return dsp_oracle(); }},
      {"metric oracle", [&] { return metric_oracle(); }},
      {"transfer ordering", [&] { return transfer_ordering(shared()); }},
      {"probe ordering", [&] { return probe_ordering(shared()); }},
      {"mix exactness", [&] { return mix_exactness(reference()); }},
      {"fraction monotonicity", [&] { return fraction_monotonicity(shared()); }},
      {"curation contracts", [&] { return curation_contracts(reference(), shared()); }},
      {"freeze contracts", [&] { return freeze_contracts(reference(), shared()); }},
      {"persistence", [&] { return persistence(reference(), fs::path(data) / "persistence"); }},
      {"pretraining progress", [&] { return pretraining_progress(reference()); }},
  };

  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted(id)) continue;
    const auto c0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const bool xfail = expected.count(id) > 0;
    std::printf("%s %2d %s: %s [%.1f s]%s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str(), since(c0), xfail ? (o.pass ? " (listed as expected failure)" : " (expected failure)") : "");
    std::fflush(stdout);
    if (o.pass == xfail) ++unexpected;
  }
  std::printf("# total %.1f s\n", since(t0));
  return unexpected == 0 ? 0 : 1;
}
