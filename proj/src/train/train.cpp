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

#include "bmae/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "bmae/error.hpp"
#include "bmae/prng.hpp"
#include "bmae/tape.hpp"

namespace bmae {

void TrainConfig::validate(bool mix_active) const {
  auto bad = [](const std::string& what) { return ConfigError("train: " + what); };
  if (!(base_lr > 0.0)) throw bad("base_lr must be > 0");
  if (!(weight_decay >= 0.0)) throw bad("weight_decay must be >= 0");
  if (epochs < 1) throw bad("epochs must be >= 1");
  if (batch_size < 1) throw bad("batch_size must be >= 1");
  if (mix_active && batch_size < 2) throw bad("batch_size must be >= 2 with a mix ratio");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) throw bad("warmup_frac must be in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw bad("betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw bad("adam_eps must be > 0");
  if (schedule != "cosine") throw bad("unknown schedule '" + schedule + "'");
  if (grad_clip && !(*grad_clip > 0.0)) throw bad("grad_clip must be > 0");
  if (steps_per_epoch < 0 || segments_per_file < 0 || save_every < 0)
    throw bad("steps_per_epoch, segments_per_file and save_every must be >= 0");
}

TrainConfig TrainConfig::pretraining() {
  TrainConfig c;
  c.beta2 = 0.95;
  return c;
}

TrainConfig TrainConfig::finetuning() {
  TrainConfig c;
  c.beta2 = 0.999;
  return c;
}

template <typename T>
void adamw_step(BasicParameters<T>& params, BasicOptimState<T>& state,
                const TrainConfig& cfg, double lr) {
  BMAE_REQUIRE(lr >= 0.0, "adamw_step: negative learning rate");
  std::vector<typename BasicParameters<T>::Entry*> live;
  double sq = 0.0;
  for (auto& e : params.entries()) {
    if (!e.trainable || !e.tensor.requires_grad() || !e.tensor.has_grad()) continue;
    for (T g : e.tensor.mutable_grad()) {
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("non-finite gradient in parameter '" + e.name + "'");
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
    live.push_back(&e);
  }
  double clip = 1.0;
  if (cfg.grad_clip) {
    const double norm = std::sqrt(sq);
    if (norm > *cfg.grad_clip) clip = *cfg.grad_clip / norm;
  }
  ++state.step;
  const double b1 = cfg.beta1;
  const double b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (auto* e : live) {
    auto p = e->tensor.mutable_data();
    auto g = e->tensor.mutable_grad();
    auto& m = state.m[e->name];
    auto& v = state.v[e->name];
    if (m.empty()) m.assign(p.size(), T(0));
    if (v.empty()) v.assign(p.size(), T(0));
    BMAE_REQUIRE(m.size() == p.size() && v.size() == p.size(),
                 "adamw_step: moment shape mismatch for " + e->name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]) * clip;
      double pi = static_cast<double>(p[i]) * decay;
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      pi -= lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
      p[i] = static_cast<T>(pi);
    }
  }
}

template void adamw_step<float>(Parameters&, OptimState&, const TrainConfig&, double);
template void adamw_step<double>(Parameters64&, OptimState64&, const TrainConfig&, double);

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  BMAE_REQUIRE(total_steps >= 1 && step >= 0 && step <= total_steps,
               "lr_at: step outside [0, total_steps]");
  const double warm = cfg.warmup_frac * static_cast<double>(total_steps);
  const auto s = static_cast<double>(step);
  if (s < warm) return cfg.base_lr * s / warm;
  const double span = static_cast<double>(total_steps) - warm;
  const double progress = span > 0.0 ? (s - warm) / span : 1.0;
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void MixSpec::validate(std::int64_t batch_size) const {
  if (ratio_general < 0 || ratio_bio < 0 || ratio_general + ratio_bio == 0)
    throw ConfigError("mix: ratio parts must be >= 0 and not both 0");
  if (batch_size % (ratio_general + ratio_bio) != 0)
    throw ConfigError("mix: batch_size " + std::to_string(batch_size) +
                      " is not divisible by " + std::to_string(ratio_general + ratio_bio));
}

std::int64_t MixSpec::n_general(std::int64_t batch_size) const {
  return batch_size * ratio_general / (ratio_general + ratio_bio);
}

std::int64_t MixSpec::n_bio(std::int64_t batch_size) const {
  return batch_size - n_general(batch_size);
}

std::string MixSpec::str() const {
  return std::to_string(ratio_general) + ":" + std::to_string(ratio_bio);
}

MixSpec MixSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  auto num = [&](const std::string& part) -> std::int64_t {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("mix: expected G:B with non-negative integers, got '" + text + "'");
    return std::stoll(part);
  };
  if (colon == std::string::npos)
    throw ConfigError("mix: expected G:B, got '" + text + "'");
  MixSpec m{num(text.substr(0, colon)), num(text.substr(colon + 1))};
  if (m.ratio_general + m.ratio_bio == 0) throw ConfigError("mix: both parts are 0");
  return m;
}

void FractionSpec::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0, 1]");
}

Manifest subsample(const Manifest& rows, const FractionSpec& spec) {
  spec.validate();
  auto take = [&](std::int64_t n) {
    return std::max<std::int64_t>(1, std::llround(spec.fraction * static_cast<double>(n)));
  };
  std::map<std::int32_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i)
    groups[spec.stratified ? rows[i].label : 0].push_back(i);
  std::vector<bool> keep(rows.size(), false);
  for (const auto& [label, members] : groups) {
    const auto n = static_cast<std::int64_t>(members.size());
    Prng rng(spec.seed, spec.stratified ? "subsample/class/" + std::to_string(label)
                                        : std::string("subsample/all"));
    const auto perm = rng.permutation(n);
    const auto k = std::min(n, take(n));
    for (std::int64_t j = 0; j < k; ++j)
      keep[members[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])]] = true;
  }
  Manifest out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (keep[i]) out.push_back(rows[i]);
  return out;
}

std::string to_json_line(const TraceRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["split"] = r.split;
  j["loss"] = r.loss;
  j["top1"] = r.top1 ? nlohmann::ordered_json(*r.top1) : nlohmann::ordered_json(nullptr);
  j["top5"] = r.top5 ? nlohmann::ordered_json(*r.top5) : nlohmann::ordered_json(nullptr);
  j["lr"] = r.lr;
  return j.dump();
}

void append_trace(const std::filesystem::path& path, const std::vector<TraceRecord>& records) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to trace " + path.string());
  for (const auto& r : records) out << to_json_line(r) << "\n";
}

std::uint64_t group_checksum(const Parameters& p, ParamGroup g) {
  std::uint64_t h = fnv1a64("checksum");
  for (const auto& e : p.entries()) {
    if (group_of(e.name) != g) continue;
    h = fnv1a64(e.name, h);
    const auto d = e.tensor.data();
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(float)), h);
  }
  return h;
}

namespace {

// Adds (deep copies of) the arrays of group g from src that p lacks.
void add_missing_group(Parameters& p, const Parameters& src, ParamGroup g) {
  for (const auto& e : src.entries())
    if (group_of(e.name) == g && !p.contains(e.name))
      p.add(e.name, e.tensor.clone(), e.trainable);
}

// Items drawn from an endless stream of per-cycle permutations of a pool, so
// the k-th draw depends only on (seed, pool, k).
class CyclicPool {
 public:
  CyclicPool(std::vector<std::int64_t> members, std::uint64_t seed, std::string label)
      : members_(std::move(members)), seed_(seed), label_(std::move(label)) {}

  std::int64_t size() const { return static_cast<std::int64_t>(members_.size()); }

  std::int64_t at(std::int64_t position) {
    const std::int64_t n = size();
    const std::int64_t cycle = position / n;
    if (cycle != cycle_) {
      Prng rng(seed_, label_ + "/cycle/" + std::to_string(cycle));
      perm_ = rng.permutation(n);
      cycle_ = cycle;
    }
    return members_[static_cast<std::size_t>(perm_[static_cast<std::size_t>(position % n)])];
  }

 private:
  std::vector<std::int64_t> members_;
  std::uint64_t seed_;
  std::string label_;
  std::int64_t cycle_ = -1;
  std::vector<std::int64_t> perm_;
};

void check_labels(const SegmentDataset& ds, const ModelConfig& cfg, const char* what) {
  for (const auto& f : ds.files)
    if (f.label < 0 || f.label >= cfg.n_classes)
      throw DataError(std::string(what) + ": label " + std::to_string(f.label) + " of " + f.id +
                      " is outside [0, " + std::to_string(cfg.n_classes) + ")");
}

bool hook_due(const TrainConfig& tcfg, std::int64_t epoch) {
  return epoch == tcfg.epochs || (tcfg.save_every > 0 && epoch % tcfg.save_every == 0);
}

TraceRecord val_record(std::int64_t epoch, const MetricsReport& r, double lr) {
  TraceRecord t;
  t.epoch = epoch;
  t.split = "val";
  t.loss = r.loss;
  t.top1 = r.top1;
  t.top5 = r.top5;
  t.lr = lr;
  return t;
}

// Segment indices used in one supervised epoch, before shuffling.
std::vector<std::int64_t> epoch_items(const SegmentDataset& ds, const TrainConfig& tcfg,
                                      std::int64_t epoch, std::int64_t pass) {
  const std::string tag = std::to_string(epoch) + (pass > 0 ? "." + std::to_string(pass) : "");
  std::vector<std::int64_t> items;
  for (std::size_t f = 0; f < ds.file_segments.size(); ++f) {
    const auto& segs = ds.file_segments[f];
    const auto n = static_cast<std::int64_t>(segs.size());
    if (tcfg.segments_per_file == 0 || n <= tcfg.segments_per_file) {
      items.insert(items.end(), segs.begin(), segs.end());
      continue;
    }
    Prng rng(tcfg.seed, "supervised/pick/" + tag + "/" + std::to_string(f));
    const auto perm = rng.permutation(n);
    std::vector<std::int64_t> picked;
    for (std::int64_t j = 0; j < tcfg.segments_per_file; ++j)
      picked.push_back(segs[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])]);
    std::sort(picked.begin(), picked.end());
    items.insert(items.end(), picked.begin(), picked.end());
  }
  Prng rng(tcfg.seed, "supervised/order/" + tag);
  const auto perm = rng.permutation(static_cast<std::int64_t>(items.size()));
  std::vector<std::int64_t> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    out[i] = items[static_cast<std::size_t>(perm[i])];
  return out;
}

std::int64_t items_per_epoch(const SegmentDataset& ds, const TrainConfig& tcfg) {
  std::int64_t n = 0;
  for (const auto& segs : ds.file_segments) {
    const auto k = static_cast<std::int64_t>(segs.size());
    n += tcfg.segments_per_file == 0 ? k : std::min(k, tcfg.segments_per_file);
  }
  return n;
}

// At least `n` items for one epoch: further passes over the data are appended
// when the step budget exceeds one pass.
std::vector<std::int64_t> epoch_stream(const SegmentDataset& ds, const TrainConfig& tcfg,
                                       std::int64_t epoch, std::int64_t n) {
  auto items = epoch_items(ds, tcfg, epoch, 0);
  for (std::int64_t pass = 1; static_cast<std::int64_t>(items.size()) < n; ++pass) {
    const auto more = epoch_items(ds, tcfg, epoch, pass);
    items.insert(items.end(), more.begin(), more.end());
  }
  items.resize(static_cast<std::size_t>(std::min<std::int64_t>(n, static_cast<std::int64_t>(items.size()))));
  return items;
}

struct SupervisedSetup {
  SegmentDataset train;
  SegmentDataset val;
  Parameters params;
  OptimState optim;
  std::int64_t start_epoch = 0;
  std::int64_t items_per_epoch = 0;
  std::int64_t steps_per_epoch = 0;
};

SupervisedSetup supervised_setup(const Manifest& train_rows, const Manifest& val_rows,
                                 const SpectrogramSource& source, const ModelConfig& cfg,
                                 const TrainConfig& tcfg, const Parameters& init,
                                 const SupervisedOptions& opts, const char* what) {
  cfg.validate();
  tcfg.validate();
  opts.eval.validate();
  SupervisedSetup s;
  const Manifest rows = opts.fraction ? subsample(train_rows, *opts.fraction) : train_rows;
  s.train = build_dataset(rows, source);
  if (s.train.segments.empty()) throw DataError(std::string(what) + ": no training segments");
  check_labels(s.train, cfg, what);
  std::int64_t budget = items_per_epoch(s.train, tcfg);
  if (opts.fraction && tcfg.constant_steps)
    budget = items_per_epoch(build_dataset(train_rows, source), tcfg);
  if (tcfg.steps_per_epoch > 0) budget = tcfg.steps_per_epoch * tcfg.batch_size;
  s.items_per_epoch = budget;
  s.steps_per_epoch = (budget + tcfg.batch_size - 1) / tcfg.batch_size;
  if (!val_rows.empty()) {
    s.val = build_dataset(val_rows, source);
    check_labels(s.val, cfg, what);
  }
  if (opts.resume) {
    s.params = opts.resume->params.clone();
    s.optim = opts.resume->optim;
    s.start_epoch = opts.resume->epoch;
  } else {
    s.params = init.subset({ParamGroup::kEncoder, ParamGroup::kHead});
    add_missing_group(s.params, init_parameters<float>(cfg, tcfg.seed), ParamGroup::kHead);
  }
  check_parameters(s.params, cfg, false, true);
  return s;
}

}  // namespace

PretrainResult pretrain(const Manifest& rows, const SpectrogramSource& source,
                        const ModelConfig& cfg, const TrainConfig& tcfg,
                        const PretrainOptions& opts) {
  cfg.validate();
  tcfg.validate(opts.mix.has_value());
  if (opts.mix) opts.mix->validate(tcfg.batch_size);
  if (cfg.n_masked() < 1) throw ConfigError("pretrain: mask_ratio leaves no masked patches");
  const auto ds = build_dataset(rows, source);
  PretrainResult out;

  Parameters params;
  OptimState optim;
  std::int64_t start_epoch = 0;
  if (opts.resume) {
    params = opts.resume->params.clone();
    optim = opts.resume->optim;
    start_epoch = opts.resume->epoch;
  } else {
    const auto fresh = init_parameters<float>(cfg, tcfg.seed);
    if (opts.init) {
      params = opts.init->subset({ParamGroup::kEncoder, ParamGroup::kDecoder});
      if (!params.has_group(ParamGroup::kDecoder)) {
        out.warnings.push_back("init has no decoder; the decoder is freshly initialized");
      } else if (opts.reinit_decoder) {
        params.assign_group(fresh, ParamGroup::kDecoder);
      }
      add_missing_group(params, fresh, ParamGroup::kDecoder);
      if (opts.freeze_decoder && !opts.init->has_group(ParamGroup::kDecoder))
        out.warnings.push_back("freeze_decoder with a fresh decoder: training against a frozen random decoder");
    } else {
      params = fresh.subset({ParamGroup::kEncoder, ParamGroup::kDecoder});
      if (opts.freeze_decoder)
        out.warnings.push_back("freeze_decoder with a fresh decoder: training against a frozen random decoder");
    }
    if (opts.freeze_decoder && opts.reinit_decoder)
      out.warnings.push_back("freeze_decoder with reinit_decoder: the frozen decoder is random");
  }
  check_parameters(params, cfg, true, false);
  params.set_trainable(ParamGroup::kEncoder, true);
  params.set_trainable(ParamGroup::kDecoder, !opts.freeze_decoder);

  // Pools: one per domain under a mix, otherwise everything.
  std::vector<std::pair<CyclicPool, std::int64_t>> pools;  // pool, items per batch
  if (opts.mix) {
    std::vector<std::int64_t> general;
    std::vector<std::int64_t> bio;
    for (std::int64_t i = 0; i < ds.size(); ++i)
      (ds.segments[static_cast<std::size_t>(i)].domain == Domain::kGeneral ? general : bio).push_back(i);
    const auto ng = opts.mix->n_general(tcfg.batch_size);
    const auto nb = opts.mix->n_bio(tcfg.batch_size);
    if ((ng > 0 && general.empty()) || (nb > 0 && bio.empty()))
      throw DataError("pretrain: mix " + opts.mix->str() + " needs segments of both domains");
    if (ng > 0) pools.emplace_back(CyclicPool(general, tcfg.seed, "pretrain/general"), ng);
    if (nb > 0) pools.emplace_back(CyclicPool(bio, tcfg.seed, "pretrain/bio"), nb);
  } else {
    std::vector<std::int64_t> all(static_cast<std::size_t>(ds.size()));
    for (std::int64_t i = 0; i < ds.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    if (all.empty()) throw DataError("pretrain: no segments");
    pools.emplace_back(CyclicPool(all, tcfg.seed, "pretrain/all"), tcfg.batch_size);
  }
  const std::int64_t steps_per_epoch =
      tcfg.steps_per_epoch > 0 ? tcfg.steps_per_epoch
                               : std::max<std::int64_t>(1, ds.size() / tcfg.batch_size);
  const std::int64_t total = tcfg.epochs * steps_per_epoch;
  const std::int64_t k = cfg.n_patches();

  for (std::int64_t epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::int64_t j = 0; j < steps_per_epoch; ++j) {
      const std::int64_t step = epoch * steps_per_epoch + j;
      std::vector<SegmentRef> batch;
      StepLog log;
      for (auto& [pool, n] : pools)
        for (std::int64_t i = 0; i < n; ++i) {
          const auto& seg = ds.segments[static_cast<std::size_t>(pool.at(step * n + i))];
          (seg.domain == Domain::kGeneral ? log.n_general : log.n_bio) += 1;
          batch.push_back(seg);
        }
      Prng mask_rng(tcfg.seed, "pretrain/mask/" + std::to_string(step));
      std::vector<MaskPlan> plans;
      for (std::size_t i = 0; i < batch.size(); ++i)
        plans.push_back(make_mask(k, cfg.mask_ratio, mask_rng));
      const auto patches = load_patches<float>(source, batch, cfg);
      Tape tape;
      auto loss = mae_forward_loss(tape, params, patches, plans, cfg);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError("pretrain: non-finite loss at step " + std::to_string(step + 1));
      tape.backward(loss);
      lr = lr_at(step + 1, total, tcfg);
      adamw_step(params, optim, tcfg, lr);
      params.zero_grad();
      loss_sum += value;
      log.step = step + 1;
      log.epoch = epoch + 1;
      log.loss = value;
      log.lr = lr;
      out.steps.push_back(log);
    }
    TraceRecord rec;
    rec.epoch = epoch + 1;
    rec.split = "train";
    rec.loss = loss_sum / static_cast<double>(steps_per_epoch);
    rec.lr = lr;
    out.trace.push_back(rec);
    if (opts.on_epoch && hook_due(tcfg, epoch + 1))
      opts.on_epoch(TrainState{params, optim, epoch + 1}, out.trace);
  }
  out.state = TrainState{std::move(params), std::move(optim), tcfg.epochs};
  return out;
}

SupervisedResult finetune(const Manifest& train_rows, const Manifest& val_rows,
                          const SpectrogramSource& source, const ModelConfig& cfg,
                          const TrainConfig& tcfg, const Parameters& init,
                          const SupervisedOptions& opts) {
  auto s = supervised_setup(train_rows, val_rows, source, cfg, tcfg, init, opts, "finetune");
  auto& params = s.params;
  params.set_trainable(ParamGroup::kEncoder, true);
  params.set_trainable(ParamGroup::kHead, true);

  SupervisedResult out;
  out.n_train_files = static_cast<std::int64_t>(s.train.files.size());
  const std::int64_t steps_per_epoch = s.steps_per_epoch;
  const std::int64_t total = tcfg.epochs * steps_per_epoch;
  double best = -1.0;

  for (std::int64_t epoch = s.start_epoch; epoch < tcfg.epochs; ++epoch) {
    const auto items = epoch_stream(s.train, tcfg, epoch, s.items_per_epoch);
    const auto per_epoch = static_cast<double>(items.size());
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::int64_t j = 0; j < steps_per_epoch; ++j) {
      const auto lo = static_cast<std::size_t>(j * tcfg.batch_size);
      const auto hi = std::min(items.size(), lo + static_cast<std::size_t>(tcfg.batch_size));
      std::vector<SegmentRef> batch;
      std::vector<std::int32_t> labels;
      for (std::size_t i = lo; i < hi; ++i) {
        batch.push_back(s.train.segments[static_cast<std::size_t>(items[i])]);
        labels.push_back(batch.back().label);
      }
      const auto patches = load_patches<float>(source, batch, cfg);
      Tape tape;
      auto loss = tape.cross_entropy(classify(tape, params, patches, cfg), labels);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch + 1));
      tape.backward(loss);
      lr = lr_at(epoch * steps_per_epoch + j + 1, total, tcfg);
      adamw_step(params, s.optim, tcfg, lr);
      params.zero_grad();
      loss_sum += value * static_cast<double>(hi - lo);
    }
    TraceRecord rec;
    rec.epoch = epoch + 1;
    rec.split = "train";
    rec.loss = loss_sum / per_epoch;
    rec.lr = lr;
    out.trace.push_back(rec);
    if (!s.val.files.empty()) {
      const auto report = evaluate(s.val, source, params, cfg, opts.eval);
      out.trace.push_back(val_record(epoch + 1, report, lr));
      if (report.top1 > best) {
        best = report.top1;
        out.best = params.clone();
        out.best_epoch = epoch + 1;
        out.best_val = report;
      }
    }
    if (opts.on_epoch && hook_due(tcfg, epoch + 1))
      opts.on_epoch(TrainState{params, s.optim, epoch + 1}, out.trace);
  }
  if (out.best.size() == 0) {
    out.best = params.clone();
    out.best_epoch = tcfg.epochs;
  }
  out.last = TrainState{std::move(params), std::move(s.optim), tcfg.epochs};
  return out;
}

SupervisedResult linear_probe(const Manifest& train_rows, const Manifest& val_rows,
                              const SpectrogramSource& source, const ModelConfig& cfg,
                              const TrainConfig& tcfg, const Parameters& init,
                              const SupervisedOptions& opts) {
  auto s = supervised_setup(train_rows, val_rows, source, cfg, tcfg, init, opts, "linear_probe");
  const std::int64_t d = cfg.embed_dim;

  // Frozen encoder: features once per segment.
  auto features = [&](const SegmentDataset& ds) {
    std::vector<float> f(static_cast<std::size_t>(ds.size() * d));
    const std::int64_t b = std::max<std::int64_t>(1, opts.eval.batch_size);
    for (std::int64_t lo = 0; lo < ds.size(); lo += b) {
      const std::int64_t hi = std::min(ds.size(), lo + b);
      std::span<const SegmentRef> batch(ds.segments.data() + lo, static_cast<std::size_t>(hi - lo));
      Tape tape(false);
      const auto pooled = pooled_features(tape, s.params, load_patches<float>(source, batch, cfg), cfg);
      std::copy(pooled.data().begin(), pooled.data().end(), f.begin() + lo * d);
    }
    return f;
  };
  const auto train_feats = features(s.train);
  const auto val_feats = s.val.files.empty() ? std::vector<float>{} : features(s.val);

  auto head = s.params.subset({ParamGroup::kHead});
  auto logits_of = [&](const std::vector<float>& feats, std::int64_t n) {
    Tape tape(false);
    const auto logits = apply_head(tape, head, Tensor({n, d}, feats));
    std::vector<std::vector<float>> rows;
    const auto v = logits.data();
    for (std::int64_t i = 0; i < n; ++i)
      rows.emplace_back(v.begin() + i * cfg.n_classes, v.begin() + (i + 1) * cfg.n_classes);
    return rows;
  };

  SupervisedResult out;
  out.n_train_files = static_cast<std::int64_t>(s.train.files.size());
  const std::int64_t steps_per_epoch = s.steps_per_epoch;
  const std::int64_t total = tcfg.epochs * steps_per_epoch;
  double best = -1.0;
  Parameters best_head = head.clone();

  for (std::int64_t epoch = s.start_epoch; epoch < tcfg.epochs; ++epoch) {
    const auto items = epoch_stream(s.train, tcfg, epoch, s.items_per_epoch);
    const auto per_epoch = static_cast<double>(items.size());
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::int64_t j = 0; j < steps_per_epoch; ++j) {
      const auto lo = static_cast<std::size_t>(j * tcfg.batch_size);
      const auto hi = std::min(items.size(), lo + static_cast<std::size_t>(tcfg.batch_size));
      std::vector<float> x;
      std::vector<std::int32_t> labels;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto seg = items[i];
        x.insert(x.end(), train_feats.begin() + seg * d, train_feats.begin() + (seg + 1) * d);
        labels.push_back(s.train.segments[static_cast<std::size_t>(seg)].label);
      }
      Tape tape;
      const auto n = static_cast<std::int64_t>(hi - lo);
      auto loss = tape.cross_entropy(apply_head(tape, head, Tensor({n, d}, std::move(x))), labels);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError("linear_probe: non-finite loss at epoch " + std::to_string(epoch + 1));
      tape.backward(loss);
      lr = lr_at(epoch * steps_per_epoch + j + 1, total, tcfg);
      adamw_step(head, s.optim, tcfg, lr);
      head.zero_grad();
      loss_sum += value * static_cast<double>(n);
    }
    TraceRecord rec;
    rec.epoch = epoch + 1;
    rec.split = "train";
    rec.loss = loss_sum / per_epoch;
    rec.lr = lr;
    out.trace.push_back(rec);
    if (!s.val.files.empty()) {
      const auto report = evaluate_logits(s.val, logits_of(val_feats, s.val.size()), opts.eval);
      out.trace.push_back(val_record(epoch + 1, report, lr));
      if (report.top1 > best) {
        best = report.top1;
        best_head = head.clone();
        out.best_epoch = epoch + 1;
        out.best_val = report;
      }
    } else {
      best_head = head.clone();
      out.best_epoch = epoch + 1;
    }
    if (opts.on_epoch && hook_due(tcfg, epoch + 1)) {
      auto snapshot = s.params.clone();
      snapshot.assign_group(head, ParamGroup::kHead);
      opts.on_epoch(TrainState{std::move(snapshot), s.optim, epoch + 1}, out.trace);
    }
  }
  out.best = s.params.clone();
  out.best.assign_group(best_head, ParamGroup::kHead);
  auto last = s.params.clone();
  last.assign_group(head, ParamGroup::kHead);
  out.last = TrainState{std::move(last), std::move(s.optim), tcfg.epochs};
  return out;
}

}  // namespace bmae
