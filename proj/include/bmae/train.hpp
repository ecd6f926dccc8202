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
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bmae/dataset.hpp"
#include "bmae/eval.hpp"
#include "bmae/manifest.hpp"
#include "bmae/model.hpp"

namespace bmae {

struct TrainConfig {
  double base_lr = 1e-3;
  double weight_decay = 1e-4;
  std::int64_t epochs = 100;
  std::int64_t batch_size = 16;
  double warmup_frac = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::string schedule = "cosine";
  std::optional<double> grad_clip;  // global L2 norm
  std::int64_t steps_per_epoch = 0;    // 0: one pass over the data
  // Supervised runs on a data fraction: keep the step count of the full
  // training set instead of the epoch count's natural step count.
  bool constant_steps = false;
  std::int64_t segments_per_file = 0;  // supervised: per file and epoch; 0: all
  std::int64_t save_every = 0;         // epochs between checkpoints; 0: never

  /// Throws ConfigError. `mix_active` adds the batch_size >= 2 requirement.
  void validate(bool mix_active = false) const;

  /// Moments (0.9, 0.95), as used for masked pretraining.
  static TrainConfig pretraining();
  /// Moments (0.9, 0.999), as used for finetuning and linear probing.
  static TrainConfig finetuning();
};

/// Adam moments per trainable array, keyed by parameter name.
template <typename T>
struct BasicOptimState {
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
  std::int64_t step = 0;
};

using OptimState = BasicOptimState<float>;
using OptimState64 = BasicOptimState<double>;

/// One AdamW update of every array that requires grad and holds a gradient:
///   p -= lr * wd * p
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// Any non-finite gradient throws NumericError naming the array before
/// anything is modified.
template <typename T>
void adamw_step(BasicParameters<T>& params, BasicOptimState<T>& state,
                const TrainConfig& cfg, double lr);

/// Linear warmup from 0 over warmup_frac * total steps, then half-cosine
/// decay to 0 at `total_steps`.
double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

/// General:bio batch composition, e.g. 15:1.
struct MixSpec {
  std::int64_t ratio_general = 1;
  std::int64_t ratio_bio = 1;

  void validate(std::int64_t batch_size) const;  // throws ConfigError
  std::int64_t n_general(std::int64_t batch_size) const;
  std::int64_t n_bio(std::int64_t batch_size) const;
  std::string str() const;
  /// "G:B", both non-negative integers.
  static MixSpec parse(const std::string& text);
};

struct FractionSpec {
  double fraction = 1.0;
  std::uint64_t seed = 0;
  bool stratified = true;

  void validate() const;
};

/// File-level subsample. Stratified: round(fraction * n_c) files of every
/// class (at least 1), taken as a prefix of a per-class permutation, so
/// smaller fractions are subsets of larger ones under the same seed. Output
/// keeps manifest order.
Manifest subsample(const Manifest& rows, const FractionSpec& spec);

/// One epoch-level trace line: {epoch, split, loss, top1, top5, lr}.
struct TraceRecord {
  std::int64_t epoch = 0;
  std::string split;
  double loss = 0.0;
  std::optional<double> top1;
  std::optional<double> top5;
  double lr = 0.0;
};

std::string to_json_line(const TraceRecord& r);
void append_trace(const std::filesystem::path& path, const std::vector<TraceRecord>& records);

struct StepLog {
  std::int64_t step = 0;  // 1-based
  std::int64_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::int64_t n_general = 0;
  std::int64_t n_bio = 0;
};

/// Everything needed to continue a run at an epoch boundary.
struct TrainState {
  Parameters params;
  OptimState optim;
  std::int64_t epoch = 0;  // completed epochs
};

using EpochHook = std::function<void(const TrainState&, const std::vector<TraceRecord>&)>;

struct PretrainOptions {
  std::optional<MixSpec> mix;
  bool freeze_decoder = false;
  bool reinit_decoder = false;
  const Parameters* init = nullptr;   // fresh initialization when null
  const TrainState* resume = nullptr;  // continue from here when set
  EpochHook on_epoch;                  // every save_every epochs and at the end
};

struct PretrainResult {
  TrainState state;
  std::vector<TraceRecord> trace;
  std::vector<StepLog> steps;
  std::vector<std::string> warnings;
};

/// Masked-reconstruction training of encoder and decoder. Labels are never
/// read. Batch order and masks derive from (seed, step) only.
PretrainResult pretrain(const Manifest& rows, const SpectrogramSource& source,
                        const ModelConfig& cfg, const TrainConfig& tcfg,
                        const PretrainOptions& opts = {});

struct SupervisedOptions {
  std::optional<FractionSpec> fraction;
  const TrainState* resume = nullptr;
  EpochHook on_epoch;
  EvalConfig eval;
};

struct SupervisedResult {
  Parameters best;  // parameters at the best validation epoch
  TrainState last;
  std::vector<TraceRecord> trace;
  std::int64_t best_epoch = 0;
  MetricsReport best_val;
  std::int64_t n_train_files = 0;
};

/// Trains encoder and head with cross-entropy on segments labeled by their
/// file. `init` must hold the encoder; a head is taken from it when present,
/// otherwise freshly initialized. The decoder is dropped.
SupervisedResult finetune(const Manifest& train_rows, const Manifest& val_rows,
                          const SpectrogramSource& source, const ModelConfig& cfg,
                          const TrainConfig& tcfg, const Parameters& init,
                          const SupervisedOptions& opts = {});

/// Frozen encoder: pooled features are computed once, then only the head is
/// trained on them.
SupervisedResult linear_probe(const Manifest& train_rows, const Manifest& val_rows,
                              const SpectrogramSource& source, const ModelConfig& cfg,
                              const TrainConfig& tcfg, const Parameters& init,
                              const SupervisedOptions& opts = {});

/// Sum over all arrays of a group of a position-weighted bit hash; used to
/// show that frozen arrays are untouched.
std::uint64_t group_checksum(const Parameters& p, ParamGroup g);

}  // namespace bmae
