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
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bmae/dataset.hpp"
#include "bmae/model.hpp"

namespace bmae {

enum class Aggregation { kMean, kMax };

std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view s);  // throws ConfigError

struct EvalConfig {
  Aggregation aggregation = Aggregation::kMean;
  std::int64_t batch_size = 32;

  void validate() const;
};

/// Combines per-segment probability vectors into one file prediction. Mean
/// (default) or elementwise max, renormalized to sum 1. Throws ContractError
/// for an empty input or ragged vectors.
std::vector<double> aggregate_file(std::span<const std::vector<double>> segment_probs,
                                   Aggregation mode = Aggregation::kMean);

/// True iff `label` ranks among the k largest entries; equal values rank the
/// lower class index first.
bool topk_hit(std::span<const double> probs, std::int64_t label, std::int64_t k);

struct FileOutcome {
  std::string id;
  std::int32_t label = 0;
  bool hit1 = false;
  bool hit5 = false;
};

struct ClassMetrics {
  double top1 = 0.0;  // percent
  double top5 = 0.0;
  std::int64_t n_files = 0;
};

struct MetricsReport {
  double top1 = 0.0;  // class-averaged, percent
  double top5 = 0.0;
  std::map<std::int32_t, ClassMetrics> per_class;
  std::vector<std::int32_t> excluded_classes;  // listed but without files
  std::int64_t n_eval_classes = 0;
  std::int64_t n_files = 0;
  double loss = 0.0;  // mean segment cross-entropy over the eval classes
};

/// Per-class hit rates averaged with equal weight per class. Classes in
/// `classes` with no files are excluded from the mean and recorded.
MetricsReport class_averaged(std::span<const FileOutcome> outcomes,
                             std::span<const std::int32_t> classes);

/// Sorted distinct labels of a dataset's files.
std::vector<std::int32_t> present_labels(const SegmentDataset& ds);

/// Raw head outputs for every segment of the dataset, in dataset order.
std::vector<std::vector<float>> predict_logits(const SegmentDataset& ds,
                                               const SpectrogramSource& source,
                                               const Parameters& params,
                                               const ModelConfig& cfg,
                                               std::int64_t batch_size = 32);

/// File-level evaluation from precomputed segment logits. Softmax runs over
/// the labels present in the dataset only; probabilities and ranks are
/// within that subset.
MetricsReport evaluate_logits(const SegmentDataset& ds,
                              std::span<const std::vector<float>> logits,
                              const EvalConfig& cfg = {});

MetricsReport evaluate(const SegmentDataset& ds, const SpectrogramSource& source,
                       const Parameters& params, const ModelConfig& cfg,
                       const EvalConfig& eval_cfg = {});

std::string report_json(const MetricsReport& r, std::string_view split,
                        std::string_view run_id);
void write_report_json(const std::filesystem::path& path, const MetricsReport& r,
                       std::string_view split, std::string_view run_id);
/// Header "top1,top5,split,run_id" and one row.
void write_report_csv(const std::filesystem::path& path, const MetricsReport& r,
                      std::string_view split, std::string_view run_id);

}  // namespace bmae
