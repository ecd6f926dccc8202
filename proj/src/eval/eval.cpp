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

#include "bmae/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "bmae/error.hpp"
#include "bmae/tape.hpp"

namespace bmae {

std::string_view to_string(Aggregation a) {
  return a == Aggregation::kMean ? "mean" : "max";
}

Aggregation parse_aggregation(std::string_view s) {
  if (s == "mean") return Aggregation::kMean;
  if (s == "max") return Aggregation::kMax;
  throw ConfigError("eval: unknown aggregation '" + std::string(s) + "'");
}

void EvalConfig::validate() const {
  if (batch_size < 1) throw ConfigError("eval: batch_size must be >= 1");
}

std::vector<double> aggregate_file(std::span<const std::vector<double>> segment_probs,
                                   Aggregation mode) {
  BMAE_REQUIRE(!segment_probs.empty(), "aggregate_file: no segments");
  const std::size_t c = segment_probs[0].size();
  std::vector<double> out(c, mode == Aggregation::kMean ? 0.0 : -std::numeric_limits<double>::infinity());
  for (const auto& p : segment_probs) {
    BMAE_REQUIRE(p.size() == c, "aggregate_file: ragged probability vectors");
    for (std::size_t j = 0; j < c; ++j)
      out[j] = mode == Aggregation::kMean ? out[j] + p[j] : std::max(out[j], p[j]);
  }
  double total = 0.0;
  for (double v : out) total += v;
  BMAE_REQUIRE(total > 0.0, "aggregate_file: probabilities sum to zero");
  for (auto& v : out) v /= total;
  return out;
}

bool topk_hit(std::span<const double> probs, std::int64_t label, std::int64_t k) {
  const auto c = static_cast<std::int64_t>(probs.size());
  BMAE_REQUIRE(label >= 0 && label < c, "topk_hit: label out of range");
  BMAE_REQUIRE(k >= 1 && k <= c, "topk_hit: k out of range");
  const double mine = probs[static_cast<std::size_t>(label)];
  std::int64_t ahead = 0;
  for (std::int64_t j = 0; j < c; ++j) {
    const double v = probs[static_cast<std::size_t>(j)];
    if (v > mine || (v == mine && j < label)) ++ahead;
  }
  return ahead < k;
}

MetricsReport class_averaged(std::span<const FileOutcome> outcomes,
                             std::span<const std::int32_t> classes) {
  MetricsReport r;
  std::map<std::int32_t, std::array<std::int64_t, 3>> tally;  // files, hit1, hit5
  for (auto c : classes) tally[c];
  for (const auto& o : outcomes) {
    auto& t = tally[o.label];
    ++t[0];
    t[1] += o.hit1;
    t[2] += o.hit5;
  }
  double s1 = 0.0;
  double s5 = 0.0;
  for (const auto& [c, t] : tally) {
    if (t[0] == 0) {
      r.excluded_classes.push_back(c);
      continue;
    }
    ClassMetrics m;
    m.n_files = t[0];
    m.top1 = 100.0 * static_cast<double>(t[1]) / static_cast<double>(t[0]);
    m.top5 = 100.0 * static_cast<double>(t[2]) / static_cast<double>(t[0]);
    s1 += m.top1;
    s5 += m.top5;
    r.per_class[c] = m;
  }
  r.n_eval_classes = static_cast<std::int64_t>(r.per_class.size());
  r.n_files = static_cast<std::int64_t>(outcomes.size());
  if (r.n_eval_classes > 0) {
    r.top1 = s1 / static_cast<double>(r.n_eval_classes);
    r.top5 = s5 / static_cast<double>(r.n_eval_classes);
  }
  return r;
}

std::vector<std::int32_t> present_labels(const SegmentDataset& ds) {
  std::set<std::int32_t> s;
  for (const auto& f : ds.files) s.insert(f.label);
  return {s.begin(), s.end()};
}

std::vector<std::vector<float>> predict_logits(const SegmentDataset& ds,
                                               const SpectrogramSource& source,
                                               const Parameters& params,
                                               const ModelConfig& cfg,
                                               std::int64_t batch_size) {
  BMAE_REQUIRE(batch_size >= 1, "predict_logits: batch_size must be >= 1");
  std::vector<std::vector<float>> out;
  out.reserve(ds.segments.size());
  const std::int64_t c = cfg.n_classes;
  for (std::int64_t lo = 0; lo < ds.size(); lo += batch_size) {
    const std::int64_t hi = std::min(ds.size(), lo + batch_size);
    std::span<const SegmentRef> batch(ds.segments.data() + lo, static_cast<std::size_t>(hi - lo));
    auto patches = load_patches<float>(source, batch, cfg);
    Tape tape(false);
    auto logits = classify(tape, params, patches, cfg);
    auto v = logits.data();
    for (std::int64_t i = 0; i < hi - lo; ++i)
      out.emplace_back(v.begin() + i * c, v.begin() + (i + 1) * c);
  }
  return out;
}

MetricsReport evaluate_logits(const SegmentDataset& ds,
                              std::span<const std::vector<float>> logits,
                              const EvalConfig& cfg) {
  BMAE_REQUIRE(logits.size() == ds.segments.size(), "evaluate_logits: one logit row per segment");
  const auto classes = present_labels(ds);
  const auto n = static_cast<std::int64_t>(classes.size());
  std::map<std::int32_t, std::int64_t> slot;
  for (std::int64_t j = 0; j < n; ++j) slot[classes[static_cast<std::size_t>(j)]] = j;

  std::vector<FileOutcome> outcomes;
  double loss_sum = 0.0;
  for (std::size_t f = 0; f < ds.files.size(); ++f) {
    const auto& idx = ds.file_segments[f];
    if (idx.empty())
      throw DataError("recording " + ds.files[f].id + " has no segments to evaluate");
    const std::int64_t target = slot.at(ds.files[f].label);
    std::vector<std::vector<double>> probs;
    probs.reserve(idx.size());
    for (auto s : idx) {
      const auto& row = logits[static_cast<std::size_t>(s)];
      std::vector<double> p(static_cast<std::size_t>(n));
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < n; ++j) {
        const auto col = static_cast<std::size_t>(classes[static_cast<std::size_t>(j)]);
        BMAE_REQUIRE(col < row.size(), "evaluate_logits: label outside the model's classes");
        p[static_cast<std::size_t>(j)] = row[col];
        mx = std::max(mx, p[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (auto& v : p) z += (v = std::exp(v - mx));
      for (auto& v : p) v /= z;
      loss_sum += -std::log(std::max(p[static_cast<std::size_t>(target)], 1e-300));
      probs.push_back(std::move(p));
    }
    // Fixed summation order makes the file prediction independent of the
    // order segments were listed in.
    std::sort(probs.begin(), probs.end());
    const auto agg = aggregate_file(probs, cfg.aggregation);
    FileOutcome o;
    o.id = ds.files[f].id;
    o.label = ds.files[f].label;
    o.hit1 = topk_hit(agg, target, 1);
    o.hit5 = topk_hit(agg, target, std::min<std::int64_t>(5, n));
    outcomes.push_back(std::move(o));
  }
  auto report = class_averaged(outcomes, classes);
  if (!ds.segments.empty()) report.loss = loss_sum / static_cast<double>(ds.segments.size());
  return report;
}

MetricsReport evaluate(const SegmentDataset& ds, const SpectrogramSource& source,
                       const Parameters& params, const ModelConfig& cfg,
                       const EvalConfig& eval_cfg) {
  eval_cfg.validate();
  for (const auto& f : ds.files)
    if (f.label < 0 || f.label >= cfg.n_classes)
      throw DataError("label " + std::to_string(f.label) + " of " + f.id +
                      " is outside the model's " + std::to_string(cfg.n_classes) + " classes");
  const auto logits = predict_logits(ds, source, params, cfg, eval_cfg.batch_size);
  return evaluate_logits(ds, logits, eval_cfg);
}

std::string report_json(const MetricsReport& r, std::string_view split,
                        std::string_view run_id) {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["run_id"] = run_id;
  j["top1"] = r.top1;
  j["top5"] = r.top5;
  j["loss"] = r.loss;
  j["n_eval_classes"] = r.n_eval_classes;
  j["n_files"] = r.n_files;
  j["excluded_classes"] = r.excluded_classes;
  auto& pc = j["per_class"];
  pc = nlohmann::ordered_json::object();
  for (const auto& [c, m] : r.per_class)
    pc[std::to_string(c)] = {{"top1", m.top1}, {"top5", m.top5}, {"n_files", m.n_files}};
  return j.dump(2);
}

void write_report_json(const std::filesystem::path& path, const MetricsReport& r,
                       std::string_view split, std::string_view run_id) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report " + path.string());
  out << report_json(r, split, run_id) << "\n";
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& r,
                      std::string_view split, std::string_view run_id) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report " + path.string());
  out.precision(17);
  out << "top1,top5,split,run_id\n" << r.top1 << "," << r.top5 << "," << split << ","
      << run_id << "\n";
}

}  // namespace bmae
