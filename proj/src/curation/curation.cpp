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

#include "bmae/curation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bmae/error.hpp"
#include "bmae/eval.hpp"
#include "bmae/prng.hpp"
#include "bmae/tape.hpp"

namespace bmae {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double score_of(const SegmentScore& s, FilterMode mode) {
  return mode == FilterMode::kConfKeepHigh ? s.true_class_conf : s.recon_loss;
}
}  // namespace

std::string_view to_string(FilterMode m) {
  return m == FilterMode::kConfKeepHigh ? "conf_keep_high" : "recon_keep_high";
}

FilterMode parse_filter_mode(std::string_view s) {
  if (s == "conf_keep_high" || s == "conf") return FilterMode::kConfKeepHigh;
  if (s == "recon_keep_high" || s == "recon") return FilterMode::kReconKeepHigh;
  throw ConfigError("curation: unknown mode '" + std::string(s) + "'");
}

void CurationConfig::validate() const {
  if (n_draws < 1) throw ConfigError("curation: n_draws must be >= 1");
  if (batch_size < 1) throw ConfigError("curation: batch_size must be >= 1");
  if (!std::isfinite(threshold)) throw ConfigError("curation: threshold must be finite");
}

std::vector<SegmentScore> score_segments_classifier(const SegmentDataset& ds,
                                                    const SpectrogramSource& source,
                                                    const Parameters& classifier,
                                                    const ModelConfig& cfg,
                                                    std::int64_t batch_size) {
  for (const auto& f : ds.files)
    if (f.label < 0 || f.label >= cfg.n_classes)
      throw DataError("curation: label " + std::to_string(f.label) + " of " + f.id +
                      " is outside the classifier's " + std::to_string(cfg.n_classes) +
                      " classes");
  const auto logits = predict_logits(ds, source, classifier, cfg, batch_size);
  std::vector<SegmentScore> out;
  out.reserve(ds.segments.size());
  for (std::size_t i = 0; i < ds.segments.size(); ++i) {
    const auto& row = logits[i];
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - mx);
    const auto& seg = ds.segments[i];
    const double p = std::exp(static_cast<double>(row[static_cast<std::size_t>(seg.label)]) - mx) / z;
    out.push_back({seg.id, seg.segment_idx, std::clamp(p, 0.0, 1.0), kNaN});
  }
  return out;
}

std::vector<SegmentScore> score_segments_recon(const SegmentDataset& ds,
                                               const SpectrogramSource& source,
                                               const Parameters& mae,
                                               const ModelConfig& cfg,
                                               std::int64_t n_draws, std::uint64_t seed,
                                               std::int64_t batch_size) {
  BMAE_REQUIRE(n_draws >= 1 && batch_size >= 1, "score_segments_recon: bad n_draws/batch_size");
  check_parameters(mae, cfg, true, false);
  const std::int64_t k = cfg.n_patches();
  const std::int64_t p = cfg.patch_dim();
  std::vector<SegmentScore> out;
  out.reserve(ds.segments.size());
  for (std::int64_t lo = 0; lo < ds.size(); lo += batch_size) {
    const std::int64_t hi = std::min(ds.size(), lo + batch_size);
    std::span<const SegmentRef> batch(ds.segments.data() + lo, static_cast<std::size_t>(hi - lo));
    const auto patches = load_patches<float>(source, batch, cfg);
    const Tensor targets({(hi - lo) * k, p},
                         recon_targets<float>(patches.data(), p, cfg.norm_eps));
    std::vector<double> sums(static_cast<std::size_t>(hi - lo), 0.0);
    for (std::int64_t r = 0; r < n_draws; ++r) {
      std::vector<MaskPlan> plans;
      for (const auto& seg : batch) {
        Prng rng(seed, "recon/" + seg.id + "/" + std::to_string(seg.segment_idx) + "/" +
                           std::to_string(r));
        plans.push_back(make_mask(k, cfg.mask_ratio, rng));
      }
      Tape tape(false);
      const auto pred = decode(tape, mae, encode(tape, mae, patches, plans, cfg), plans, cfg);
      for (std::int64_t i = 0; i < hi - lo; ++i) {
        std::vector<std::int64_t> rows(static_cast<std::size_t>(k));
        for (std::int64_t j = 0; j < k; ++j) rows[static_cast<std::size_t>(j)] = i * k + j;
        const std::vector<MaskPlan> one{plans[static_cast<std::size_t>(i)]};
        const auto loss = mae_loss(tape, tape.gather(pred, rows), tape.gather(targets, rows), one);
        sums[static_cast<std::size_t>(i)] += static_cast<double>(loss.item());
      }
    }
    for (std::int64_t i = 0; i < hi - lo; ++i) {
      const auto& seg = batch[static_cast<std::size_t>(i)];
      out.push_back({seg.id, seg.segment_idx, kNaN,
                     sums[static_cast<std::size_t>(i)] / static_cast<double>(n_draws)});
    }
  }
  return out;
}

FilterResult filter_segments(const std::vector<SegmentScore>& scores, FilterMode mode,
                             double threshold) {
  std::set<std::pair<std::string, std::int64_t>> seen;
  for (const auto& s : scores) {
    BMAE_REQUIRE(!std::isnan(score_of(s, mode)),
                 "filter: missing " + std::string(to_string(mode)) + " score for " +
                     s.recording_id + "#" + std::to_string(s.segment_idx));
    BMAE_REQUIRE(seen.insert({s.recording_id, s.segment_idx}).second,
                 "filter: duplicate score for " + s.recording_id + "#" +
                     std::to_string(s.segment_idx));
  }
  FilterResult out;
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> per_file;  // total, dropped
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool keep = score_of(scores[i], mode) >= threshold;
    auto& f = per_file[scores[i].recording_id];
    ++f.first;
    if (keep) {
      out.kept.push_back(i);
    } else {
      ++f.second;
    }
  }
  auto& r = out.report;
  r.threshold = threshold;
  r.n_total = static_cast<std::int64_t>(scores.size());
  r.n_kept = static_cast<std::int64_t>(out.kept.size());
  if (r.n_total > 0)
    r.segments_dropped_pct =
        100.0 * static_cast<double>(r.n_total - r.n_kept) / static_cast<double>(r.n_total);
  if (!per_file.empty()) {
    double acc = 0.0;
    for (const auto& [id, f] : per_file)
      acc += 100.0 * static_cast<double>(f.second) / static_cast<double>(f.first);
    r.avg_drop_per_file_pct = acc / static_cast<double>(per_file.size());
  }
  if (out.kept.empty() && !scores.empty())
    out.warnings.push_back("threshold " + std::to_string(threshold) + " keeps no segments");
  return out;
}

double score_quantile(const std::vector<SegmentScore>& scores, FilterMode mode, double q) {
  BMAE_REQUIRE(!scores.empty(), "score_quantile: no scores");
  BMAE_REQUIRE(q >= 0.0 && q <= 1.0, "score_quantile: q must be in [0, 1]");
  std::vector<double> v;
  v.reserve(scores.size());
  for (const auto& s : scores) {
    BMAE_REQUIRE(!std::isnan(score_of(s, mode)), "score_quantile: missing score");
    v.push_back(score_of(s, mode));
  }
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Manifest emit_filtered_manifest(const std::vector<SegmentScore>& scores,
                                const std::vector<std::size_t>& kept,
                                const Manifest& original) {
  if (kept.empty()) throw DataError("curation: no segments kept; refusing to write an empty manifest");
  std::map<std::string, std::set<std::int64_t>, std::less<>> keep;
  for (auto i : kept) {
    BMAE_REQUIRE(i < scores.size(), "emit_filtered_manifest: kept index out of range");
    keep[scores[i].recording_id].insert(scores[i].segment_idx);
  }
  Manifest out;
  std::set<std::pair<std::string, std::int64_t>> emitted;
  for (const auto& row : original) {
    auto it = keep.find(row.id);
    if (it == keep.end()) continue;
    for (auto seg : it->second) {
      if (row.segment_idx && *row.segment_idx != seg) continue;
      if (!emitted.insert({row.id, seg}).second) continue;
      auto r = row;
      r.segment_idx = seg;
      out.push_back(std::move(r));
    }
  }
  if (emitted.size() != kept.size())
    throw DataError("curation: kept segments reference recordings missing from the manifest");
  return out;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<SegmentScore>& scores) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scores " + path.string());
  out.precision(17);
  out << "recording_id,segment_idx,true_class_conf,recon_loss\n";
  for (const auto& s : scores)
    out << s.recording_id << "," << s.segment_idx << "," << s.true_class_conf << ","
        << s.recon_loss << "\n";
}

std::vector<SegmentScore> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read scores " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "recording_id,segment_idx,true_class_conf,recon_loss")
    throw DataError(path.string() + ": unexpected scores header");
  std::vector<SegmentScore> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    try {
      if (f.size() != 4) throw std::invalid_argument("field count");
      out.push_back({f[0], std::stoll(f[1]), std::stod(f[2]), std::stod(f[3])});
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed score row");
    }
  }
  return out;
}

std::string report_json(const FilterReport& r, FilterMode mode) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["threshold"] = r.threshold;
  j["segments_dropped_pct"] = r.segments_dropped_pct;
  j["avg_drop_per_file_pct"] = r.avg_drop_per_file_pct;
  j["n_kept"] = r.n_kept;
  j["n_total"] = r.n_total;
  return j.dump(2);
}

}  // namespace bmae
