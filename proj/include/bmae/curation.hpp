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
#include <string>
#include <string_view>
#include <vector>

#include "bmae/dataset.hpp"
#include "bmae/manifest.hpp"
#include "bmae/model.hpp"

namespace bmae {

/// Score of one segment. A field that was not computed holds NaN.
struct SegmentScore {
  std::string recording_id;
  std::int64_t segment_idx = 0;
  double true_class_conf = 0.0;
  double recon_loss = 0.0;
};

enum class FilterMode { kConfKeepHigh, kReconKeepHigh };

std::string_view to_string(FilterMode m);
/// Accepts "conf_keep_high"/"conf" and "recon_keep_high"/"recon".
FilterMode parse_filter_mode(std::string_view s);

struct CurationConfig {
  FilterMode mode = FilterMode::kConfKeepHigh;
  double threshold = 0.0;
  std::int64_t n_draws = 4;  // mask draws per segment for recon scores
  std::uint64_t seed = 0;
  std::int64_t batch_size = 32;

  void validate() const;
};

struct FilterReport {
  double threshold = 0.0;
  double segments_dropped_pct = 0.0;
  double avg_drop_per_file_pct = 0.0;
  std::int64_t n_kept = 0;
  std::int64_t n_total = 0;
};

struct FilterResult {
  std::vector<std::size_t> kept;  // indices into the score list, ascending
  FilterReport report;
  std::vector<std::string> warnings;
};

/// softmax(logits)[file label] over all n_classes outputs, per segment.
/// Throws DataError for labels outside the classifier's classes.
std::vector<SegmentScore> score_segments_classifier(const SegmentDataset& ds,
                                                    const SpectrogramSource& source,
                                                    const Parameters& classifier,
                                                    const ModelConfig& cfg,
                                                    std::int64_t batch_size = 32);

/// Mean masked reconstruction loss over n_draws masks. Draw r of a segment
/// uses a stream keyed by (seed, recording id, segment index, r), so scores
/// do not depend on batching or order.
std::vector<SegmentScore> score_segments_recon(const SegmentDataset& ds,
                                               const SpectrogramSource& source,
                                               const Parameters& mae,
                                               const ModelConfig& cfg,
                                               std::int64_t n_draws, std::uint64_t seed,
                                               std::int64_t batch_size = 32);

/// Conf mode keeps true_class_conf >= threshold, recon mode keeps
/// recon_loss >= threshold. Throws ContractError when the mode's score is
/// missing (NaN) or a (recording, segment) pair repeats.
FilterResult filter_segments(const std::vector<SegmentScore>& scores, FilterMode mode,
                             double threshold);

/// Linear-interpolation quantile (q in [0, 1]) of the mode's scores.
double score_quantile(const std::vector<SegmentScore>& scores, FilterMode mode, double q);

/// Segment-level manifest of the kept segments, one row per segment, in the
/// order of `original`. Throws DataError when nothing is kept.
Manifest emit_filtered_manifest(const std::vector<SegmentScore>& scores,
                                const std::vector<std::size_t>& kept,
                                const Manifest& original);

void write_scores_csv(const std::filesystem::path& path, const std::vector<SegmentScore>& scores);
std::vector<SegmentScore> read_scores_csv(const std::filesystem::path& path);
std::string report_json(const FilterReport& r, FilterMode mode);

}  // namespace bmae
