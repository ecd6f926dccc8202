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
#include <optional>
#include <string>
#include <vector>

#include "bmae/corpus.hpp"
#include "bmae/recording.hpp"

namespace bmae {

/// One manifest row. File-level rows leave segment_idx empty; segment-level
/// rows (emitted by curation) reference a single segment of the recording.
struct ManifestEntry {
  std::string id;
  std::string path;  // WAV path, relative to the manifest directory
  std::int32_t label = 0;
  Split split = Split::kTrain;
  Domain domain = Domain::kBio;
  double duration_s = 0.0;
  std::optional<std::int64_t> segment_idx;

  bool operator==(const ManifestEntry&) const = default;
};

using Manifest = std::vector<ManifestEntry>;

std::string to_json_line(const ManifestEntry& e);
ManifestEntry parse_manifest_line(const std::string& line);

/// Writes one JSON object per line. Throws DataError naming the path on I/O
/// failure.
void write_manifest(const Manifest& rows, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

/// Writes audio/<id>.wav (PCM16) for each recording under `dir` and a
/// manifest.jsonl listing them. Returns the manifest rows.
Manifest write_corpus(const std::vector<Recording>& recs,
                      const std::filesystem::path& dir);

/// Synthesizes the corpus described by `spec` straight to disk, one recording
/// at a time, so memory stays bounded by a single recording.
Manifest synthesize_to_disk(const CorpusSpec& spec, const std::filesystem::path& dir);

/// Rows of one split, in manifest order.
Manifest filter_split(const Manifest& rows, Split split);

}  // namespace bmae
