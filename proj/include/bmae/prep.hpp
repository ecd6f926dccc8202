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
#include <vector>

#include "bmae/dataset.hpp"
#include "bmae/dsp.hpp"
#include "bmae/manifest.hpp"
#include "bmae/recording.hpp"

namespace bmae {

struct PrepReport {
  std::int64_t n_written = 0;
  std::int64_t n_skipped = 0;  // cache already up to date
  std::int64_t n_segments = 0;
  std::vector<std::string> failed;  // "<id>: <reason>"
};

/// Computes the spectrogram cache of every recording in the manifest:
/// <cache_dir>/<id>.spg plus a segment index <cache_dir>/segments.jsonl with
/// one {id, segment_idx, start_s, n_samples} line per segment. A recording is
/// skipped when the hash of its WAV bytes and the DSP config matches the one
/// recorded by the previous run (<cache_dir>/prep_state.jsonl). WAV paths are
/// resolved against `audio_root`. Unreadable files are listed, not thrown.
PrepReport prep_cache(const Manifest& rows, const std::filesystem::path& audio_root,
                      const std::filesystem::path& cache_dir, const DspConfig& cfg);

/// In-memory counterpart for recordings that never touch disk. Samples are
/// quantized to 16 bits first so results equal the on-disk pipeline.
MemorySource memory_source(const std::vector<Recording>& recs, const DspConfig& cfg);

}  // namespace bmae
