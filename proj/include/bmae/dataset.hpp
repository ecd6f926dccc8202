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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bmae/dsp.hpp"
#include "bmae/manifest.hpp"
#include "bmae/model.hpp"
#include "bmae/tensor.hpp"

namespace bmae {

/// Read access to per-segment log-mel spectrograms of recordings.
class SpectrogramSource {
 public:
  virtual ~SpectrogramSource() = default;
  /// Throws DataError when the recording is unknown.
  virtual std::int64_t segment_count(const std::string& id) const = 0;
  virtual bool contains(const std::string& id) const = 0;
  /// n_mels x n_frames values, row-major.
  virtual std::vector<float> load(const std::string& id, std::int64_t segment_idx) const = 0;
  virtual std::int64_t n_mels() const = 0;
  virtual std::int64_t n_frames() const = 0;
};

/// <dir>/<id>.spg, as written by write_spectrogram_cache.
std::filesystem::path cache_path(const std::filesystem::path& dir, const std::string& id);

class CacheSource final : public SpectrogramSource {
 public:
  CacheSource(std::filesystem::path dir, const DspConfig& cfg);
  std::int64_t segment_count(const std::string& id) const override;
  bool contains(const std::string& id) const override;
  std::vector<float> load(const std::string& id, std::int64_t segment_idx) const override;
  std::int64_t n_mels() const override { return n_mels_; }
  std::int64_t n_frames() const override { return n_frames_; }

 private:
  std::filesystem::path dir_;
  std::int64_t n_mels_;
  std::int64_t n_frames_;
};

/// Spectrograms held in memory, keyed by recording id.
class MemorySource final : public SpectrogramSource {
 public:
  MemorySource(std::int64_t n_mels, std::int64_t n_frames)
      : n_mels_(n_mels), n_frames_(n_frames) {}
  void add(const std::string& id, std::vector<Spectrogram> segments);
  std::int64_t segment_count(const std::string& id) const override;
  bool contains(const std::string& id) const override;
  std::vector<float> load(const std::string& id, std::int64_t segment_idx) const override;
  std::int64_t n_mels() const override { return n_mels_; }
  std::int64_t n_frames() const override { return n_frames_; }

 private:
  std::int64_t n_mels_;
  std::int64_t n_frames_;
  std::map<std::string, std::vector<Spectrogram>, std::less<>> data_;
};

/// One training or evaluation example.
struct SegmentRef {
  std::string id;
  std::int64_t segment_idx = 0;
  std::int32_t label = 0;
  Domain domain = Domain::kBio;
  std::int64_t file = 0;  // index into SegmentDataset::files
};

/// Segment-level view of a manifest. File-level rows expand to every cached
/// segment of the recording; segment-level rows contribute one segment each.
/// Segments are grouped by file, in manifest order of first appearance.
struct SegmentDataset {
  Manifest files;  // one row per recording, segment_idx cleared
  std::vector<SegmentRef> segments;
  std::vector<std::vector<std::int64_t>> file_segments;  // indices into segments

  std::int64_t size() const { return static_cast<std::int64_t>(segments.size()); }
};

/// Throws DataError listing every recording the source lacks, and for
/// segment rows whose index is out of range.
SegmentDataset build_dataset(const Manifest& rows, const SpectrogramSource& source);

/// Loads the listed segments, standardizes them with the model's input
/// statistics and patchifies them: (B * K) x patch_dim.
template <typename T>
BasicTensor<T> load_patches(const SpectrogramSource& source,
                            std::span<const SegmentRef> segments,
                            const ModelConfig& cfg);

}  // namespace bmae
