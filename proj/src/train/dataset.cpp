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

#include "bmae/dataset.hpp"

#include <algorithm>
#include <set>

#include "bmae/error.hpp"
#include "bmae/parallel.hpp"

namespace bmae {

std::filesystem::path cache_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / (id + ".spg");
}

CacheSource::CacheSource(std::filesystem::path dir, const DspConfig& cfg)
    : dir_(std::move(dir)), n_mels_(cfg.n_mels), n_frames_(cfg.n_frames) {}

std::int64_t CacheSource::segment_count(const std::string& id) const {
  return cached_segment_count(cache_path(dir_, id), n_mels_, n_frames_);
}

bool CacheSource::contains(const std::string& id) const {
  return std::filesystem::exists(cache_path(dir_, id));
}

std::vector<float> CacheSource::load(const std::string& id, std::int64_t segment_idx) const {
  return read_cached_segment(cache_path(dir_, id), segment_idx, n_mels_, n_frames_);
}

void MemorySource::add(const std::string& id, std::vector<Spectrogram> segments) {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    BMAE_REQUIRE(s.n_mels == n_mels_ && s.n_frames == n_frames_,
                 "MemorySource: spectrogram shape mismatch for " + id);
    BMAE_REQUIRE(s.segment_idx == static_cast<std::int32_t>(i),
                 "MemorySource: segments of " + id + " must be in index order");
  }
  data_[id] = std::move(segments);
}

std::int64_t MemorySource::segment_count(const std::string& id) const {
  auto it = data_.find(id);
  if (it == data_.end()) throw DataError("no spectrograms for recording " + id);
  return static_cast<std::int64_t>(it->second.size());
}

bool MemorySource::contains(const std::string& id) const { return data_.count(id) > 0; }

std::vector<float> MemorySource::load(const std::string& id, std::int64_t segment_idx) const {
  auto it = data_.find(id);
  if (it == data_.end()) throw DataError("no spectrograms for recording " + id);
  if (segment_idx < 0 || segment_idx >= static_cast<std::int64_t>(it->second.size()))
    throw DataError("segment " + std::to_string(segment_idx) + " out of range for " + id);
  return it->second[static_cast<std::size_t>(segment_idx)].values;
}

SegmentDataset build_dataset(const Manifest& rows, const SpectrogramSource& source) {
  std::vector<std::string> missing;
  std::set<std::string> seen_missing;
  for (const auto& r : rows)
    if (!source.contains(r.id) && seen_missing.insert(r.id).second) missing.push_back(r.id);
  if (!missing.empty()) {
    std::string msg = "missing spectrogram cache for " + std::to_string(missing.size()) +
                      " recording(s):";
    for (const auto& id : missing) msg += " " + id;
    throw DataError(msg);
  }

  SegmentDataset ds;
  std::map<std::string, std::int64_t, std::less<>> file_of;
  std::set<std::pair<std::int64_t, std::int64_t>> taken;
  for (const auto& r : rows) {
    auto [it, fresh] = file_of.try_emplace(r.id, static_cast<std::int64_t>(ds.files.size()));
    if (fresh) {
      auto row = r;
      row.segment_idx.reset();
      ds.files.push_back(row);
      ds.file_segments.emplace_back();
    } else if (ds.files[it->second].label != r.label) {
      throw DataError("recording " + r.id + " listed with conflicting labels");
    }
    const std::int64_t f = it->second;
    const std::int64_t n = source.segment_count(r.id);
    std::int64_t lo = 0;
    std::int64_t hi = n;
    if (r.segment_idx) {
      if (*r.segment_idx < 0 || *r.segment_idx >= n)
        throw DataError("segment " + std::to_string(*r.segment_idx) + " of " + r.id +
                        " out of range (" + std::to_string(n) + " cached)");
      lo = *r.segment_idx;
      hi = lo + 1;
    }
    for (std::int64_t s = lo; s < hi; ++s) {
      if (!taken.insert({f, s}).second) continue;
      ds.file_segments[static_cast<std::size_t>(f)].push_back(ds.size());
      ds.segments.push_back({r.id, s, r.label, r.domain, f});
    }
  }
  // Keep segments grouped by file even when a manifest interleaves rows.
  std::vector<SegmentRef> grouped;
  grouped.reserve(ds.segments.size());
  for (auto& idx : ds.file_segments) {
    std::sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
      return ds.segments[a].segment_idx < ds.segments[b].segment_idx;
    });
    for (auto& i : idx) {
      grouped.push_back(ds.segments[static_cast<std::size_t>(i)]);
      i = static_cast<std::int64_t>(grouped.size()) - 1;
    }
  }
  ds.segments = std::move(grouped);
  return ds;
}

template <typename T>
BasicTensor<T> load_patches(const SpectrogramSource& source,
                            std::span<const SegmentRef> segments,
                            const ModelConfig& cfg) {
  BMAE_REQUIRE(source.n_mels() == cfg.input_h && source.n_frames() == cfg.input_w,
               "load_patches: spectrogram shape does not match the model input");
  const std::int64_t k = cfg.n_patches();
  const std::int64_t p = cfg.patch_dim();
  const auto b = static_cast<std::int64_t>(segments.size());
  std::vector<T> out(static_cast<std::size_t>(b * k * p));
  const double inv_std = 1.0 / cfg.input_std;
  parallel_for(b, [&](std::int64_t i) {
    auto image = source.load(segments[static_cast<std::size_t>(i)].id,
                             segments[static_cast<std::size_t>(i)].segment_idx);
    for (auto& v : image)
      v = static_cast<float>((static_cast<double>(v) - cfg.input_mean) * inv_std);
    const auto ps = patchify(image, cfg.input_h, cfg.input_w, cfg.patch_h, cfg.patch_w);
    std::copy(ps.values.begin(), ps.values.end(), out.begin() + i * k * p);
  });
  return BasicTensor<T>({b * k, p}, std::move(out));
}

template BasicTensor<float> load_patches<float>(const SpectrogramSource&,
                                                std::span<const SegmentRef>,
                                                const ModelConfig&);
template BasicTensor<double> load_patches<double>(const SpectrogramSource&,
                                                  std::span<const SegmentRef>,
                                                  const ModelConfig&);

}  // namespace bmae
