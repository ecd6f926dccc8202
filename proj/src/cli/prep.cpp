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

#include "bmae/prep.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>

#include "bmae/config.hpp"
#include "bmae/error.hpp"
#include "bmae/parallel.hpp"
#include "bmae/prng.hpp"
#include "bmae/wav.hpp"

namespace bmae {

namespace {

struct PrepState {
  std::string hash;
  std::int64_t n_samples = 0;
};

std::map<std::string, PrepState> read_state(const std::filesystem::path& path) {
  std::map<std::string, PrepState> out;
  std::ifstream in(path);
  std::string line;
  while (in && std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = Json::parse(line);
      out[j.at("id").get<std::string>()] = {j.at("hash").get<std::string>(),
                                            j.at("n_samples").get<std::int64_t>()};
    } catch (const nlohmann::json::exception&) {
      // A damaged state file only costs recomputation.
    }
  }
  return out;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<float> to_model_rate(const WavData& wav, const DspConfig& cfg) {
  if (wav.sample_rate == cfg.sample_rate) return wav.samples;
  return resample(wav.samples, wav.sample_rate, cfg.sample_rate);
}

}  // namespace

PrepReport prep_cache(const Manifest& rows, const std::filesystem::path& audio_root,
                      const std::filesystem::path& cache_dir, const DspConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cache_dir);
  const auto state_path = cache_dir / "prep_state.jsonl";
  auto state = read_state(state_path);
  const std::uint64_t cfg_seed = fnv1a64(to_json(cfg).dump());

  std::vector<const ManifestEntry*> recs;
  std::map<std::string, bool> seen;
  for (const auto& r : rows)
    if (seen.emplace(r.id, true).second) recs.push_back(&r);

  PrepReport report;
  std::mutex mu;
  parallel_for(static_cast<std::int64_t>(recs.size()), [&](std::int64_t i) {
    const auto& row = *recs[static_cast<std::size_t>(i)];
    const auto wav_path = audio_root / row.path;
    try {
      std::ifstream in(wav_path, std::ios::binary);
      if (!in) throw DataError("cannot open " + wav_path.string());
      const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      const auto hash = hex(fnv1a64(bytes, cfg_seed));
      const auto out_path = cache_path(cache_dir, row.id);
      {
        std::lock_guard lock(mu);
        auto it = state.find(row.id);
        if (it != state.end() && it->second.hash == hash && std::filesystem::exists(out_path)) {
          ++report.n_skipped;
          return;
        }
      }
      const auto samples = to_model_rate(read_wav(wav_path), cfg);
      const auto specs = recording_spectrograms(samples, row.id, cfg);
      write_spectrogram_cache(out_path, specs);
      std::lock_guard lock(mu);
      state[row.id] = {hash, static_cast<std::int64_t>(samples.size())};
      ++report.n_written;
    } catch (const std::exception& e) {
      std::lock_guard lock(mu);
      report.failed.push_back(row.id + ": " + e.what());
    }
  });

  {
    std::ofstream out(state_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + state_path.string());
    for (const auto& [id, s] : state)
      out << Json{{"id", id}, {"hash", s.hash}, {"n_samples", s.n_samples}}.dump() << "\n";
  }
  std::ofstream index(cache_dir / "segments.jsonl", std::ios::trunc);
  if (!index) throw DataError("cannot write " + (cache_dir / "segments.jsonl").string());
  for (const auto* row : recs) {
    auto it = state.find(row->id);
    if (it == state.end()) continue;
    for (const auto& span : segment(it->second.n_samples, cfg)) {
      index << Json{{"id", row->id},
                    {"segment_idx", span.segment_idx},
                    {"start_s", static_cast<double>(span.start_sample) / cfg.sample_rate},
                    {"n_samples", span.n_samples}}
                   .dump()
            << "\n";
      ++report.n_segments;
    }
  }
  std::sort(report.failed.begin(), report.failed.end());
  return report;
}

MemorySource memory_source(const std::vector<Recording>& recs, const DspConfig& cfg) {
  MemorySource src(cfg.n_mels, cfg.n_frames);
  std::vector<std::vector<Spectrogram>> specs(recs.size());
  parallel_for(static_cast<std::int64_t>(recs.size()), [&](std::int64_t i) {
    const auto& r = recs[static_cast<std::size_t>(i)];
    BMAE_REQUIRE(r.sample_rate == cfg.sample_rate, "memory_source: sample rate mismatch for " + r.id);
    specs[static_cast<std::size_t>(i)] = recording_spectrograms(quantize_pcm16(r.samples), r.id, cfg);
  });
  for (std::size_t i = 0; i < recs.size(); ++i) src.add(recs[i].id, std::move(specs[i]));
  return src;
}

}  // namespace bmae
