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

#include "bmae/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "bmae/error.hpp"
#include "bmae/parallel.hpp"
#include "bmae/wav.hpp"

namespace bmae {

using nlohmann::json;

std::string to_json_line(const ManifestEntry& e) {
  json j;
  j["id"] = e.id;
  j["path"] = e.path;
  j["label"] = e.label;
  j["split"] = std::string(to_string(e.split));
  j["domain"] = std::string(to_string(e.domain));
  j["duration_s"] = e.duration_s;
  if (e.segment_idx) j["segment_idx"] = *e.segment_idx;
  return j.dump();
}

ManifestEntry parse_manifest_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& ex) {
    throw DataError(std::string("manifest: malformed line: ") + ex.what());
  }
  if (!j.is_object()) throw DataError("manifest: line is not an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "id" && key != "path" && key != "label" && key != "split" &&
        key != "domain" && key != "duration_s" && key != "segment_idx")
      throw DataError("manifest: unknown key '" + key + "'");
  }
  ManifestEntry e;
  try {
    e.id = j.at("id").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.label = j.at("label").get<std::int32_t>();
    e.split = parse_split(j.at("split").get<std::string>());
    e.domain = parse_domain(j.at("domain").get<std::string>());
    e.duration_s = j.at("duration_s").get<double>();
    if (j.contains("segment_idx")) e.segment_idx = j["segment_idx"].get<std::int64_t>();
  } catch (const json::exception& ex) {
    throw DataError(std::string("manifest: ") + ex.what());
  }
  if (e.label < 0) throw DataError("manifest: negative label for " + e.id);
  return e;
}

void write_manifest(const Manifest& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : rows) out << to_json_line(r) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read manifest " + path.string());
  Manifest rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(parse_manifest_line(line));
    } catch (const DataError& ex) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return rows;
}

Manifest write_corpus(const std::vector<Recording>& recs,
                      const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "audio", ec);
  if (ec) throw DataError("cannot create " + (dir / "audio").string() + ": " + ec.message());
  Manifest rows;
  rows.reserve(recs.size());
  for (const auto& r : recs) {
    const std::string rel = "audio/" + r.id + ".wav";
    write_wav_pcm16(dir / rel, r.samples, r.sample_rate);
    rows.push_back({r.id, rel, r.label, r.split, r.domain, r.duration_s(), std::nullopt});
  }
  write_manifest(rows, dir / "manifest.jsonl");
  return rows;
}

Manifest synthesize_to_disk(const CorpusSpec& spec, const std::filesystem::path& dir) {
  const auto plan = plan_corpus(spec);
  const auto protos = generate_prototypes(spec.n_classes, spec.seed, spec.domain_mix);
  std::error_code ec;
  std::filesystem::create_directories(dir / "audio", ec);
  if (ec) throw DataError("cannot create " + (dir / "audio").string() + ": " + ec.message());
  Manifest rows(plan.size());
  parallel_for(static_cast<std::int64_t>(plan.size()), [&](std::int64_t j) {
    const auto rec = render_planned(plan[j], protos, spec);
    const std::string rel = "audio/" + rec.id + ".wav";
    write_wav_pcm16(dir / rel, rec.samples, rec.sample_rate);
    rows[j] = {rec.id, rel, rec.label, rec.split, rec.domain, rec.duration_s(), std::nullopt};
  });
  write_manifest(rows, dir / "manifest.jsonl");
  return rows;
}

Manifest filter_split(const Manifest& rows, Split split) {
  Manifest out;
  for (const auto& r : rows)
    if (r.split == split) out.push_back(r);
  return out;
}

}  // namespace bmae
