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

#include "bmae/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bmae/error.hpp"

namespace bmae {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::string_view tag_of(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder: return "theta";
    case ParamGroup::kDecoder: return "psi";
    case ParamGroup::kHead: return "phi";
  }
  return "theta";
}

namespace {

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& buf, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= std::uint64_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  return v;
}

struct Pending {
  std::string name;
  std::string tag;
  Shape shape;
  std::span<const float> data;
  bool trainable = true;
};

void write_container(const std::filesystem::path& path, const std::vector<Pending>& arrays,
                     const CheckpointMeta& meta, std::optional<std::int64_t> optim_step) {
  Json index = Json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    const std::uint64_t nbytes = a.data.size() * sizeof(float);
    index.push_back(Json{{"name", a.name},
                         {"tag", a.tag},
                         {"shape", a.shape},
                         {"offset", offset},
                         {"nbytes", nbytes},
                         {"trainable", a.trainable}});
    offset += nbytes;
  }
  Json header{{"model", to_json(meta.model)},
              {"train", meta.train},
              {"epoch", meta.epoch},
              {"extra", meta.extra},
              {"optim_step", optim_step ? Json(*optim_step) : Json(nullptr)},
              {"arrays", index}};
  const std::string text = header.dump();
  std::string buf = "BMAE";
  put_le(buf, kCheckpointVersion, 4);
  put_le(buf, text.size(), 8);
  buf += text;
  buf.reserve(buf.size() + offset);
  for (const auto& a : arrays)
    buf.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("write failed for checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<Pending> param_arrays(const Parameters& params, bool encoder_only) {
  std::vector<Pending> out;
  for (const auto& e : params.entries()) {
    const auto g = group_of(e.name);
    if (encoder_only && g != ParamGroup::kEncoder) continue;
    out.push_back({e.name, std::string(tag_of(g)), e.tensor.shape(), e.tensor.data(), e.trainable});
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                     const CheckpointMeta& meta, const OptimState* optim) {
  auto arrays = param_arrays(params, false);
  if (optim) {
    for (const auto& [moments, tag] :
         {std::pair{&optim->m, "opt_m"}, std::pair{&optim->v, "opt_v"}}) {
      for (const auto& [name, values] : *moments) {
        BMAE_REQUIRE(params.contains(name), "save_checkpoint: moments for unknown array " + name);
        BMAE_REQUIRE(static_cast<std::int64_t>(values.size()) == params.at(name).numel(),
                     "save_checkpoint: moment size mismatch for " + name);
        arrays.push_back({name, tag, params.at(name).shape(), values, true});
      }
    }
  }
  write_container(path, arrays, meta,
                  optim ? std::optional<std::int64_t>(optim->step) : std::nullopt);
}

void export_encoder(const std::filesystem::path& path, const Parameters& params,
                    const CheckpointMeta& meta) {
  write_container(path, param_arrays(params, true), meta, std::nullopt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string();
  if (buf.size() < 4 || buf.compare(0, 4, "BMAE") != 0)
    throw FormatError(where + ": bad magic", 0);
  if (buf.size() < 16) throw FormatError(where + ": truncated preamble", buf.size());
  const auto version = static_cast<std::uint32_t>(get_le(buf, 4, 4));
  if (version != kCheckpointVersion)
    throw FormatError(where + ": unsupported version " + std::to_string(version), 4);
  const std::uint64_t header_len = get_le(buf, 8, 8);
  if (header_len > buf.size() - 16) throw FormatError(where + ": truncated header", buf.size());
  Json header;
  try {
    header = Json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(where + ": malformed header", 16 + e.byte);
  }
  const std::uint64_t payload = 16 + header_len;
  const std::uint64_t payload_size = buf.size() - payload;

  Checkpoint ck;
  try {
    ck.meta.model = model_from_json(header.at("model"));
    ck.meta.train = header.at("train");
    ck.meta.epoch = header.at("epoch").get<std::int64_t>();
    ck.meta.extra = header.at("extra");
    const auto& step = header.at("optim_step");
    if (!step.is_null()) {
      ck.optim.emplace();
      ck.optim->step = step.get<std::int64_t>();
    }
    std::uint64_t expect = 0;
    for (const auto& a : header.at("arrays")) {
      const auto name = a.at("name").get<std::string>();
      const auto tag = a.at("tag").get<std::string>();
      const auto shape = a.at("shape").get<Shape>();
      const auto offset = a.at("offset").get<std::uint64_t>();
      const auto nbytes = a.at("nbytes").get<std::uint64_t>();
      if (offset != expect)
        throw FormatError(where + ": array index does not tile the payload at " + name,
                          payload + std::min(offset, expect));
      if (nbytes != static_cast<std::uint64_t>(numel(shape)) * sizeof(float))
        throw FormatError(where + ": size of " + name + " does not match its shape", payload + offset);
      if (offset + nbytes > payload_size)
        throw FormatError(where + ": truncated data for " + name, buf.size());
      expect = offset + nbytes;
      std::vector<float> values(static_cast<std::size_t>(numel(shape)));
      std::memcpy(values.data(), buf.data() + payload + offset, nbytes);
      if (tag == "opt_m" || tag == "opt_v") {
        if (!ck.optim) throw FormatError(where + ": moments without an optimizer step", payload + offset);
        (tag == "opt_m" ? ck.optim->m : ck.optim->v)[name] = std::move(values);
        continue;
      }
      if (tag != tag_of(group_of(name)))
        throw FormatError(where + ": array " + name + " has tag " + tag, payload + offset);
      ck.params.add(name, Tensor(shape, values), a.at("trainable").get<bool>());
    }
    if (expect != payload_size)
      throw FormatError(where + ": " + std::to_string(payload_size - expect) +
                            " trailing payload bytes not covered by the index",
                        payload + expect);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": malformed header (" + e.what() + ")", 16);
  } catch (const ContractError& e) {
    throw FormatError(where + ": " + e.what(), 16);
  } catch (const ConfigError& e) {
    throw FormatError(where + ": " + e.what(), 16);
  }
  return ck;
}

}  // namespace bmae
