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

#include <json.hpp>

#include "bmae/corpus.hpp"
#include "bmae/curation.hpp"
#include "bmae/dsp.hpp"
#include "bmae/eval.hpp"
#include "bmae/model.hpp"
#include "bmae/train.hpp"

namespace bmae {

using Json = nlohmann::ordered_json;

struct PathsConfig {
  std::string corpus_dir = "corpus";
  std::string cache_dir = "cache";
  std::string runs_dir = "runs";
};

/// Train section: one TrainConfig per protocol.
struct TrainSection {
  TrainConfig pretrain = TrainConfig::pretraining();
  TrainConfig finetune = TrainConfig::finetuning();
  TrainConfig probe = TrainConfig::finetuning();
};

/// Whole experiment description. `seed` is the run seed; it is copied into
/// every train config and the curation config by resolved().
struct RunConfig {
  CorpusSpec corpus;
  DspConfig dsp;
  ModelConfig model = ModelConfig::tiny();
  TrainSection train;
  std::optional<MixSpec> mix;
  CurationConfig curation;
  EvalConfig eval;
  PathsConfig paths;
  std::uint64_t seed = 0;

  /// Validates every section; throws ConfigError.
  void validate() const;
  /// Copy with the run seed propagated.
  RunConfig resolved() const;
};

// Strict conversions: unknown or mistyped keys throw ConfigError naming the
// offending path; missing keys keep their defaults.
Json to_json(const CorpusSpec& c);
Json to_json(const DspConfig& c);
Json to_json(const ModelConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const MixSpec& c);
Json to_json(const CurationConfig& c);
Json to_json(const EvalConfig& c);
Json to_json(const RunConfig& c);

CorpusSpec corpus_from_json(const Json& j, const std::string& where = "corpus");
DspConfig dsp_from_json(const Json& j, const std::string& where = "dsp");
ModelConfig model_from_json(const Json& j, const std::string& where = "model");
TrainConfig train_from_json(const Json& j, const TrainConfig& defaults, const std::string& where);
MixSpec mix_from_json(const Json& j, const std::string& where = "mix");
CurationConfig curation_from_json(const Json& j, const std::string& where = "curation");
EvalConfig eval_from_json(const Json& j, const std::string& where = "eval");
RunConfig run_config_from_json(const Json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

/// 16 hex digits of FNV-1a over the canonical JSON of the resolved config.
std::string config_hash(const RunConfig& cfg);

}  // namespace bmae
