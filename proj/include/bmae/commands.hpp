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

#include "bmae/config.hpp"
#include "bmae/curation.hpp"
#include "bmae/eval.hpp"
#include "bmae/prep.hpp"
#include "bmae/train.hpp"

namespace bmae {

/// Per-invocation options that are not part of the run config.
struct StageFlags {
  std::optional<std::filesystem::path> init;    // checkpoint to start from / score with
  std::optional<std::filesystem::path> resume;  // checkpoint with optimizer state
  std::optional<std::filesystem::path> scorer;  // grid threshold axis: scoring model
  std::optional<std::filesystem::path> train_manifest;  // training rows; default: corpus manifest
  bool freeze_decoder = false;
  bool reinit_decoder = false;
  bool encoder_only_export = false;
  std::optional<MixSpec> mix;
  std::optional<double> fraction;
  std::optional<FilterMode> mode;
  std::optional<double> threshold;
  std::optional<double> drop_fraction;  // curate: threshold at this score quantile
  std::string split = "val";

  Json to_json() const;
};

struct StageResult {
  std::filesystem::path run_dir;
  Json summary = Json::object();
  std::vector<std::string> warnings;
};

/// <runs_dir>/<stage>-<16 hex>-seed<seed>; the hash covers the resolved
/// config, the stage name and the flags.
std::filesystem::path run_dir_for(const RunConfig& cfg, const std::string& stage,
                                  const StageFlags& flags);

Manifest cmd_synth(const RunConfig& cfg);
/// Throws DataError listing unreadable recordings after processing the rest.
PrepReport cmd_prep(const RunConfig& cfg);
StageResult cmd_pretrain(const RunConfig& cfg, const StageFlags& flags);
StageResult cmd_finetune(const RunConfig& cfg, const StageFlags& flags);
StageResult cmd_probe(const RunConfig& cfg, const StageFlags& flags);
StageResult cmd_curate(const RunConfig& cfg, const StageFlags& flags);
StageResult cmd_evaluate(const RunConfig& cfg, const StageFlags& flags);

enum class GridAxis { kFraction, kMixRatio, kThreshold };
GridAxis parse_grid_axis(std::string_view s);  // throws ConfigError
std::string_view to_string(GridAxis a);

struct GridCell {
  std::string value;
  std::uint64_t seed = 0;
  std::optional<double> top1;
  std::optional<double> top5;
  double wall_s = 0.0;
  std::string status = "ok";
};

/// One cell per (value, seed). Cell failures are recorded and the grid
/// continues. Writes grid.csv (value,seed,top1,top5,wall_s) and
/// grid_cells.jsonl (with status) under the grid's run directory.
///   fraction:  finetune on a stratified fraction (from --init when given)
///   mix_ratio: pretrain with the mix, then finetune from it
///   threshold: confidence-filter the training set with --scorer, then
///              finetune (from --init when given) on the kept segments
StageResult cmd_grid(const RunConfig& cfg, GridAxis axis, const std::vector<std::string>& values,
                     const std::vector<std::uint64_t>& seeds, const StageFlags& flags,
                     std::vector<GridCell>* cells = nullptr);

std::vector<GridCell> read_grid_csv(const std::filesystem::path& path);

}  // namespace bmae
