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
#include <string_view>

#include "bmae/config.hpp"
#include "bmae/model.hpp"
#include "bmae/train.hpp"

namespace bmae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout: "BMAE", u32 version, u64 header length, JSON header,
/// then the arrays as little-endian float32 in index order. Every array is
/// tagged theta (encoder), psi (decoder), phi (head) or opt_m / opt_v
/// (optimizer moments of the parameter with the same name).
struct CheckpointMeta {
  ModelConfig model;
  Json train = nullptr;  // TrainConfig used to produce the weights, if any
  std::int64_t epoch = 0;
  Json extra = Json::object();
};

struct Checkpoint {
  Parameters params;
  std::optional<OptimState> optim;
  CheckpointMeta meta;
};

void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                     const CheckpointMeta& meta, const OptimState* optim = nullptr);

/// Encoder arrays only; no decoder, head or optimizer state.
void export_encoder(const std::filesystem::path& path, const Parameters& params,
                    const CheckpointMeta& meta);

/// Throws FormatError (with the byte offset) for a bad magic, unsupported
/// version, truncation or an index that does not tile the payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string_view tag_of(ParamGroup g);

}  // namespace bmae
