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

#include <filesystem>
#include <span>
#include <vector>

namespace bmae {

struct WavData {
  int sample_rate = 0;
  std::vector<float> samples;  // mono, in [-1, 1]
};

/// Reads RIFF/WAVE with 16-bit PCM or 32-bit float samples. Multi-channel
/// input is averaged down to mono. Throws DataError naming the path.
WavData read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are clipped to [-1, 1] and rounded.
void write_wav_pcm16(const std::filesystem::path& path,
                     std::span<const float> samples, int sample_rate);

/// Quantizes exactly as write_wav_pcm16 does, without touching disk.
std::vector<float> quantize_pcm16(std::span<const float> samples);

}  // namespace bmae
