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
#include <string>
#include <string_view>
#include <vector>

namespace bmae {

enum class Split { kTrain, kVal, kTest };
enum class Domain { kBio, kGeneral };

std::string_view to_string(Split split);
std::string_view to_string(Domain domain);
Split parse_split(std::string_view text);
Domain parse_domain(std::string_view text);

/// Vocalization interval in seconds, [start_s, end_s).
struct Interval {
  double start_s = 0.0;
  double end_s = 0.0;
};

/// A labeled mono waveform. `events` lists where the generator placed
/// vocalizations; it is empty for recordings read from disk.
struct Recording {
  std::string id;
  std::vector<float> samples;
  int sample_rate = 22050;
  std::int32_t label = 0;
  Split split = Split::kTrain;
  Domain domain = Domain::kBio;
  std::vector<Interval> events;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate
                           : 0.0;
  }
};

}  // namespace bmae
