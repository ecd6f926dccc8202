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
#include <vector>

#include "bmae/prng.hpp"
#include "bmae/recording.hpp"

namespace bmae {

/// Acoustic template of one synthetic species.
struct SpeciesPrototype {
  std::int32_t class_id = 0;
  double base_freq = 1000.0;  // Hz
  double chirp_slope = 0.0;   // Hz/s within one call
  int n_harmonics = 1;
  double am_rate = 4.0;       // Hz
  double duty_cycle = 0.5;    // fraction of time with calls; 1 = gapless
  Domain domain = Domain::kBio;
};

struct CorpusSpec {
  int n_classes = 20;
  int recordings_per_class = 100;
  double min_s = 3.0;
  double max_s = 9.0;
  double snr_lo_db = 0.0;
  double snr_hi_db = 20.0;
  std::uint64_t seed = 42;
  double domain_mix = 0.5;  // fraction of classes (and so recordings) that are bio
  double val_frac = 0.15;
  double test_frac = 0.15;
  int sample_rate = 22050;

  void validate() const;  // throws ConfigError
};

/// Length of one call (a single chirp) in seconds.
inline constexpr double kCallSeconds = 0.4;
/// Minimum guaranteed silent stretch in bio recordings of 6 s or more.
inline constexpr double kMinSilenceSeconds = 3.3;

std::vector<SpeciesPrototype> generate_prototypes(int n_classes,
                                                  std::uint64_t seed,
                                                  double domain_mix = 0.5);

/// Renders one recording. `events` on the result lists every call interval.
Recording synthesize_recording(const SpeciesPrototype& proto,
                               const CorpusSpec& spec, Prng& rng);

/// Identity of one recording before any audio is rendered.
struct PlannedRecording {
  std::string id;
  std::int32_t label = 0;
  Split split = Split::kTrain;
  Domain domain = Domain::kBio;
};

/// Ids, labels and splits of every recording, in class-major order. Splits are
/// drawn per class so each class appears in every split.
std::vector<PlannedRecording> plan_corpus(const CorpusSpec& spec);

/// Renders one planned recording from its own id-keyed stream.
Recording render_planned(const PlannedRecording& plan,
                         const std::vector<SpeciesPrototype>& protos,
                         const CorpusSpec& spec);

/// Whole corpus. Each recording draws from its own stream keyed by its id,
/// so the output does not depend on generation order or thread count.
std::vector<Recording> synthesize_corpus(const CorpusSpec& spec);

/// Id of the index-th recording of a class, e.g. "c003_r0042".
std::string recording_id(std::int32_t class_id, int index);

}  // namespace bmae
