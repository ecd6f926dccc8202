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

#include <string>
#include <vector>

#include "bmae/dataset.hpp"
#include "bmae/manifest.hpp"
#include "bmae/model.hpp"
#include "bmae/prng.hpp"

namespace bmae::testing {

// 32 x 64 inputs, 16 x 16 patches (2 x 4 grid), one-layer encoder/decoder.
inline ModelConfig small_model(std::int64_t n_classes = 4) {
  ModelConfig c;
  c.input_h = 32;
  c.input_w = 64;
  c.embed_dim = 16;
  c.enc_depth = 1;
  c.enc_heads = 2;
  c.dec_dim = 16;
  c.dec_depth = 1;
  c.dec_heads = 2;
  c.n_classes = n_classes;
  c.mask_ratio = 0.5;
  c.input_mean = 0.0;
  c.input_std = 1.0;
  return c;
}

struct ToyCorpus {
  Manifest rows;
  MemorySource source{32, 64};
};

// Class c lights up mel rows [8c, 8c + 8) mod 32 on top of unit noise. Files
// alternate between the bio and general domains; file j of a class has
// 1 + (j % max_segments) segments.
inline void toy_extend(ToyCorpus& t, int n_classes, int files_per_class, int max_segments,
                       std::uint64_t seed, Split split = Split::kTrain, double signal = 3.0) {
  for (int c = 0; c < n_classes; ++c) {
    for (int j = 0; j < files_per_class; ++j) {
      ManifestEntry e;
      e.id = std::string(to_string(split)) + "_c" + std::to_string(c) + "_f" + std::to_string(j);
      e.path = "audio/" + e.id + ".wav";
      e.label = c;
      e.split = split;
      e.domain = (c + j) % 2 == 0 ? Domain::kBio : Domain::kGeneral;
      const int n_seg = 1 + j % max_segments;
      e.duration_s = 3.0 + 1.5 * (n_seg - 1);
      std::vector<Spectrogram> segs;
      for (int s = 0; s < n_seg; ++s) {
        Prng rng(seed, e.id + "/" + std::to_string(s));
        Spectrogram sp;
        sp.recording_id = e.id;
        sp.segment_idx = s;
        sp.n_mels = 32;
        sp.n_frames = 64;
        sp.values.resize(32 * 64);
        for (int m = 0; m < 32; ++m)
          for (int f = 0; f < 64; ++f) {
            const bool lit = (m - 8 * c % 32 + 32) % 32 < 8;
            sp.values[m * 64 + f] = static_cast<float>(rng.normal() + (lit ? signal : 0.0));
          }
        segs.push_back(std::move(sp));
      }
      t.source.add(e.id, std::move(segs));
      t.rows.push_back(e);
    }
  }
}

inline ToyCorpus toy_corpus(int n_classes, int files_per_class, int max_segments,
                            std::uint64_t seed, Split split = Split::kTrain,
                            double signal = 3.0) {
  ToyCorpus t;
  toy_extend(t, n_classes, files_per_class, max_segments, seed, split, signal);
  return t;
}

}  // namespace bmae::testing
