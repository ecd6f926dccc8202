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
#include <string_view>
#include <vector>

namespace bmae {

/// 64-bit FNV-1a over raw bytes. Used for stream labels and content hashes.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

/// xoshiro256** generator seeded through SplitMix64 from (seed, label).
///
/// Streams with different labels are decorrelated by hashing the label into
/// the seed before expansion. The sequence is fully determined by
/// (seed, label, number of draws so far); no std:: distributions are used, so
/// the output does not depend on the standard library implementation.
class Prng {
 public:
  Prng(std::uint64_t seed, std::string_view label);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (no cached second variate).
  double normal();
  /// Normal(0, sigma) resampled until |x| <= bound_sigmas * sigma.
  double truncated_normal(double sigma, double bound_sigmas = 2.0);
  /// Uniformly random permutation of {0, ..., k-1} (Fisher-Yates).
  std::vector<std::int64_t> permutation(std::int64_t k);

  /// Derive an independent child stream.
  Prng fork(std::string_view label) const;

 private:
  Prng(std::uint64_t s0, std::uint64_t s1, std::uint64_t s2, std::uint64_t s3);
  std::uint64_t s_[4];
};

}  // namespace bmae
