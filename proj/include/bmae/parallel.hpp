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
#include <functional>

namespace bmae {

/// Worker count: BMAE_THREADS if set and positive, otherwise the hardware
/// concurrency (at least 1).
int worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
/// processed exactly once; the first exception thrown is rethrown after all
/// workers have joined.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace bmae
