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

#include "bmae/recording.hpp"

#include "bmae/error.hpp"

namespace bmae {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

std::string_view to_string(Domain domain) {
  return domain == Domain::kBio ? "bio" : "general";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(text) + "'");
}

Domain parse_domain(std::string_view text) {
  if (text == "bio") return Domain::kBio;
  if (text == "general") return Domain::kGeneral;
  throw DataError("unknown domain '" + std::string(text) + "'");
}

}  // namespace bmae
