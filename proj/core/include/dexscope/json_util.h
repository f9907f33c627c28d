// Copyright 2026 The Dexscope Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DEXSCOPE_JSON_UTIL_H_
#define DEXSCOPE_JSON_UTIL_H_

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dexscope/errors.h"
#include "dexscope/geom.h"

namespace dexscope {

// Throws ConfigError naming the first key of `j` not in `allowed`.
void RejectUnknownKeys(const nlohmann::json& j,
                       std::initializer_list<std::string_view> allowed,
                       std::string_view context);

// Reads `key` into `*out` when present and reports whether it was. Type
// mismatches raise ConfigError.
template <typename T>
bool ReadOptional(const nlohmann::json& j, const char* key, T* out) {
  auto it = j.find(key);
  if (it == j.end()) return false;
  try {
    *out = it->get<T>();
    return true;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

template <typename T>
T ReadRequired(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ConfigError(std::string("missing required key '") + key + "'");
  }
  T out;
  ReadOptional(j, key, &out);
  return out;
}

nlohmann::json VecToJson(const Vec2& v);
Vec2 VecFromJson(const nlohmann::json& j);

}  // namespace dexscope

#endif  // DEXSCOPE_JSON_UTIL_H_
