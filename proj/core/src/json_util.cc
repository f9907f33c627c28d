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

#include "dexscope/json_util.h"

#include <algorithm>

namespace dexscope {

void RejectUnknownKeys(const nlohmann::json& j,
                       std::initializer_list<std::string_view> allowed,
                       std::string_view context) {
  if (!j.is_object()) {
    throw ConfigError(std::string(context) + ": expected a JSON object");
  }
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) ==
        allowed.end()) {
      throw ConfigError(std::string(context) + ": unknown key '" +
                        item.key() + "'");
    }
  }
}

nlohmann::json VecToJson(const Vec2& v) {
  return nlohmann::json::array({v.x(), v.y()});
}

Vec2 VecFromJson(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() ||
      !j[1].is_number()) {
    throw ConfigError("expected a 2-element numeric array");
  }
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

}  // namespace dexscope
