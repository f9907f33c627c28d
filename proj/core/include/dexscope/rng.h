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

#ifndef DEXSCOPE_RNG_H_
#define DEXSCOPE_RNG_H_

#include <cstdint>
#include <random>
#include <string>

namespace dexscope {

// Seeded generator with distribution helpers whose output depends only on the
// engine state (no cached values inside std:: distributions), so a saved
// state string reproduces the exact stream.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }
  // Uniform on [0, 1).
  double Uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform01(); }
  // Uniform integer on [0, n).
  uint64_t UniformInt(uint64_t n);
  // Standard normal via Box-Muller; consumes two draws per call.
  double Normal();

  // Derives an independent child stream; used to give every environment its
  // own generator so results do not depend on thread scheduling.
  Rng Fork();

  std::string SaveState() const;
  void LoadState(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dexscope

#endif  // DEXSCOPE_RNG_H_
