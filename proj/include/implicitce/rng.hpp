// Copyright 2026 The ImplicitCE Authors
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

#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace implicitce {

// splitmix64; used to derive independent sub-stream seeds from one user seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministically mixes a base seed with a list of salts (stream tags,
// trial indices, ...) into a fresh seed.
inline std::uint64_t mix_seed(std::uint64_t seed,
                              std::initializer_list<std::uint64_t> salts) {
  std::uint64_t state = seed ^ 0x6a09e667f3bcc908ULL;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t s : salts) {
    state ^= s + 0x9e3779b97f4a7c15ULL + (out << 6) + (out >> 2);
    out = splitmix64(state);
  }
  return out;
}

inline std::mt19937_64 make_rng(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> salts) {
  return std::mt19937_64(mix_seed(seed, salts));
}

// Floyd's algorithm: k distinct draws from [0, n) in O(k) time and space.
// Result is sorted ascending.
inline std::vector<int> sample_without_replacement(int n, int k,
                                                   std::mt19937_64& rng) {
  if (k < 0 || k > n) {
    throw std::invalid_argument("sample_without_replacement: k out of range");
  }
  std::unordered_set<int> chosen;
  chosen.reserve(static_cast<std::size_t>(k) * 2);
  for (int j = n - k; j < n; ++j) {
    std::uniform_int_distribution<int> dist(0, j);
    int t = dist(rng);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<int> out(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace implicitce
