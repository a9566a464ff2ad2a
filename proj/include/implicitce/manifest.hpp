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

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace implicitce {

inline constexpr const char* kVersion = "0.1.0";

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

// Every command writes one of these next to its outputs so a run can be
// replayed from (inputs, flags, seed).
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
  std::vector<std::string> outputs;
  double wall_seconds = 0.0;

  void add_input(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

}  // namespace implicitce
