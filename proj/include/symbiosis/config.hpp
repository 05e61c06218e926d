/*
 * Copyright 2026 The Symbiosis Networks Authors
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

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "symbiosis/data.hpp"
#include "symbiosis/decode.hpp"
#include "symbiosis/model.hpp"
#include "symbiosis/symbiosis.hpp"
#include "symbiosis/training.hpp"

namespace symb {

// Messages start with the dotted path of the offending field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(NormStyle s);
NormStyle parse_norm_style(const std::string& s);

struct RunConfig {
  ModelDims model;
  SymbiosisSpec symbiosis;
  TrainConfig train;
  SyntheticTaskSpec data;
  BeamConfig beam;
  std::string output_dir = "runs/default";

  // Validates every section plus the cross-section constraints.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// Missing keys keep their defaults; unknown keys and wrongly typed values
// throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

struct SweepConfig {
  RunConfig base;
  std::vector<std::pair<int, int>> depths;  // (main depth, sub depth)
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
};

SweepConfig sweep_from_json(const nlohmann::json& j);
nlohmann::json sweep_to_json(const SweepConfig& cfg);
SweepConfig load_sweep(const std::filesystem::path& path);

}  // namespace symb
