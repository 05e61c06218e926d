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
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symbiosis/config.hpp"

namespace symb {

// Overrides RunConfig::output_dir when set.
inline constexpr const char* kOutputDirEnv = "SYMBIOSIS_OUTPUT_DIR";

std::filesystem::path resolve_output_dir(const RunConfig& cfg);

// SHA-1 over the library sources at build time.
std::string code_version_hash();

// "S-Net encoder layer i <- M-Net encoder layer j" table, one line per layer.
std::string describe_layer_map(const SymbiosisSpec& spec);

///////////////////////////////////////////
// train
///////////////////////////////////////////

struct TrainRun {
  std::filesystem::path dir;
  TrainResult result;
  nlohmann::json manifest;
};

// Trains into `dir`, which must not already hold a run. The directory ends up
// with manifest.json, config.json, metrics.jsonl and checkpoints/. The
// manifest is written before training and finalized afterwards, also when
// training diverges (the error is rethrown).
TrainRun run_training(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream* log = nullptr);

///////////////////////////////////////////
// eval
///////////////////////////////////////////

// Checkpoint files of a run, oldest first.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& run_dir);

// Checks dims and parameter schema against the configured model.
SymbiosisModel load_model(const RunConfig& cfg, const Checkpoint& ck);

struct EvalRequest {
  std::vector<std::filesystem::path> checkpoints;  // averaged when more than one
  bool subnet = false;
  std::string split = "test";  // train, valid or test
};

struct EvalRun {
  EvalReport report;
  std::vector<std::string> hypotheses;  // detokenized, one per sentence
  std::vector<std::string> references;
};

EvalRun run_eval(const RunConfig& cfg, const EvalRequest& request);

nlohmann::json report_to_json(const EvalReport& r);

///////////////////////////////////////////
// compare
///////////////////////////////////////////

struct CompareRow {
  int main_depth = 0;
  int sub_depth = 0;
  std::vector<std::optional<double>> classic_bleu;    // per seed, empty on failure
  std::vector<std::optional<double>> symbiosis_bleu;  // per seed, empty on failure
  std::optional<double> classic_mean;
  std::optional<double> symbiosis_mean;
  std::optional<double> delta;  // symbiosis_mean - classic_mean
};

struct CompareTable {
  std::vector<std::uint64_t> seeds;
  std::vector<CompareRow> rows;

  bool complete() const;
  std::string text() const;
  nlohmann::json to_json() const;
};

// Trains classic and symbiosis models per depth and seed under the same total
// step budget, then scores the main network on the test split with beam
// search. Writes compare.txt and compare.jsonl into `dir`. Failed sub-runs
// leave empty cells.
CompareTable run_compare(const SweepConfig& sweep, const std::filesystem::path& dir, std::ostream* log = nullptr);

///////////////////////////////////////////
// verify / gradcheck
///////////////////////////////////////////

SharingReport run_verify(const RunConfig& cfg, const std::filesystem::path& checkpoint);

}  // namespace symb
