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

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "symbiosis/model.hpp"

namespace symb {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class LayerMapStrategy { kBottom, kTop, kTopBottom, kLinear };

std::string to_string(LayerMapStrategy s);
// Accepts "bottom", "top", "top_bottom", "linear".
LayerMapStrategy parse_layer_map_strategy(const std::string& s);

// Main network: `main_depth` encoder layers. Sub network: `sub_depth` encoder
// layers drawn from the main encoder via the layer map. Both share the
// embedding, all `decoder_depth` decoder layers, the final norms and the
// output projection.
struct SymbiosisSpec {
  int main_depth = 4;
  int sub_depth = 2;
  int decoder_depth = 2;
  LayerMapStrategy strategy = LayerMapStrategy::kBottom;

  void validate() const;  // throws SpecError
  bool operator==(const SymbiosisSpec&) const = default;
};

// map[i] = j: sub-network encoder layer i is main-network encoder layer j.
using LayerMap = std::vector<int>;

LayerMap build_layer_map(LayerMapStrategy strategy, int main_depth, int sub_depth);

struct SymbiosisModel {
  ModelDims dims;
  SymbiosisSpec spec;
  LayerMap layer_map;
  ParameterStore params;  // every trainable tensor, owned once
  ModelView mnet;
  ModelView snet;

  // Shared (M-s-Net) parameters are the ones the sub network binds;
  // individual (M-i-Net) parameters are the rest.
  bool is_shared_parameter(const std::string& name) const { return snet.parameters().contains(name); }
  bool is_individual_parameter(const std::string& name) const {
    return params.contains(name) && !is_shared_parameter(name);
  }
};

SymbiosisModel build_symbiosis(const ModelDims& dims, const SymbiosisSpec& spec, std::uint64_t seed);

// Rebuilds both views over an existing parameter set (e.g. a loaded
// checkpoint). Throws std::out_of_range if a required parameter is missing.
SymbiosisModel assemble_symbiosis(const ModelDims& dims, const SymbiosisSpec& spec, ParameterStore params);

struct SharingReport {
  bool passed = true;
  std::size_t shared_checked = 0;
  std::vector<std::string> violations;

  std::string summary() const;
};

// Checks storage identity (not value equality) between every sub-network
// binding and the main network's parameter of the same name, and probes
// that a write through the main view is observed by the sub view.
SharingReport verify_sharing(const SymbiosisModel& model);

}  // namespace symb
