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

#include "symbiosis/symbiosis.hpp"

#include <sstream>

namespace symb {

std::string to_string(LayerMapStrategy s) {
  switch (s) {
    case LayerMapStrategy::kBottom: return "bottom";
    case LayerMapStrategy::kTop: return "top";
    case LayerMapStrategy::kTopBottom: return "top_bottom";
    case LayerMapStrategy::kLinear: return "linear";
  }
  return "unknown";
}

LayerMapStrategy parse_layer_map_strategy(const std::string& s) {
  if (s == "bottom") return LayerMapStrategy::kBottom;
  if (s == "top") return LayerMapStrategy::kTop;
  if (s == "top_bottom") return LayerMapStrategy::kTopBottom;
  if (s == "linear") return LayerMapStrategy::kLinear;
  throw SpecError("unknown layer map strategy '" + s + "' (expected bottom, top, top_bottom or linear)");
}

void SymbiosisSpec::validate() const {
  if (sub_depth <= 0 || sub_depth >= main_depth) {
    throw SpecError("symbiosis: need 0 < sub_depth < main_depth, got sub_depth=" + std::to_string(sub_depth) +
                    " main_depth=" + std::to_string(main_depth));
  }
  if (decoder_depth < 1) throw SpecError("symbiosis: decoder_depth must be >= 1");
}

LayerMap build_layer_map(LayerMapStrategy strategy, int main_depth, int sub_depth) {
  SymbiosisSpec{main_depth, sub_depth, 1, strategy}.validate();
  const int m = main_depth, o = sub_depth;
  LayerMap map(static_cast<std::size_t>(o));
  switch (strategy) {
    case LayerMapStrategy::kBottom:
      for (int i = 0; i < o; ++i) map[i] = i;
      break;
    case LayerMapStrategy::kTop:
      for (int i = 0; i < o; ++i) map[i] = m - o + i;
      break;
    case LayerMapStrategy::kTopBottom: {
      // Odd sub depths give the extra layer to the bottom part.
      const int top = o / 2;
      const int bottom = o - top;
      for (int i = 0; i < bottom; ++i) map[i] = i;
      for (int i = 0; i < top; ++i) map[bottom + i] = m - top + i;
      break;
    }
    case LayerMapStrategy::kLinear:
      for (int i = 0; i < o; ++i) map[i] = (i * m) / o;
      break;
  }
  return map;
}

SymbiosisModel assemble_symbiosis(const ModelDims& dims, const SymbiosisSpec& spec, ParameterStore params) {
  spec.validate();
  SymbiosisModel model;
  model.dims = dims;
  model.spec = spec;
  model.layer_map = build_layer_map(spec.strategy, spec.main_depth, spec.sub_depth);
  std::vector<int> all(static_cast<std::size_t>(spec.main_depth));
  for (int i = 0; i < spec.main_depth; ++i) all[i] = i;
  model.mnet = make_view(dims, params, all, spec.decoder_depth);
  model.snet = make_view(dims, params, model.layer_map, spec.decoder_depth);
  if (model.mnet.parameters().size() != params.size()) {
    throw std::invalid_argument("symbiosis: parameter set has " + std::to_string(params.size()) +
                                " tensors but the main network binds " +
                                std::to_string(model.mnet.parameters().size()));
  }
  model.params = std::move(params);
  return model;
}

SymbiosisModel build_symbiosis(const ModelDims& dims, const SymbiosisSpec& spec, std::uint64_t seed) {
  spec.validate();
  return assemble_symbiosis(dims, spec, init_parameters(dims, spec.main_depth, spec.decoder_depth, seed));
}

std::string SharingReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << ": " << shared_checked << " shared parameters checked";
  if (!violations.empty()) {
    os << ", " << violations.size() << " violation(s)";
    for (const auto& v : violations) os << "\n  " << v;
  }
  return os.str();
}

SharingReport verify_sharing(const SymbiosisModel& model) {
  SharingReport report;
  const ParameterStore& main = model.mnet.parameters();
  for (const auto& [name, sub_tensor] : model.snet.parameters()) {
    ++report.shared_checked;
    if (!main.contains(name)) {
      report.violations.push_back(name + ": bound by the sub network but absent from the main network");
      continue;
    }
    const Tensor& main_tensor = main.at(name);
    if (!main_tensor.same_storage(sub_tensor)) {
      report.violations.push_back(name + ": sub network holds separate storage (not shared)");
      continue;
    }
    // Write through the main view, read through the sub view, restore.
    Tensor writer = main_tensor;
    const double saved = writer.mutable_data()[0];
    const double probe = saved + 1.0;
    writer.mutable_data()[0] = probe;
    const bool seen = sub_tensor.data()[0] == probe;
    writer.mutable_data()[0] = saved;
    if (!seen) report.violations.push_back(name + ": update through the main view not observed by the sub view");
  }
  for (const auto& [name, t] : main) {
    if (!model.params.contains(name) || !model.params.at(name).same_storage(t)) {
      report.violations.push_back(name + ": main view binding differs from the owned parameter set");
    }
  }
  report.passed = report.violations.empty();
  return report;
}

}  // namespace symb
