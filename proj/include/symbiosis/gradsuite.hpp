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

#include <cstdint>
#include <string>
#include <vector>

#include "symbiosis/tensor.hpp"

namespace symb {

struct GradSuiteEntry {
  std::string name;
  double tolerance = 0.0;
  GradCheckReport report;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;

  bool passed() const;
  std::string summary() const;  // one line per entry
};

// Central finite differences in 64-bit over every differentiable primitive,
// at relative tolerance 1e-4.
GradSuiteResult run_primitive_grad_suite(std::uint64_t seed = 1234);

// The full symbiosis loss through both networks on 2-layer toy dims with
// dropout off, at relative tolerance 1e-3. Covers every layer-map strategy
// and both norm placements.
GradSuiteResult run_model_grad_suite(std::uint64_t seed = 10);

}  // namespace symb
