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
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symbiosis/checkpoint.hpp"
#include "symbiosis/data.hpp"
#include "symbiosis/symbiosis.hpp"

namespace symb {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

///////////////////////////////////////////
// Losses
///////////////////////////////////////////

// Label-smoothed cross-entropy of one view, averaged over non-pad targets.
Tensor nll_loss(const ModelView& view, const Batch& batch, double label_eps, ForwardContext& ctx);

// One forward per view; the smoothed NLL and the unsmoothed per-sentence
// log-likelihood come from the same logits.
struct PairTerms {
  Tensor nll_m, nll_s;    // scalars
  Tensor logp_m, logp_s;  // [B]
};

PairTerms pair_terms(const SymbiosisModel& model, const Batch& batch, double label_eps, ForwardContext& ctx);

// 0.5 * (nll_m + nll_s)
Tensor joint_loss(const Tensor& nll_m, const Tensor& nll_s);
// mean_b max(0, tau - (logp_m[b] - logp_s[b]))
Tensor margin_loss(const Tensor& logp_m, const Tensor& logp_s, double tau);
// joint + alpha * margin
Tensor sym_loss(const PairTerms& terms, double tau, double alpha);

Tensor joint_loss(const SymbiosisModel& model, const Batch& batch, double label_eps, ForwardContext& ctx);
Tensor margin_loss(const SymbiosisModel& model, const Batch& batch, double tau, ForwardContext& ctx);
Tensor sym_loss(const SymbiosisModel& model, const Batch& batch, double tau, double alpha, double label_eps,
                ForwardContext& ctx);

// Scalar hinge for one sentence.
double margin_hinge(double logp_m, double logp_s, double tau);

///////////////////////////////////////////
// Optimization
///////////////////////////////////////////

struct Schedule {
  std::int64_t warmup_steps = 8000;
  double lr_floor = 1e-7;
  double lr_peak = 5e-4;

  bool operator==(const Schedule&) const = default;
};

// Linear from lr_floor at step 0 to lr_peak at warmup, then
// lr_peak * sqrt(warmup / step).
double lr_at(const Schedule& schedule, std::int64_t step);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.997;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

// Bias-corrected Adam over the distinct storages of a parameter store.
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterStore& params, AdamConfig cfg = {});

  // Applies one update to every storage that holds a gradient. Throws
  // DivergenceError before touching anything if a gradient is not finite.
  void step(double lr);
  void zero_grad();

  std::int64_t step_count() const { return t_; }
  // Number of updates applied to the storage behind `name`.
  std::int64_t update_count(const std::string& name) const;
  std::size_t slot_count() const { return slots_.size(); }
  const AdamConfig& config() const { return cfg_; }

  // Sidecar layout: "SYMO1", u64 step, u32 count, per slot: name, u64
  // updates, u32 numel, f64 m[numel], f64 v[numel].
  std::vector<std::uint8_t> encode_state() const;
  void decode_state(const std::vector<std::uint8_t>& bytes);

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
    std::int64_t updates = 0;
  };
  const Slot& slot_for(const std::string& name) const;

  AdamConfig cfg_;
  std::vector<Slot> slots_;
  std::int64_t t_ = 0;
};

///////////////////////////////////////////
// Training
///////////////////////////////////////////

enum class Stage2Objective { kSym, kJoint };
enum class TrainMode { kSymbiosis, kClassic };

std::string to_string(Stage2Objective o);
Stage2Objective parse_stage2_objective(const std::string& s);
std::string to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kSymbiosis;
  double tau = 0.1;
  double alpha = 1.0;
  Schedule schedule;
  AdamConfig adam;
  std::int64_t stage1_steps = 5000;
  std::int64_t stage2_steps = 1000;
  std::int64_t batch_token_budget = 512;
  double label_eps = 0.1;
  std::uint64_t seed = 1;
  Stage2Objective stage2_objective = Stage2Objective::kSym;
  int keep_checkpoints = 6;
  std::int64_t eval_every = 0;  // 0: only at stage ends
  int patience = 0;             // 0: no early stop

  void validate() const;  // throws std::invalid_argument naming the field
  bool operator==(const TrainConfig&) const = default;
};

struct MetricRecord {
  std::int64_t step = 0;
  int stage = 1;
  double lr = 0.0;
  double nll_m = 0.0;
  std::optional<double> nll_s;
  std::optional<double> margin_mean;
  std::optional<double> hinge_active_frac;
  double loss = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

void to_json(nlohmann::json& j, const MetricRecord& r);

// Held-out measurements with dropout off.
struct EvalSnapshot {
  std::int64_t step = 0;
  int stage = 1;
  bool stage_end = false;
  double nll_m = 0.0;
  double token_acc_m = 0.0;
  std::optional<double> token_acc_s;
  std::optional<double> margin_mean;
  std::optional<double> hinge_active_frac;
};

void to_json(nlohmann::json& j, const EvalSnapshot& s);

struct TrainOptions {
  // Empty: no files are written.
  std::filesystem::path output_dir;
  std::function<void(const MetricRecord&)> on_metric;
  std::function<void(const EvalSnapshot&)> on_eval;
};

struct TrainResult {
  SymbiosisModel model;
  Adam optimizer;
  std::vector<MetricRecord> history;
  std::vector<EvalSnapshot> evals;
  std::vector<std::filesystem::path> checkpoints;  // retained, oldest first
  std::int64_t steps = 0;
  std::int64_t epochs = 0;
  bool stopped_early = false;
};

// Stage 1 optimizes the joint loss for stage1_steps, stage 2 the configured
// objective for stage2_steps, on one global step counter. Classic mode trains
// the main network alone for stage1_steps + stage2_steps. A checkpoint is
// written after each epoch and at the end of training.
TrainResult sym_train(const Dataset& data, const ModelDims& dims, const SymbiosisSpec& spec, const TrainConfig& cfg,
                      const TrainOptions& options = {});

// Held-out snapshot of the current parameters.
EvalSnapshot evaluate_snapshot(const SymbiosisModel& model, const std::vector<Batch>& batches, const TrainConfig& cfg,
                               bool with_subnet);

std::string checkpoint_file_name(std::int64_t step);

// Elementwise mean of the given checkpoints. Values are summed in sorted
// order per element, so the result does not depend on the input order.
Checkpoint average_checkpoints(const std::vector<std::filesystem::path>& paths);
Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints);

}  // namespace symb
