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

#include "symbiosis/run.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "symbiosis/checkpoint.hpp"

#ifndef SYMB_CODE_HASH
#define SYMB_CODE_HASH "unknown"
#endif

namespace symb {

using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json(const std::filesystem::path& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

const std::vector<SentencePair>& split_by_name(const Dataset& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "valid") return data.valid;
  if (split == "test") return data.test;
  throw std::invalid_argument("unknown split '" + split + "' (expected train, valid or test)");
}

double mean_of(const std::vector<std::optional<double>>& xs, bool& all_present) {
  double s = 0.0;
  all_present = !xs.empty();
  for (const auto& x : xs) {
    if (!x) {
      all_present = false;
      continue;
    }
    s += *x;
  }
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "FAILED";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << *v;
  return os.str();
}

}  // namespace

std::filesystem::path resolve_output_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return cfg.output_dir;
}

std::string code_version_hash() { return SYMB_CODE_HASH; }

std::string describe_layer_map(const SymbiosisSpec& spec) {
  const auto map = build_layer_map(spec.strategy, spec.main_depth, spec.sub_depth);
  std::ostringstream os;
  os << "layer map " << to_string(spec.strategy) << " (M-Net " << spec.main_depth << " layers, S-Net "
     << spec.sub_depth << " layers)\n";
  for (std::size_t i = 0; i < map.size(); ++i) {
    os << "  S-Net encoder layer " << i << " <- M-Net encoder layer " << map[i] << "\n";
  }
  return os.str();
}

TrainRun run_training(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream* log) {
  cfg.validate();
  if (std::filesystem::exists(dir / "manifest.json")) {
    throw std::runtime_error("output directory '" + dir.string() + "' already holds a run");
  }
  std::filesystem::create_directories(dir);
  save_config(dir / "config.json", cfg);

  const auto map = build_layer_map(cfg.symbiosis.strategy, cfg.symbiosis.main_depth, cfg.symbiosis.sub_depth);
  json manifest{
      {"config", config_to_json(cfg)},
      {"seed", cfg.train.seed},
      {"mode", to_string(cfg.train.mode)},
      {"layer_map", map},
      {"code_hash", code_version_hash()},
      {"started_at", utc_now()},
      {"status", "running"},
  };
  write_json(dir / "manifest.json", manifest);

  const Dataset data = generate(cfg.data);
  TrainOptions options;
  options.output_dir = dir;
  if (log) {
    options.on_metric = [log](const MetricRecord& r) {
      if (r.step % 100 == 0) *log << json(r).dump() << "\n" << std::flush;
    };
    options.on_eval = [log](const EvalSnapshot& s) { *log << "eval " << json(s).dump() << "\n" << std::flush; };
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto seconds = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  TrainRun run;
  run.dir = dir;
  try {
    run.result = sym_train(data, cfg.model, cfg.symbiosis, cfg.train, options);
  } catch (const std::exception& e) {
    manifest["status"] = dynamic_cast<const DivergenceError*>(&e) ? "diverged" : "failed";
    manifest["error"] = e.what();
    manifest["wall_clock_seconds"] = seconds();
    manifest["finished_at"] = utc_now();
    json kept = json::array();
    for (const auto& p : list_checkpoints(dir)) kept.push_back(p.filename().string());
    manifest["checkpoints"] = kept;
    write_json(dir / "manifest.json", manifest);
    throw;
  }
  const double train_seconds = seconds();

  const TrainResult& r = run.result;
  const bool classic = cfg.train.mode == TrainMode::kClassic;
  const int max_decode = std::min(cfg.beam.max_decode_len, cfg.model.max_len);
  json final_metrics{{"steps", r.steps}, {"epochs", r.epochs}, {"stopped_early", r.stopped_early}};
  if (!r.history.empty()) final_metrics["last_train_record"] = r.history.back();
  if (!r.evals.empty()) final_metrics["last_eval"] = r.evals.back();
  if (!data.test.empty()) {
    final_metrics["test_greedy_token_acc_m"] = greedy_token_accuracy(r.model.mnet, data.test, max_decode).value();
    if (!classic) {
      final_metrics["test_greedy_token_acc_s"] = greedy_token_accuracy(r.model.snet, data.test, max_decode).value();
    }
  }
  json evals = json::array();
  for (const auto& s : r.evals) evals.push_back(s);
  json kept = json::array();
  for (const auto& p : r.checkpoints) kept.push_back(p.filename().string());

  manifest["status"] = "completed";
  manifest["finished_at"] = utc_now();
  manifest["wall_clock_seconds"] = seconds();
  manifest["train_seconds"] = train_seconds;
  manifest["final_metrics"] = final_metrics;
  manifest["evals"] = evals;
  manifest["checkpoints"] = kept;
  if (!r.checkpoints.empty()) manifest["final_checkpoint_sha1"] = sha1_hex(read_file(r.checkpoints.back()));
  write_json(dir / "manifest.json", manifest);
  run.manifest = std::move(manifest);
  return run;
}

std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& run_dir) {
  std::vector<std::filesystem::path> out;
  const auto dir = run_dir / "checkpoints";
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".symb") out.push_back(e.path());
  }
  // Names embed a zero-padded step, so name order is step order.
  std::sort(out.begin(), out.end());
  return out;
}

SymbiosisModel load_model(const RunConfig& cfg, const Checkpoint& ck) {
  if (!(ck.dims == cfg.model)) throw CheckpointError("checkpoint model dims differ from the config model section");
  auto model = build_symbiosis(cfg.model, cfg.symbiosis, 0);
  require_same_schema(model.params, ck.params);
  assign_parameters(model.params, ck.params);
  return model;
}

EvalRun run_eval(const RunConfig& cfg, const EvalRequest& request) {
  if (request.checkpoints.empty()) throw std::invalid_argument("eval: no checkpoints to evaluate");
  const Checkpoint ck = request.checkpoints.size() == 1 ? load_checkpoint(request.checkpoints.front())
                                                        : average_checkpoints(request.checkpoints);
  const SymbiosisModel model = load_model(cfg, ck);
  const Dataset data = generate(cfg.data);
  const auto& pairs = split_by_name(data, request.split);
  const ModelView& view = request.subnet ? model.snet : model.mnet;
  EvalOutput out = evaluate(view, pairs, cfg.beam, cfg.train.batch_token_budget);

  EvalRun run;
  run.report = out.report;
  for (const auto& h : out.hypotheses) run.hypotheses.push_back(data.vocab.detokenize(h));
  for (const auto& p : pairs) run.references.push_back(data.vocab.detokenize(p.tgt));
  return run;
}

json report_to_json(const EvalReport& r) {
  return json{{"bleu", r.bleu},        {"token_acc", r.token_acc}, {"greedy_acc", r.greedy_acc},
              {"n_sentences", r.n_sentences}, {"beam", r.beam},  {"lp", r.lp}};
}

bool CompareTable::complete() const {
  return std::all_of(rows.begin(), rows.end(), [](const CompareRow& r) { return r.delta.has_value(); });
}

std::string CompareTable::text() const {
  std::ostringstream os;
  os << std::left << std::setw(8) << "depth" << std::right << std::setw(12) << "classic" << std::setw(12)
     << "symbiosis" << std::setw(10) << "delta" << "\n";
  for (const auto& r : rows) {
    std::ostringstream depth;
    depth << r.main_depth << "-" << r.sub_depth;
    os << std::left << std::setw(8) << depth.str() << std::right << std::setw(12) << cell(r.classic_mean)
       << std::setw(12) << cell(r.symbiosis_mean) << std::setw(10) << cell(r.delta) << "\n";
  }
  os << "BLEU on the test split, mean over " << seeds.size() << " seed(s)\n";
  return os.str();
}

json CompareTable::to_json() const {
  json out = json::array();
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  for (const auto& r : rows) {
    json c = json::array(), s = json::array();
    for (const auto& v : r.classic_bleu) c.push_back(opt(v));
    for (const auto& v : r.symbiosis_bleu) s.push_back(opt(v));
    out.push_back({{"main_depth", r.main_depth},
                   {"sub_depth", r.sub_depth},
                   {"seeds", seeds},
                   {"classic_bleu", c},
                   {"symbiosis_bleu", s},
                   {"classic_mean", opt(r.classic_mean)},
                   {"symbiosis_mean", opt(r.symbiosis_mean)},
                   {"delta", opt(r.delta)}});
  }
  return out;
}

CompareTable run_compare(const SweepConfig& sweep, const std::filesystem::path& dir, std::ostream* log) {
  sweep.validate();
  CompareTable table;
  table.seeds = sweep.seeds;
  for (const auto& [m, o] : sweep.depths) {
    CompareRow row;
    row.main_depth = m;
    row.sub_depth = o;
    for (const TrainMode mode : {TrainMode::kClassic, TrainMode::kSymbiosis}) {
      auto& scores = mode == TrainMode::kClassic ? row.classic_bleu : row.symbiosis_bleu;
      for (const std::uint64_t seed : sweep.seeds) {
        RunConfig cfg = sweep.base;
        cfg.symbiosis.main_depth = m;
        cfg.symbiosis.sub_depth = o;
        cfg.train.mode = mode;
        cfg.train.seed = seed;
        const auto run_dir = dir / ("depth_" + std::to_string(m) + "_" + std::to_string(o)) /
                             (to_string(mode) + "_seed_" + std::to_string(seed));
        cfg.output_dir = run_dir.string();
        try {
          auto run = run_training(cfg, run_dir, nullptr);
          const auto report = run_eval(cfg, {{run.result.checkpoints.back()}, false, "test"}).report;
          scores.push_back(report.bleu);
          if (log) *log << m << "-" << o << " " << to_string(mode) << " seed " << seed << " bleu " << report.bleu << "\n";
        } catch (const std::exception& e) {
          scores.push_back(std::nullopt);
          if (log) *log << m << "-" << o << " " << to_string(mode) << " seed " << seed << " FAILED: " << e.what() << "\n";
        }
      }
    }
    bool c_ok = false, s_ok = false;
    const double c = mean_of(row.classic_bleu, c_ok), s = mean_of(row.symbiosis_bleu, s_ok);
    if (c_ok) row.classic_mean = c;
    if (s_ok) row.symbiosis_mean = s;
    if (c_ok && s_ok) row.delta = s - c;
    table.rows.push_back(std::move(row));
  }

  std::filesystem::create_directories(dir);
  std::ofstream(dir / "compare.txt") << table.text();
  std::ofstream records(dir / "compare.jsonl");
  for (const auto& rec : table.to_json()) records << rec.dump() << "\n";
  return table;
}

SharingReport run_verify(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
  return verify_sharing(load_model(cfg, load_checkpoint(checkpoint)));
}

}  // namespace symb
