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

// symbiosis: train, evaluate and compare symbiosis networks.
//
// Exit status: 0 success, 1 a run or check failed, 2 bad usage or config.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "symbiosis/checkpoint.hpp"
#include "symbiosis/gradsuite.hpp"
#include "symbiosis/run.hpp"

namespace {

using namespace symb;

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

TokenSeq split_words(const std::string& line) {
  std::istringstream is(line);
  TokenSeq out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

// Config from --config, else from the run directory's copy.
RunConfig resolve_config(const std::string& config, const std::string& run_dir) {
  if (!config.empty()) return load_config(config);
  if (!run_dir.empty()) return load_config(std::filesystem::path(run_dir) / "config.json");
  throw ConfigError("config: pass --config or --run");
}

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.validate();
  const auto dir = resolve_output_dir(cfg);
  if (a.dry_run) {
    std::cout << config_to_json(cfg).dump(2) << "\n";
    std::cout << "output_dir " << dir.string() << "\n";
    std::cout << describe_layer_map(cfg.symbiosis);
    return kOk;
  }
  std::cout << describe_layer_map(cfg.symbiosis);
  try {
    auto run = run_training(cfg, dir, &std::cout);
    std::cout << "final " << run.manifest["final_metrics"].dump() << "\n";
    std::cout << "run directory " << run.dir.string() << "\n";
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    std::cerr << "artifacts kept in " << dir.string() << "\n";
    return kFailed;
  }
  return kOk;
}

struct EvalArgs {
  std::string config, run_dir, checkpoint, split = "test", hyp_out;
  int avg_last = 1;
  bool subnet = false;
};

int cmd_eval(const EvalArgs& a) {
  const RunConfig cfg = resolve_config(a.config, a.run_dir);
  EvalRequest req;
  req.subnet = a.subnet;
  req.split = a.split;
  if (!a.checkpoint.empty()) {
    req.checkpoints.push_back(a.checkpoint);
  } else {
    const auto dir = a.run_dir.empty() ? resolve_output_dir(cfg) : std::filesystem::path(a.run_dir);
    const auto all = list_checkpoints(dir);
    if (all.empty()) throw std::runtime_error("no checkpoints under " + (dir / "checkpoints").string());
    if (a.avg_last < 1) throw ConfigError("--avg-last: must be >= 1");
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(a.avg_last), all.size());
    req.checkpoints.assign(all.end() - static_cast<std::ptrdiff_t>(k), all.end());
  }
  const auto run = run_eval(cfg, req);
  if (!a.hyp_out.empty()) {
    std::ofstream out(a.hyp_out);
    for (const auto& h : run.hypotheses) out << h << "\n";
  }
  nlohmann::json j = report_to_json(run.report);
  j["network"] = a.subnet ? "S-Net" : "M-Net";
  j["split"] = a.split;
  j["checkpoints"] = nlohmann::json::array();
  for (const auto& p : req.checkpoints) j["checkpoints"].push_back(p.filename().string());
  std::cout << j.dump() << "\n";
  return kOk;
}

int cmd_compare(const std::string& config, bool dry_run) {
  SweepConfig sweep = load_sweep(config);
  const auto dir = resolve_output_dir(sweep.base);
  if (dry_run) {
    std::cout << sweep_to_json(sweep).dump(2) << "\n";
    std::cout << "output_dir " << dir.string() << "\n";
    std::cout << "runs " << sweep.depths.size() * sweep.seeds.size() * 2 << "\n";
    return kOk;
  }
  const auto table = run_compare(sweep, dir, &std::cerr);
  std::cout << table.text();
  if (!table.complete()) {
    std::cerr << "some runs failed; see " << (dir / "compare.jsonl").string() << "\n";
    return kFailed;
  }
  return kOk;
}

int cmd_gradcheck() {
  const auto prim = run_primitive_grad_suite();
  const auto model = run_model_grad_suite();
  std::cout << prim.summary() << model.summary();
  const bool ok = prim.passed() && model.passed();
  std::cout << (ok ? "gradient suite passed" : "gradient suite FAILED") << "\n";
  return ok ? kOk : kFailed;
}

int cmd_verify(const std::string& config, const std::string& run_dir, std::string checkpoint) {
  const RunConfig cfg = resolve_config(config, run_dir);
  if (checkpoint.empty()) {
    const auto all = list_checkpoints(run_dir.empty() ? resolve_output_dir(cfg) : std::filesystem::path(run_dir));
    if (all.empty()) throw std::runtime_error("no checkpoint to verify");
    checkpoint = all.back().string();
  }
  const auto report = run_verify(cfg, checkpoint);
  std::cout << describe_layer_map(cfg.symbiosis) << report.summary() << "\n";
  return report.passed ? kOk : kFailed;
}

int cmd_bleu(const std::string& hyp, const std::string& ref) {
  std::vector<TokenSeq> h, r;
  for (const auto& line : read_lines(hyp)) h.push_back(split_words(line));
  for (const auto& line : read_lines(ref)) r.push_back(split_words(line));
  std::cout << bleu(h, r) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train, evaluate and compare symbiosis networks"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", train_args.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", train_args.seed, "Override train.seed");
  train->add_flag("--dry-run", train_args.dry_run, "Validate the config and print the layer map");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Beam-search BLEU and token accuracy of a trained model");
  eval->add_option("--config", eval_args.config, "Run config (default: the run directory's config.json)");
  eval->add_option("--run", eval_args.run_dir, "Run directory (default: the config's output_dir)");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Evaluate this checkpoint file");
  eval->add_option("--avg-last", eval_args.avg_last, "Average the last K checkpoints of the run");
  eval->add_flag("--subnet", eval_args.subnet, "Evaluate the S-Net instead of the M-Net");
  eval->add_option("--split", eval_args.split, "train, valid or test");
  eval->add_option("--hyp-out", eval_args.hyp_out, "Write decoded sentences here, one per line");

  std::string compare_config;
  bool compare_dry_run = false;
  auto* compare = app.add_subcommand("compare", "Classic vs symbiosis sweep over encoder depths");
  compare->add_option("--config", compare_config, "Sweep config (JSON)")->required()->check(CLI::ExistingFile);
  compare->add_flag("--dry-run", compare_dry_run, "Validate the sweep and list the grid");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");

  std::string verify_config, verify_run, verify_ckpt;
  auto* verify = app.add_subcommand("verify", "Check parameter sharing of a checkpoint");
  verify->add_option("--config", verify_config, "Run config");
  verify->add_option("--run", verify_run, "Run directory");
  verify->add_option("--checkpoint", verify_ckpt, "Checkpoint file (default: the run's latest)");

  std::string hyp_file, ref_file;
  auto* bleu_cmd = app.add_subcommand("bleu", "Corpus BLEU of whitespace-tokenized files");
  bleu_cmd->add_option("hyp", hyp_file, "Hypotheses, one per line")->required()->check(CLI::ExistingFile);
  bleu_cmd->add_option("ref", ref_file, "References, one per line")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_eval(eval_args);
    if (*compare) return cmd_compare(compare_config, compare_dry_run);
    if (*gradcheck) return cmd_gradcheck();
    if (*verify) return cmd_verify(verify_config, verify_run, verify_ckpt);
    if (*bleu_cmd) return cmd_bleu(hyp_file, ref_file);
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
