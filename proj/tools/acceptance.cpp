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

// Acceptance checks 1-11. Prints one PASS/FAIL line per criterion, with
// details on the following indented lines. Exits nonzero if any fails.
//
//   symbiosis_acceptance [--only 1,2,...] [--workdir DIR] [--report FILE]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "symbiosis/checkpoint.hpp"
#include "symbiosis/gradsuite.hpp"
#include "symbiosis/run.hpp"

namespace {

using namespace symb;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::vector<std::string> details;

  template <typename... Args>
  void note(Args&&... args) {
    std::ostringstream os;
    os << std::setprecision(10);
    (os << ... << args);
    details.push_back(os.str());
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ModelDims small_dims(int vocab) {
  ModelDims d;
  d.d_model = 16;
  d.n_heads = 2;
  d.d_ffn = 32;
  d.vocab_size = vocab;
  d.max_len = 16;
  d.dropout = 0.0;
  return d;
}

TokenMatrix random_tokens(std::int64_t rows, std::int64_t cols, int vocab, Rng& rng) {
  TokenMatrix m(rows, cols);
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t len = rng.uniform_int(1, cols);
    for (std::int64_t c = 0; c < len; ++c) m.at(r, c) = static_cast<int>(rng.uniform_int(kNumReserved, vocab - 1));
  }
  return m;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::map<std::string, std::vector<double>> gradients_of(ParameterStore& params, const std::function<Tensor()>& f) {
  params.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    backward(f());
  }
  std::map<std::string, std::vector<double>> g;
  for (const auto& [name, t] : params) {
    g[name] = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                           : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0);
  }
  params.zero_grad();
  return g;
}

///////////////////////////////////////////
// 1-8, 11
///////////////////////////////////////////

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto prim = run_primitive_grad_suite();
  const auto model = run_model_grad_suite();
  const double secs = seconds_since(t0);
  double worst_prim = 0.0, worst_model = 0.0;
  for (const auto& e : prim.entries) worst_prim = std::max(worst_prim, e.report.max_rel_error);
  for (const auto& e : model.entries) worst_model = std::max(worst_model, e.report.max_rel_error);
  o.note(prim.entries.size(), " primitives, worst relative error ", worst_prim, " (tol 1e-4)");
  o.note(model.entries.size(), " end-to-end L_sym variants, worst relative error ", worst_model, " (tol 1e-3)");
  o.note("runtime ", secs, " s (limit 120 s)");
  for (const auto& e : prim.entries) {
    if (!e.report.passed) o.note("failed: ", e.name);
  }
  for (const auto& e : model.entries) {
    if (!e.report.passed) o.note("failed: ", e.name);
  }
  o.pass = prim.passed() && model.passed() && secs < 120.0;
  return o;
}

Outcome sharing_oracle() {
  Outcome o;
  ModelDims dims;  // 32-bit storage, default sizes
  dims.dropout = 0.1;
  const SymbiosisSpec spec{4, 2, 2, LayerMapStrategy::kBottom};
  auto model = build_symbiosis(dims, spec, 21);
  ForwardContext eval;

  auto oracle_diff = [&] {
    ParameterStore copy;
    for (const auto& [name, t] : model.snet.parameters()) copy.add(name, t.clone());
    const ModelView standalone = make_view(dims, copy, {0, 1}, spec.decoder_depth);
    Rng rng(77);
    double worst = 0.0;
    for (int b = 0; b < 16; ++b) {
      const auto src = random_tokens(4, 12, dims.vocab_size, rng);
      const auto tgt = random_tokens(4, 10, dims.vocab_size, rng);
      worst = std::max(worst, max_abs_diff(model.snet.forward(src, tgt, eval).data(),
                                           standalone.forward(src, tgt, eval).data()));
    }
    return worst;
  };

  const auto before = verify_sharing(model);
  const double diff_before = oracle_diff();

  SyntheticTaskSpec ds;
  ds.pairs = 2000;
  const Dataset data = generate(ds);
  const auto batches = batch_by_length(data.train, 512);
  Adam opt(model.params);
  Rng drop(5);
  for (int step = 0; step < 100; ++step) {
    ForwardContext train_ctx{true, &drop};
    {
      Tape tape;
      TapeScope scope(tape);
      backward(joint_loss(model, batches[static_cast<std::size_t>(step) % batches.size()], 0.1, train_ctx));
    }
    opt.step(1e-3);
    opt.zero_grad();
  }
  const auto after = verify_sharing(model);
  const double diff_after = oracle_diff();
  std::int64_t max_updates = 0, min_updates = 1 << 30;
  for (const auto& name : model.params.names()) {
    max_updates = std::max(max_updates, opt.update_count(name));
    min_updates = std::min(min_updates, opt.update_count(name));
  }
  o.note("S-Net vs standalone 2-layer copy, 16 batches: max abs diff ", diff_before, " before, ", diff_after,
         " after training (limit 1e-6)");
  o.note("verify_sharing before: ", before.summary());
  o.note("verify_sharing after 100 Adam steps: ", after.summary());
  o.note("updates per storage: min ", min_updates, " max ", max_updates);
  o.pass = before.passed && after.passed && diff_before < 1e-6 && diff_after < 1e-6 && min_updates == 100 &&
           max_updates == 100;
  return o;
}

Outcome joint_decomposition() {
  Outcome o;
  PrecisionScope p64(Precision::kFloat64);
  ModelDims dims = small_dims(20);
  bool ok = true;
  std::size_t shared = 0, individual = 0;
  double worst = 0.0;
  for (const auto strategy :
       {LayerMapStrategy::kBottom, LayerMapStrategy::kTop, LayerMapStrategy::kTopBottom, LayerMapStrategy::kLinear}) {
    auto model = build_symbiosis(dims, {4, 2, 2, strategy}, 3);
    SyntheticTaskSpec ds;
    ds.vocab_size = 20;
    ds.max_len = 8;
    ds.pairs = 64;
    const Batch batch = make_batch(generate(ds).train);
    ForwardContext eval;
    const auto gj = gradients_of(model.params, [&] { return joint_loss(model, batch, 0.1, eval); });
    const auto gm = gradients_of(model.params, [&] { return nll_loss(model.mnet, batch, 0.1, eval); });
    const auto gs = gradients_of(model.params, [&] { return nll_loss(model.snet, batch, 0.1, eval); });
    for (const auto& [name, joint] : gj) {
      const bool indiv = model.is_individual_parameter(name);
      (indiv ? individual : shared) += 1;
      if (indiv) {
        for (double x : gs.at(name)) ok &= x == 0.0;
      }
      for (std::size_t i = 0; i < joint.size(); ++i) {
        const double want = 0.5 * (gm.at(name)[i] + gs.at(name)[i]);
        const double rel = std::abs(joint[i] - want) / std::max(std::abs(want), 1e-12);
        if (std::abs(joint[i] - want) > 1e-15) worst = std::max(worst, rel);
      }
    }
  }
  o.note(shared, " shared and ", individual, " M-only parameter tensors over four layer maps");
  o.note("worst relative error of joint grad vs (M + S)/2: ", worst, " (limit 1e-6)");
  o.note("S-path gradient on M-only parameters exactly zero: ", ok ? "yes" : "no");
  o.pass = ok && worst <= 1e-6 && individual > 0;
  return o;
}

Outcome layer_map_table() {
  Outcome o;
  const std::map<LayerMapStrategy, LayerMap> want{
      {LayerMapStrategy::kBottom, {0, 1, 2, 3, 4, 5}},
      {LayerMapStrategy::kTop, {6, 7, 8, 9, 10, 11}},
      {LayerMapStrategy::kTopBottom, {0, 1, 2, 9, 10, 11}},
      {LayerMapStrategy::kLinear, {0, 2, 4, 6, 8, 10}},
  };
  bool ok = true;
  for (const auto& [s, map] : want) {
    const auto got = build_layer_map(s, 12, 6);
    std::ostringstream os;
    for (int x : got) os << x << " ";
    o.note(to_string(s), " (12, 6): ", os.str());
    ok &= got == map;
  }
  std::int64_t checked = 0;
  for (const auto& [s, _] : want) {
    for (int m = 2; m <= 32; ++m) {
      for (int k = 1; k < m; ++k) {
        const auto map = build_layer_map(s, m, k);
        bool good = map.size() == static_cast<std::size_t>(k);
        for (int i = 0; good && i < k; ++i) {
          good = map[i] >= 0 && map[i] < m && (i == 0 || map[i] > map[i - 1]);
        }
        ok &= good;
        ++checked;
      }
    }
  }
  o.note(checked, " (strategy, m, o) grid points checked for strict increase and range");
  o.pass = ok;
  return o;
}

Outcome hinge_semantics() {
  Outcome o;
  PrecisionScope p64(Precision::kFloat64);
  Rng rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double lm = -30.0 * rng.uniform(), ls = -30.0 * rng.uniform(), tau = 3.0 * rng.uniform();
    const double closed = std::max(0.0, tau - (lm - ls));
    worst = std::max(worst, std::abs(margin_loss(Tensor::from({1}, {lm}), Tensor::from({1}, {ls}), tau).item() - closed));
  }
  o.note("1000 random triples: worst |margin_loss - closed form| ", worst, " (limit 1e-12)");

  // Dead zone: sentences the M-Net already prefers, tau below every margin.
  auto model = build_symbiosis(small_dims(12), {3, 1, 1, LayerMapStrategy::kBottom}, 8);
  ForwardContext eval;
  std::vector<SentencePair> kept;
  double min_gap = INFINITY;
  for (int i = 0; i < 2000 && kept.size() < 8; ++i) {
    std::vector<int> src;
    for (int n = 0, len = static_cast<int>(rng.uniform_int(2, 6)); n < len; ++n) {
      src.push_back(static_cast<int>(rng.uniform_int(kNumReserved, 11)));
    }
    const auto pair = make_task_pair(TaskKind::kReverse, src);
    const Batch one = make_batch(std::vector<SentencePair>{pair});
    const double gap = model.mnet.log_prob_of_target(one.src, one.tgt_in, one.tgt_out, eval).item() -
                       model.snet.log_prob_of_target(one.src, one.tgt_in, one.tgt_out, eval).item();
    if (gap > 0.01) {
      kept.push_back(pair);
      min_gap = std::min(min_gap, gap);
    }
  }
  bool equal = kept.size() >= 2;
  if (equal) {
    const Batch batch = make_batch(kept);
    const double tau = 0.5 * min_gap;
    const auto gj = gradients_of(model.params, [&] { return joint_loss(model, batch, 0.1, eval); });
    const auto gs = gradients_of(model.params, [&] { return sym_loss(model, batch, tau, 1.0, 0.1, eval); });
    equal = gj == gs && margin_loss(model, batch, tau, eval).item() == 0.0;
    o.note("dead zone: ", kept.size(), " sentences, min margin ", min_gap, ", tau ", tau,
           ", grad L_sym == grad L_joint: ", equal ? "yes" : "no");
  } else {
    o.note("dead zone: could not find sentences with a positive margin");
  }
  o.pass = worst <= 1e-12 && equal;
  return o;
}

Outcome schedule() {
  Outcome o;
  const Schedule s;
  const double w = lr_at(s, s.warmup_steps), w4 = lr_at(s, 4 * s.warmup_steps);
  o.note("lr_at(0) = ", lr_at(s, 0), ", lr_at(", s.warmup_steps, ") = ", w, ", lr_at(", 4 * s.warmup_steps,
         ") = ", w4);
  o.pass = lr_at(s, 0) == 1e-7 && w == 5e-4 && std::abs(w4 - w / 2) <= 1e-12;
  return o;
}

// Best finished sequence up to max_len over all non-banned tokens, scored by
// teacher forcing, ties as in beam_search.
Hypothesis exhaustive_best(const ModelView& view, const std::vector<int>& src, int max_len, double alpha) {
  std::vector<int> alphabet;
  for (int t = 0; t < view.dims().vocab_size; ++t) {
    if (t != kPadId && t != kBosId) alphabet.push_back(t);
  }
  std::vector<std::vector<int>> finished, frontier{{}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& p : frontier) {
      for (int t : alphabet) {
        auto seq = p;
        seq.push_back(t);
        (t == kEosId ? finished : next).push_back(std::move(seq));
      }
    }
    frontier = std::move(next);
  }
  // One teacher-forced batch per length.
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < finished.size(); ++i) by_len[finished[i].size()].push_back(i);
  std::vector<double> logp(finished.size());
  ForwardContext eval;
  for (const auto& [len, idx] : by_len) {
    std::vector<std::vector<int>> srcs, tin, tout;
    for (std::size_t i : idx) {
      srcs.push_back(src);
      std::vector<int> in{kBosId};
      in.insert(in.end(), finished[i].begin(), finished[i].end() - 1);
      tin.push_back(in);
      tout.push_back(finished[i]);
    }
    const auto lp = view.log_prob_of_target(source_matrix(srcs), TokenMatrix::from_rows(tin),
                                            TokenMatrix::from_rows(tout), eval);
    for (std::size_t k = 0; k < idx.size(); ++k) logp[idx[k]] = lp[static_cast<std::int64_t>(k)];
  }
  Hypothesis best;
  bool have = false;
  for (std::size_t i = 0; i < finished.size(); ++i) {
    const double score = logp[i] / length_penalty(static_cast<std::int64_t>(finished[i].size()), alpha);
    const bool better = !have || score > best.score ||
                        (score == best.score && (finished[i] < best.tokens ||
                                                 (finished[i] == best.tokens && finished[i].size() < best.tokens.size())));
    if (better) {
      best = {finished[i], logp[i], true, score};
      have = true;
    }
  }
  return best;
}

Outcome beam_vs_exhaustive() {
  Outcome o;
  // Train a V=6 copy model briefly so the distribution is peaked, not uniform.
  SyntheticTaskSpec ds;
  ds.task = TaskKind::kCopy;
  ds.vocab_size = 6;
  ds.min_len = 1;
  ds.max_len = 5;
  ds.pairs = 62;  // every source over the two payload symbols
  ds.valid_fraction = 0.0;
  ds.test_fraction = 0.0;
  const Dataset data = generate(ds);
  ModelDims dims = small_dims(6);
  TrainConfig cfg;
  cfg.stage1_steps = 150;
  cfg.stage2_steps = 50;
  cfg.batch_token_budget = 64;
  cfg.schedule.warmup_steps = 50;
  cfg.schedule.lr_peak = 3e-3;
  const auto trained = sym_train(data, dims, {2, 1, 1, LayerMapStrategy::kBottom}, cfg);
  const ModelView& view = trained.model.mnet;

  const int max_len = 4;
  const int beam = 6 * 6 * 6 * 6;
  int agree = 0, total = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& src = data.train[i].src;
    const auto want = exhaustive_best(view, src, max_len, 0.6);
    const auto got = beam_search(view, src, {beam, 0.6, max_len});
    const bool same = got.tokens == want.tokens && std::abs(got.score - want.score) <= 1e-9 * std::abs(want.score);
    agree += same;
    ++total;
    if (!same && o.details.size() < 4) o.note("disagreement on input ", i);
  }
  o.note("trained V=6 model, max_decode_len 4, beam ", beam, ": ", agree, "/", total, " inputs agree");
  o.pass = agree == total && total == 50;
  return o;
}

Outcome bleu_values() {
  Outcome o;
  auto words = [](const std::string& s) {
    std::istringstream is(s);
    TokenSeq t;
    for (std::string w; is >> w;) t.push_back(w);
    return t;
  };
  const std::vector<TokenSeq> refs{words("the cat sat on the mat"), words("there is a cat on the mat")};
  const double perfect = bleu(refs, refs);
  const double brevity = bleu(std::vector<TokenSeq>{words("a b c d")}, std::vector<TokenSeq>{words("a b c d e")});
  const double empty = bleu(std::vector<TokenSeq>{{}, {}}, refs);
  o.note("perfect ", perfect, ", brevity example ", brevity, ", empty ", empty);
  o.pass = perfect == 100.0 && std::abs(brevity - 77.88) <= 0.01 && empty == 0.0;
  return o;
}

RunConfig tiny_run_config(const fs::path& dir) {
  RunConfig c;
  c.model = small_dims(10);
  c.model.max_len = 8;
  c.model.dropout = 0.1;
  c.symbiosis = {2, 1, 1, LayerMapStrategy::kBottom};
  c.train.stage1_steps = 60;
  c.train.stage2_steps = 20;
  c.train.batch_token_budget = 64;
  c.train.schedule.warmup_steps = 20;
  c.train.schedule.lr_peak = 3e-3;
  c.data.task = TaskKind::kReverse;
  c.data.vocab_size = 10;
  c.data.min_len = 2;
  c.data.max_len = 5;
  c.data.pairs = 300;
  c.output_dir = dir.string();
  return c;
}

Outcome determinism(const fs::path& workdir) {
  Outcome o;
  const fs::path a = workdir / "determinism_a", b = workdir / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const RunConfig cfg = tiny_run_config(a);
  const auto ra = run_training(cfg, a);
  const auto rb = run_training(cfg, b);
  const auto bytes_a = read_file(ra.result.checkpoints.back());
  const auto bytes_b = read_file(rb.result.checkpoints.back());
  const bool same_final = bytes_a == bytes_b;
  o.note("two runs, final checkpoint sha1 ", sha1_hex(bytes_a), " vs ", sha1_hex(bytes_b));

  const Checkpoint ck = load_checkpoint(ra.result.checkpoints.back());
  const bool reencode = encode_checkpoint(ck.dims, ck.params) == bytes_a;
  const fs::path copy = workdir / "roundtrip.symb";
  save_checkpoint(copy, ck.dims, ck.params);
  const bool resave = read_file(copy) == bytes_a;
  bool values = true;
  for (const auto& [name, t] : ra.result.model.params) values &= max_abs_diff(t.data(), ck.params.at(name).data()) == 0.0;
  o.note("round trip: re-encode ", reencode ? "identical" : "DIFFERENT", ", save/load ",
         resave ? "identical" : "DIFFERENT", ", parameter values ", values ? "identical" : "DIFFERENT");
  fs::remove(copy);
  fs::remove_all(a);
  fs::remove_all(b);
  o.pass = same_final && reencode && resave && values;
  return o;
}

///////////////////////////////////////////
// 9, 10
///////////////////////////////////////////

// M-Net 4-2 with S-Net 2-2 on lexmap, V=64, lengths 4-16, 10k pairs,
// 5000 + 1000 steps.
RunConfig lexmap_config(TrainMode mode, std::uint64_t seed, const fs::path& dir) {
  RunConfig c;
  c.model.d_model = 64;
  c.model.n_heads = 4;
  c.model.d_ffn = 256;
  c.model.vocab_size = 64;
  c.model.max_len = 64;
  c.model.dropout = 0.0;
  c.symbiosis = {4, 2, 2, LayerMapStrategy::kBottom};
  c.train.mode = mode;
  c.train.stage1_steps = 5000;
  c.train.stage2_steps = 1000;
  c.train.batch_token_budget = 512;
  c.train.schedule.warmup_steps = 500;
  c.train.schedule.lr_peak = 2e-3;
  c.train.seed = seed;
  c.data.task = TaskKind::kLexmap;
  c.data.vocab_size = 64;
  c.data.min_len = 4;
  c.data.max_len = 16;
  c.data.pairs = 10000;
  c.output_dir = dir.string();
  return c;
}

struct LexmapRun {
  double greedy_acc = 0.0;
  double seconds = 0.0;
  std::optional<EvalSnapshot> stage1_end, stage2_end;
  std::string error;
};

LexmapRun lexmap_run(TrainMode mode, std::uint64_t seed, const fs::path& workdir) {
  LexmapRun out;
  const fs::path dir = workdir / (to_string(mode) + "_seed_" + std::to_string(seed));
  fs::remove_all(dir);
  const RunConfig cfg = lexmap_config(mode, seed, dir);
  const auto t0 = Clock::now();
  try {
    const auto run = run_training(cfg, dir);
    const Dataset data = generate(cfg.data);
    out.greedy_acc = greedy_token_accuracy(run.result.model.mnet, data.test, cfg.beam.max_decode_len).value();
    for (const auto& e : run.result.evals) {
      if (!e.stage_end) continue;
      (e.stage == 1 ? out.stage1_end : out.stage2_end) = e;
    }
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.seconds = seconds_since(t0);
  std::cerr << "  [" << to_string(mode) << " seed " << seed << "] " << out.seconds << " s, greedy acc "
            << out.greedy_acc << (out.error.empty() ? "" : " error: " + out.error) << "\n";
  fs::remove_all(dir);
  return out;
}

void report(int id, const std::string& title, const Outcome& o, nlohmann::json& json_report) {
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << "\n";
  for (const auto& d : o.details) std::cout << "    " << d << "\n";
  std::cout << std::flush;
  json_report.push_back({{"criterion", id}, {"title", title}, {"pass", o.pass}, {"details", o.details}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string workdir = (fs::temp_directory_path() / "symbiosis_acceptance").string();
  std::string report_path;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--workdir", workdir, "Scratch directory for training runs");
  app.add_option("--report", report_path, "Also write a JSON report here");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  fs::create_directories(workdir);

  nlohmann::json json_report = nlohmann::json::array();
  bool all = true;
  auto run = [&](int id, const std::string& title, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note("exception: ", e.what());
    }
    all &= o.pass;
    report(id, title, o, json_report);
  };

  run(1, "gradient suite", gradient_suite);
  run(2, "sharing oracle", sharing_oracle);
  run(3, "joint-loss gradient decomposition", joint_decomposition);
  run(4, "layer-map table", layer_map_table);
  run(5, "hinge semantics", hinge_semantics);
  run(6, "schedule", schedule);
  run(7, "beam search vs exhaustive search", beam_vs_exhaustive);
  run(8, "BLEU unit values", bleu_values);

  // 9 and 10 share the seed-1 symbiosis run.
  std::optional<LexmapRun> sym1;
  run(9, "desk-scale convergence on lexmap", [&] {
    Outcome o;
    const auto classic = lexmap_run(TrainMode::kClassic, 1, workdir);
    sym1 = lexmap_run(TrainMode::kSymbiosis, 1, workdir);
    const double total = classic.seconds + sym1->seconds;
    o.note("classic: greedy token accuracy ", classic.greedy_acc, " on held-out test, ", classic.seconds, " s",
           classic.error.empty() ? "" : ", error: " + classic.error);
    o.note("symbiosis: greedy token accuracy ", sym1->greedy_acc, " on held-out test, ", sym1->seconds, " s",
           sym1->error.empty() ? "" : ", error: " + sym1->error);
    o.note("total runtime ", total / 60.0, " min (limit 30 min)");
    o.pass = classic.error.empty() && sym1->error.empty() && classic.greedy_acc >= 0.99 && sym1->greedy_acc >= 0.99 &&
             total < 30.0 * 60.0;
    return o;
  });
  run(10, "directional margin property", [&] {
    Outcome o;
    std::vector<LexmapRun> runs;
    runs.push_back(sym1 ? *sym1 : lexmap_run(TrainMode::kSymbiosis, 1, workdir));
    for (std::uint64_t seed : {2, 3}) runs.push_back(lexmap_run(TrainMode::kSymbiosis, seed, workdir));
    double m1 = 0.0, m2 = 0.0, h1 = 0.0, h2 = 0.0;
    bool complete = true;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& r = runs[i];
      if (!r.stage1_end || !r.stage2_end || !r.stage1_end->margin_mean || !r.stage2_end->margin_mean) {
        complete = false;
        o.note("seed ", i + 1, ": missing stage-end snapshots", r.error.empty() ? "" : ", error: " + r.error);
        continue;
      }
      o.note("seed ", i + 1, ": margin ", *r.stage1_end->margin_mean, " -> ", *r.stage2_end->margin_mean,
             ", hinge-active fraction ", *r.stage1_end->hinge_active_frac, " -> ", *r.stage2_end->hinge_active_frac);
      m1 += *r.stage1_end->margin_mean / 3.0;
      m2 += *r.stage2_end->margin_mean / 3.0;
      h1 += *r.stage1_end->hinge_active_frac / 3.0;
      h2 += *r.stage2_end->hinge_active_frac / 3.0;
    }
    o.note("mean over 3 seeds: margin ", m1, " -> ", m2, ", hinge-active fraction ", h1, " -> ", h2);
    o.pass = complete && m2 >= m1 && h2 < h1;
    return o;
  });
  run(11, "determinism and checkpoint round trip", [&] { return determinism(workdir); });

  if (!report_path.empty()) std::ofstream(report_path) << json_report.dump(2) << "\n";
  return all ? 0 : 1;
}
