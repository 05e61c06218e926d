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

#include "doctest.h"
#include "symbiosis/decode.hpp"
#include "symbiosis/training.hpp"
#include "test_util.hpp"

#include <cmath>
#include <fstream>

using namespace symb;
using namespace symb::testing;

namespace {

Dataset tiny_copy_data(std::int64_t pairs = 300) {
  SyntheticTaskSpec spec;
  spec.task = TaskKind::kCopy;
  spec.vocab_size = 10;
  spec.min_len = 2;
  spec.max_len = 5;
  spec.pairs = pairs;
  spec.valid_fraction = 0.1;
  spec.test_fraction = 0.1;
  return generate(spec);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.stage1_steps = 20;
  cfg.stage2_steps = 10;
  cfg.batch_token_budget = 64;
  cfg.schedule.warmup_steps = 10;
  cfg.schedule.lr_peak = 3e-3;
  return cfg;
}

Batch sample_batch() {
  return make_batch(std::vector<SentencePair>{make_task_pair(TaskKind::kReverse, {4, 5, 6}),
                                              make_task_pair(TaskKind::kReverse, {7, 8}),
                                              make_task_pair(TaskKind::kReverse, {9, 4, 4, 5})});
}

std::map<std::string, std::vector<double>> gradients(const ParameterStore& params, const std::function<Tensor()>& f) {
  ParameterStore p = params;
  p.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    backward(f());
  }
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : p) {
    out[name] = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                             : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0);
  }
  p.zero_grad();
  return out;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  Schedule s;
  CHECK(lr_at(s, 0) == 1e-7);
  CHECK(lr_at(s, 8000) == 5e-4);
  CHECK(lr_at(s, 32000) == doctest::Approx(2.5e-4).epsilon(1e-12));
  CHECK(std::abs(lr_at(s, 4 * s.warmup_steps) - lr_at(s, s.warmup_steps) / 2) <= 1e-12 * lr_at(s, s.warmup_steps));
  CHECK(lr_at(s, 4000) == doctest::Approx(1e-7 + (5e-4 - 1e-7) / 2).epsilon(1e-15));
  CHECK(lr_at(s, 8001) < 5e-4);
  CHECK(std::abs(lr_at(s, 8001) - 5e-4) < 1e-7);
  for (std::int64_t step = 1; step < 100000; step += 997) CHECK(lr_at(s, step) > 0.0);
  CHECK_THROWS_AS(lr_at(s, -1), std::invalid_argument);
}

TEST_CASE("margin loss examples") {
  auto one = [](double v) { return Tensor::from({1}, {v}); };
  CHECK(margin_loss(one(-1.0), one(-1.2), 0.1).item() == 0.0);
  CHECK(margin_loss(one(-1.0), one(-1.0), 0.1).item() == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(margin_loss(one(-2.0), one(-1.5), 0.1).item() == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(margin_hinge(-2.0, -1.5, 0.1) == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("margin loss matches the scalar hinge") {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    const double lm = -20.0 * rng.uniform();
    const double ls = -20.0 * rng.uniform();
    const double tau = 2.0 * rng.uniform();
    const double got = margin_loss(Tensor::from({1}, {lm}), Tensor::from({1}, {ls}), tau).item();
    REQUIRE(std::abs(got - margin_hinge(lm, ls, tau)) <= 1e-12);
  }
  // Batch value is the mean of per-sentence hinges and stays within bounds.
  std::vector<double> lm(64), ls(64);
  double want = 0.0, widest = 0.0;
  for (std::size_t i = 0; i < lm.size(); ++i) {
    lm[i] = -10.0 * rng.uniform();
    ls[i] = -10.0 * rng.uniform();
    want += margin_hinge(lm[i], ls[i], 0.1) / 64.0;
    widest = std::max(widest, std::abs(lm[i] - ls[i]));
  }
  const double got = margin_loss(Tensor::from({64}, lm), Tensor::from({64}, ls), 0.1).item();
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
  CHECK(got >= 0.0);
  CHECK(got <= 0.1 + widest);
}

TEST_CASE("margin loss gradient away from the kink") {
  PrecisionScope p64(Precision::kFloat64);
  Rng rng(5);
  std::vector<double> a(16), b(16);
  for (std::size_t i = 0; i < a.size(); ++i) {
    do {
      a[i] = -4.0 * rng.uniform();
      b[i] = -4.0 * rng.uniform();
    } while (std::abs((a[i] - b[i]) - 0.5) <= 1e-3);
  }
  Tensor lm = Tensor::from({16}, a, true), ls = Tensor::from({16}, b, true);
  auto report = grad_check([&] { return margin_loss(lm, ls, 0.5); }, {lm, ls}, 1e-6, 1e-4);
  CHECK(report.passed);
}

TEST_CASE("loss arithmetic") {
  CHECK(joint_loss(Tensor::scalar(1.0), Tensor::scalar(3.0)).item() == 2.0);
  PairTerms t{Tensor::scalar(1.0), Tensor::scalar(3.0), Tensor::from({1}, {-2.0}), Tensor::from({1}, {-1.5})};
  CHECK(sym_loss(t, 0.1, 1.0).item() == doctest::Approx(2.6).epsilon(1e-15));
  CHECK(sym_loss(t, 0.1, 0.0).item() == 2.0);
}

TEST_CASE("nll loss") {
  PrecisionScope p64(Precision::kFloat64);
  ModelDims dims = toy_dims(5);
  auto view = build_model(dims, 1, 1, 3);
  for (const char* n : {"out.w", "out.b"}) {
    auto t = view.mutable_parameters().at(n);
    for (auto& x : t.mutable_data()) x = 0.0;
  }
  Batch b = make_batch(std::vector<SentencePair>{{{4, 4}, {4, kEosId}}, {{4}, {kEosId}}});
  ForwardContext eval;
  CHECK(nll_loss(view, b, 0.0, eval).item() == doctest::Approx(std::log(5.0)).epsilon(1e-14));

  SUBCASE("invariant to pad extension") {
    auto model = build_model(toy_dims(), 2, 1, 4);
    Batch base = sample_batch();
    const double v0 = nll_loss(model, base, 0.1, eval).item();
    Batch wide = base;
    TokenMatrix tin(base.tgt_in.rows, base.tgt_in.cols + 2), tout(tin.rows, tin.cols);
    for (std::int64_t r = 0; r < tin.rows; ++r) {
      for (std::int64_t c = 0; c < base.tgt_in.cols; ++c) {
        tin.at(r, c) = base.tgt_in.at(r, c);
        tout.at(r, c) = base.tgt_out.at(r, c);
      }
    }
    wide.tgt_in = tin;
    wide.tgt_out = tout;
    CHECK(nll_loss(model, wide, 0.1, eval).item() == doctest::Approx(v0).epsilon(1e-12));
  }
  SUBCASE("empty batch") {
    Batch empty;
    CHECK_THROWS_AS(nll_loss(view, empty, 0.1, eval), ContractError);
  }
}

TEST_CASE("joint loss with identical views is the single-view loss") {
  PrecisionScope p64(Precision::kFloat64);
  auto model = build_symbiosis(toy_dims(), {2, 1, 1, LayerMapStrategy::kBottom}, 6);
  model.snet = model.mnet;
  ForwardContext eval;
  Batch b = sample_batch();
  CHECK(joint_loss(model, b, 0.1, eval).item() == nll_loss(model.mnet, b, 0.1, eval).item());
}

TEST_CASE("sym loss gradient equals joint loss gradient in the dead zone") {
  PrecisionScope p64(Precision::kFloat64);
  auto model = build_symbiosis(toy_dims(), {3, 1, 1, LayerMapStrategy::kBottom}, 8);
  ForwardContext eval;
  // Keep sentences the main network already prefers, then put tau below
  // every margin.
  Rng rng(1);
  std::vector<SentencePair> kept;
  double min_gap = 1e300;
  for (int i = 0; i < 400 && kept.size() < 6; ++i) {
    std::vector<int> src;
    for (int n = 0, len = static_cast<int>(rng.uniform_int(2, 5)); n < len; ++n) src.push_back(static_cast<int>(rng.uniform_int(4, 11)));
    Batch one = make_batch(std::vector<SentencePair>{make_task_pair(TaskKind::kReverse, src)});
    const double lm = model.mnet.log_prob_of_target(one.src, one.tgt_in, one.tgt_out, eval).item();
    const double ls = model.snet.log_prob_of_target(one.src, one.tgt_in, one.tgt_out, eval).item();
    if (lm - ls > 0.01) {
      kept.push_back(make_task_pair(TaskKind::kReverse, src));
      min_gap = std::min(min_gap, lm - ls);
    }
  }
  REQUIRE(kept.size() >= 2);
  Batch b = make_batch(kept);
  const double tau = 0.5 * min_gap;
  CHECK(margin_loss(model, b, tau, eval).item() == 0.0);
  auto gj = gradients(model.params, [&] { return joint_loss(model, b, 0.1, eval); });
  auto gs = gradients(model.params, [&] { return sym_loss(model, b, tau, 1.0, 0.1, eval); });
  for (const auto& [name, g] : gj) {
    INFO(name);
    REQUIRE(gs[name] == g);
  }
}

TEST_CASE("end-to-end gradient check of the symbiosis loss") {
  PrecisionScope p64(Precision::kFloat64);
  auto model = build_symbiosis(toy_dims(), {2, 1, 1, LayerMapStrategy::kTop}, 10);
  Batch b = make_batch(std::vector<SentencePair>{make_task_pair(TaskKind::kReverse, {4, 5, 6}),
                                                 make_task_pair(TaskKind::kReverse, {7, 8})});
  std::vector<Tensor> params;
  for (const auto& [_, t] : model.params) params.push_back(t);
  ForwardContext eval;
  // A large tau keeps every hinge active and away from the kink.
  auto terms = pair_terms(model, b, 0.1, eval);
  for (std::int64_t i = 0; i < 2; ++i) REQUIRE(std::abs(5.0 - (terms.logp_m[i] - terms.logp_s[i])) > 1e-3);
  auto report = grad_check([&] { return sym_loss(model, b, 5.0, 1.0, 0.1, eval); }, params, 1e-5, 1e-3);
  INFO(report.worst_tensor << " " << report.max_rel_error);
  CHECK(report.passed);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterStore p;
    p.add("w", Tensor::from({3}, {0.5, -1.0, 2.0}, true));
    Adam opt(p);
    p.at("w").mutable_grad();
    opt.step(1e-2);
    CHECK(p.at("w")[0] == 0.5);
    CHECK(p.at("w")[1] == -1.0);
    CHECK(p.at("w")[2] == 2.0);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    PrecisionScope p64(Precision::kFloat64);
    for (double g : {3.0, -0.25}) {
      ParameterStore p;
      p.add("w", Tensor::from({1}, {1.0}, true));
      Adam opt(p);
      p.at("w").mutable_grad()[0] = g;
      opt.step(1e-3);
      CHECK(p.at("w")[0] == doctest::Approx(1.0 - 1e-3 * g / (std::abs(g) + 1e-8)).epsilon(1e-15));
    }
  }
  SUBCASE("shared storage is updated once") {
    PrecisionScope p64(Precision::kFloat64);
    ParameterStore p;
    Tensor shared = Tensor::from({1}, {1.0}, true);
    p.add("a", shared);
    p.add("b", shared);
    p.add("c", Tensor::from({1}, {1.0}, true));
    Adam opt(p);
    CHECK(opt.slot_count() == 2);
    shared.mutable_grad()[0] = 1.0;
    p.at("c").mutable_grad()[0] = 1.0;
    opt.step(0.1);
    CHECK(opt.update_count("a") == 1);
    CHECK(opt.update_count("c") == 1);
    CHECK(shared[0] == p.at("c")[0]);
    CHECK(shared[0] == doctest::Approx(0.9).epsilon(1e-9));
  }
  SUBCASE("non-finite gradient aborts without updating") {
    ParameterStore p;
    p.add("good", Tensor::from({1}, {1.0}, true));
    p.add("bad", Tensor::from({1}, {1.0}, true));
    Adam opt(p);
    p.at("good").mutable_grad()[0] = 1.0;
    p.at("bad").mutable_grad()[0] = std::nan("");
    CHECK_THROWS_WITH_AS(opt.step(0.1), doctest::Contains("bad"), DivergenceError);
    CHECK(p.at("good")[0] == 1.0);
    CHECK(opt.step_count() == 0);
  }
  SUBCASE("state sidecar round trip") {
    auto store = init_parameters(toy_dims(), 1, 1, 2);
    Adam opt(store);
    for (auto& [name, t] : store) {
      Tensor h = t;
      auto g = h.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::sin(static_cast<double>(i));
    }
    opt.step(1e-3);
    auto bytes = opt.encode_state();
    Adam other(store);
    other.decode_state(bytes);
    CHECK(other.step_count() == 1);
    CHECK(other.encode_state() == bytes);
    bytes[0] = 'X';
    CHECK_THROWS_AS(other.decode_state(bytes), CheckpointError);
  }
}

TEST_CASE("each distinct storage changes once per training step") {
  auto model = build_symbiosis(toy_dims(), {4, 2, 2, LayerMapStrategy::kLinear}, 3);
  Adam opt(model.params);
  ForwardContext eval;
  for (int s = 0; s < 3; ++s) {
    {
      Tape tape;
      TapeScope scope(tape);
      backward(joint_loss(model, sample_batch(), 0.1, eval));
    }
    opt.step(1e-3);
    opt.zero_grad();
  }
  for (const auto& name : model.params.names()) CHECK(opt.update_count(name) == 3);
  CHECK(verify_sharing(model).passed);
}

TEST_CASE("sym_train") {
  const Dataset data = tiny_copy_data();
  ModelDims dims = toy_dims(10);
  dims.dropout = 0.1;
  const SymbiosisSpec spec{2, 1, 1, LayerMapStrategy::kBottom};

  SUBCASE("deterministic history") {
    auto a = sym_train(data, dims, spec, tiny_config());
    auto b = sym_train(data, dims, spec, tiny_config());
    REQUIRE(a.history.size() == 30);
    CHECK(a.history == b.history);
    CHECK(a.history[19].stage == 1);
    CHECK(a.history[20].stage == 2);
    CHECK(a.steps == 30);
    for (const auto& [name, t] : a.model.params) CHECK(max_abs_diff(t.data(), b.model.params.at(name).data()) == 0.0);
    CHECK(verify_sharing(a.model).passed);
  }
  SUBCASE("stage 2 changes only the objective") {
    TrainConfig only1 = tiny_config();
    only1.stage2_steps = 0;
    auto a = sym_train(data, dims, spec, only1);
    auto b = sym_train(data, dims, spec, tiny_config());
    REQUIRE(a.history.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) CHECK(a.history[i] == b.history[i]);
    REQUIRE(!a.evals.empty());
    REQUIRE(b.evals.size() >= 2);
    CHECK(a.evals.back().nll_m == b.evals.front().nll_m);
    CHECK(a.evals.back().token_acc_m == b.evals.front().token_acc_m);
    CHECK(b.evals.front().stage_end);
    CHECK(b.evals.back().stage == 2);
  }
  SUBCASE("joint stage 2 never pays the margin") {
    TrainConfig cfg = tiny_config();
    cfg.stage2_objective = Stage2Objective::kJoint;
    auto r = sym_train(data, dims, spec, cfg);
    for (const auto& rec : r.history) CHECK(rec.loss == doctest::Approx(0.5 * (rec.nll_m + *rec.nll_s)).epsilon(1e-12));
  }
  SUBCASE("classic mode trains the main network alone") {
    TrainConfig cfg = tiny_config();
    cfg.mode = TrainMode::kClassic;
    auto r = sym_train(data, dims, spec, cfg);
    CHECK(r.history.size() == 30);
    for (const auto& rec : r.history) {
      CHECK(rec.stage == 1);
      CHECK_FALSE(rec.nll_s.has_value());
      CHECK(rec.loss == rec.nll_m);
    }
    CHECK_FALSE(r.evals.back().token_acc_s.has_value());
  }
  SUBCASE("artifacts") {
    auto dir = std::filesystem::temp_directory_path() / "symb_train_artifacts";
    std::filesystem::remove_all(dir);
    TrainConfig cfg = tiny_config();
    cfg.stage1_steps = 60;
    cfg.stage2_steps = 20;
    cfg.keep_checkpoints = 2;
    auto r = sym_train(data, dims, spec, cfg, {dir, {}, {}});
    CHECK(r.epochs >= 2);
    REQUIRE(r.checkpoints.size() == 2);
    CHECK(r.checkpoints.back().filename() == checkpoint_file_name(80));
    std::size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "checkpoints")) {
      (void)e;
      ++files;
    }
    CHECK(files == 4);  // two checkpoints, two optimizer sidecars
    std::ifstream in(dir / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      for (const char* k : {"step", "stage", "lr", "nll_m", "nll_s", "margin_mean", "hinge_active_frac", "loss"}) {
        REQUIRE(j.contains(k));
      }
      ++lines;
    }
    CHECK(lines == 80);
    auto ck = load_checkpoint(r.checkpoints.back());
    for (const auto& [name, t] : r.model.params) CHECK(max_abs_diff(ck.params.at(name).data(), t.data()) == 0.0);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("divergence aborts and keeps the last checkpoint") {
    auto dir = std::filesystem::temp_directory_path() / "symb_train_diverge";
    std::filesystem::remove_all(dir);
    TrainConfig cfg = tiny_config();
    cfg.stage1_steps = 400;
    cfg.schedule.warmup_steps = 0;
    cfg.schedule.lr_peak = 1e300;
    CHECK_THROWS_AS(sym_train(data, dims, spec, cfg, {dir, {}, {}}), DivergenceError);
    CHECK(std::filesystem::exists(dir / "metrics.jsonl"));
    std::filesystem::remove_all(dir);
  }
  SUBCASE("invalid configuration") {
    TrainConfig cfg = tiny_config();
    cfg.tau = -1.0;
    CHECK_THROWS_WITH_AS(sym_train(data, dims, spec, cfg), doctest::Contains("train.tau"), std::invalid_argument);
  }
}

TEST_CASE("a small copy task is learned") {
  SyntheticTaskSpec ds;
  ds.task = TaskKind::kCopy;
  ds.vocab_size = 8;
  ds.min_len = 1;
  ds.max_len = 4;
  ds.pairs = 340;
  ds.valid_fraction = 0.1;
  ds.test_fraction = 0.0;
  const Dataset data = generate(ds);
  ModelDims dims;
  dims.d_model = 32;
  dims.n_heads = 4;
  dims.d_ffn = 64;
  dims.vocab_size = 8;
  dims.max_len = 8;
  dims.dropout = 0.0;
  TrainConfig cfg;
  cfg.stage1_steps = 500;
  cfg.stage2_steps = 100;
  cfg.batch_token_budget = 128;
  cfg.schedule.warmup_steps = 100;
  cfg.schedule.lr_peak = 3e-3;
  cfg.label_eps = 0.0;
  auto r = sym_train(data, dims, {2, 1, 1, LayerMapStrategy::kBottom}, cfg);
  const auto acc = token_accuracy(r.model.mnet, batch_by_length(data.valid, 128));
  CHECK(acc.value() == 1.0);
  CHECK(r.evals.back().token_acc_m == 1.0);
}

TEST_CASE("checkpoint averaging") {
  auto dims = toy_dims();
  auto make = [&](std::uint64_t seed) { return Checkpoint{dims, init_parameters(dims, 1, 1, seed)}; };
  SUBCASE("identical checkpoints") {
    auto c = make(1);
    auto avg = average_checkpoints(std::vector<Checkpoint>{c, c, c});
    CHECK(encode_checkpoint(avg.dims, avg.params) == encode_checkpoint(c.dims, c.params));
  }
  SUBCASE("two checkpoints") {
    PrecisionScope p64(Precision::kFloat64);
    auto a = make(1), b = make(2);
    auto avg = average_checkpoints(std::vector<Checkpoint>{a, b});
    for (const auto& [name, t] : avg.params) {
      for (std::int64_t i = 0; i < t.numel(); ++i) REQUIRE(t[i] == (a.params.at(name)[i] + b.params.at(name)[i]) / 2);
    }
  }
  SUBCASE("order does not matter") {
    auto a = make(1), b = make(2), c = make(3), d = make(4);
    auto x = average_checkpoints(std::vector<Checkpoint>{a, b, c, d});
    auto y = average_checkpoints(std::vector<Checkpoint>{d, b, a, c});
    CHECK(encode_checkpoint(x.dims, x.params) == encode_checkpoint(y.dims, y.params));
  }
  SUBCASE("schema mismatch") {
    Checkpoint deeper{dims, init_parameters(dims, 2, 1, 1)};
    CHECK_THROWS_WITH_AS(average_checkpoints(std::vector<Checkpoint>{make(1), deeper}),
                         doctest::Contains("enc.layer.1"), CheckpointError);
    CHECK_THROWS_AS(average_checkpoints(std::vector<Checkpoint>{}), std::invalid_argument);
  }
}
