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

#include "symbiosis/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace symb {

///////////////////////////////////////////
// Losses
///////////////////////////////////////////

Tensor nll_loss(const ModelView& view, const Batch& batch, double label_eps, ForwardContext& ctx) {
  if (batch.size() == 0) throw ContractError("nll_loss: empty batch");
  return label_smoothed_ce(view.forward(batch.src, batch.tgt_in, ctx), batch.tgt_out.ids, label_eps, kPadId);
}

PairTerms pair_terms(const SymbiosisModel& model, const Batch& batch, double label_eps, ForwardContext& ctx) {
  if (batch.size() == 0) throw ContractError("pair_terms: empty batch");
  PairTerms terms;
  const Tensor logits_m = model.mnet.forward(batch.src, batch.tgt_in, ctx);
  terms.nll_m = label_smoothed_ce(logits_m, batch.tgt_out.ids, label_eps, kPadId);
  terms.logp_m = sequence_log_prob(logits_m, batch.tgt_out);
  const Tensor logits_s = model.snet.forward(batch.src, batch.tgt_in, ctx);
  terms.nll_s = label_smoothed_ce(logits_s, batch.tgt_out.ids, label_eps, kPadId);
  terms.logp_s = sequence_log_prob(logits_s, batch.tgt_out);
  return terms;
}

Tensor joint_loss(const Tensor& nll_m, const Tensor& nll_s) { return scale(add(nll_m, nll_s), 0.5); }

Tensor margin_loss(const Tensor& logp_m, const Tensor& logp_s, double tau) {
  if (tau < 0.0) throw std::invalid_argument("margin_loss: tau must be >= 0");
  const Tensor gap = add(logp_m, -logp_s);
  return mean(relu(add(Tensor::full(gap.shape(), tau), -gap)));
}

Tensor sym_loss(const PairTerms& terms, double tau, double alpha) {
  return add(joint_loss(terms.nll_m, terms.nll_s), scale(margin_loss(terms.logp_m, terms.logp_s, tau), alpha));
}

Tensor joint_loss(const SymbiosisModel& model, const Batch& batch, double label_eps, ForwardContext& ctx) {
  const PairTerms t = pair_terms(model, batch, label_eps, ctx);
  return joint_loss(t.nll_m, t.nll_s);
}

Tensor margin_loss(const SymbiosisModel& model, const Batch& batch, double tau, ForwardContext& ctx) {
  const Tensor lm = model.mnet.log_prob_of_target(batch.src, batch.tgt_in, batch.tgt_out, ctx);
  const Tensor ls = model.snet.log_prob_of_target(batch.src, batch.tgt_in, batch.tgt_out, ctx);
  return margin_loss(lm, ls, tau);
}

Tensor sym_loss(const SymbiosisModel& model, const Batch& batch, double tau, double alpha, double label_eps,
                ForwardContext& ctx) {
  return sym_loss(pair_terms(model, batch, label_eps, ctx), tau, alpha);
}

double margin_hinge(double logp_m, double logp_s, double tau) { return std::max(0.0, tau - (logp_m - logp_s)); }

///////////////////////////////////////////
// Optimization
///////////////////////////////////////////

double lr_at(const Schedule& s, std::int64_t step) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (s.warmup_steps > 0 && step <= s.warmup_steps) {
    return s.lr_floor + (s.lr_peak - s.lr_floor) * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  if (s.warmup_steps == 0) return step == 0 ? s.lr_peak : s.lr_peak / std::sqrt(static_cast<double>(step));
  return s.lr_peak * std::sqrt(static_cast<double>(s.warmup_steps) / static_cast<double>(step));
}

Adam::Adam(const ParameterStore& params, AdamConfig cfg) : cfg_(cfg) {
  std::set<const void*> seen;
  for (const auto& [name, t] : params) {
    if (!seen.insert(t.storage_id()).second) continue;
    const auto n = static_cast<std::size_t>(t.numel());
    slots_.push_back({name, t, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0});
  }
}

void Adam::step(double lr) {
  for (const auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    for (double g : s.param.grad()) {
      if (!std::isfinite(g)) {
        throw DivergenceError("non-finite gradient in '" + s.name + "' at optimizer step " + std::to_string(t_ + 1));
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    auto g = s.param.grad();
    auto p = s.param.mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      p[i] = store_value(p[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
    ++s.updates;
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

const Adam::Slot& Adam::slot_for(const std::string& name) const {
  for (const auto& s : slots_) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("adam: no slot for parameter '" + name + "'");
}

std::int64_t Adam::update_count(const std::string& name) const { return slot_for(name).updates; }

std::vector<std::uint8_t> Adam::encode_state() const {
  detail::ByteWriter w;
  w.bytes("SYMO1", 5);
  w.u64(static_cast<std::uint64_t>(t_));
  w.u32(static_cast<std::uint32_t>(slots_.size()));
  for (const auto& s : slots_) {
    w.str(s.name);
    w.u64(static_cast<std::uint64_t>(s.updates));
    w.u32(static_cast<std::uint32_t>(s.m.size()));
    for (double x : s.m) w.f64(x);
    for (double x : s.v) w.f64(x);
  }
  return w.take();
}

void Adam::decode_state(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("SYMO1");
  const auto t = static_cast<std::int64_t>(r.u64());
  const std::uint32_t count = r.u32();
  if (count != slots_.size()) {
    throw CheckpointError("optimizer state has " + std::to_string(count) + " slots, expected " +
                          std::to_string(slots_.size()));
  }
  for (auto& s : slots_) {
    const std::string name = r.str();
    if (name != s.name) throw CheckpointError("optimizer state slot '" + name + "' where '" + s.name + "' expected");
    s.updates = static_cast<std::int64_t>(r.u64());
    const std::uint32_t n = r.u32();
    if (n != s.m.size()) throw CheckpointError("optimizer state size mismatch for '" + name + "'");
    for (auto& x : s.m) x = r.f64();
    for (auto& x : s.v) x = r.f64();
  }
  if (!r.done()) throw CheckpointError("optimizer state: trailing bytes");
  t_ = t;
}

///////////////////////////////////////////
// Configuration
///////////////////////////////////////////

std::string to_string(Stage2Objective o) { return o == Stage2Objective::kSym ? "sym" : "joint"; }

Stage2Objective parse_stage2_objective(const std::string& s) {
  if (s == "sym") return Stage2Objective::kSym;
  if (s == "joint") return Stage2Objective::kJoint;
  throw std::invalid_argument("unknown stage-2 objective '" + s + "' (expected sym or joint)");
}

std::string to_string(TrainMode m) { return m == TrainMode::kSymbiosis ? "symbiosis" : "classic"; }

TrainMode parse_train_mode(const std::string& s) {
  if (s == "symbiosis") return TrainMode::kSymbiosis;
  if (s == "classic") return TrainMode::kClassic;
  throw std::invalid_argument("unknown training mode '" + s + "' (expected symbiosis or classic)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train." + msg); };
  if (!(tau >= 0.0)) fail("tau must be >= 0");
  if (!(alpha >= 0.0)) fail("alpha must be >= 0");
  if (stage1_steps < 0) fail("stage1_steps must be >= 0");
  if (stage2_steps < 0) fail("stage2_steps must be >= 0");
  if (batch_token_budget < 1) fail("batch_token_budget must be positive");
  if (!(label_eps >= 0.0 && label_eps < 1.0)) fail("label_eps must lie in [0, 1)");
  if (schedule.warmup_steps < 0) fail("warmup_steps must be >= 0");
  if (!(schedule.lr_floor > 0.0)) fail("lr_floor must be > 0");
  if (!(schedule.lr_peak > 0.0)) fail("lr_peak must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(adam.eps > 0.0)) fail("adam_eps must be > 0");
  if (keep_checkpoints < 1) fail("keep_checkpoints must be >= 1");
  if (eval_every < 0) fail("eval_every must be >= 0");
  if (patience < 0) fail("patience must be >= 0");
}

void to_json(nlohmann::json& j, const MetricRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j = nlohmann::json{{"step", r.step},
                     {"stage", r.stage},
                     {"lr", r.lr},
                     {"nll_m", r.nll_m},
                     {"nll_s", opt(r.nll_s)},
                     {"margin_mean", opt(r.margin_mean)},
                     {"hinge_active_frac", opt(r.hinge_active_frac)},
                     {"loss", r.loss}};
}

void to_json(nlohmann::json& j, const EvalSnapshot& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j = nlohmann::json{{"step", s.step},
                     {"stage", s.stage},
                     {"stage_end", s.stage_end},
                     {"nll_m", s.nll_m},
                     {"token_acc_m", s.token_acc_m},
                     {"token_acc_s", opt(s.token_acc_s)},
                     {"margin_mean", opt(s.margin_mean)},
                     {"hinge_active_frac", opt(s.hinge_active_frac)}};
}

///////////////////////////////////////////
// Training loop
///////////////////////////////////////////


namespace {

struct ArgmaxCount {
  std::int64_t correct = 0;
  std::int64_t total = 0;
};

void count_argmax(const Tensor& logits, const TokenMatrix& targets, ArgmaxCount& acc) {
  const auto v = static_cast<std::size_t>(logits.dim(-1));
  const auto data = logits.data();
  for (std::size_t i = 0; i < targets.ids.size(); ++i) {
    if (targets.ids[i] == kPadId) continue;
    const auto row = data.subspan(i * v, v);
    ++acc.total;
    if (std::max_element(row.begin(), row.end()) - row.begin() == targets.ids[i]) ++acc.correct;
  }
}

double ratio(std::int64_t a, std::int64_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

class CheckpointRing {
 public:
  CheckpointRing(std::filesystem::path dir, int keep) : dir_(std::move(dir)), keep_(keep) {}

  bool enabled() const { return !dir_.empty(); }

  void save(std::int64_t step, const SymbiosisModel& model, const Adam& opt) {
    if (!enabled() || step == last_step_) return;
    std::filesystem::create_directories(dir_);
    const auto path = dir_ / checkpoint_file_name(step);
    save_checkpoint(path, model.dims, model.params);
    auto side = path;
    side.replace_extension(".opt");
    write_file_atomic(side, opt.encode_state());
    kept_.push_back(path);
    last_step_ = step;
    while (static_cast<int>(kept_.size()) > keep_) {
      auto old = kept_.front();
      kept_.erase(kept_.begin());
      std::filesystem::remove(old);
      old.replace_extension(".opt");
      std::filesystem::remove(old);
    }
  }

  const std::vector<std::filesystem::path>& kept() const { return kept_; }

 private:
  std::filesystem::path dir_;
  int keep_;
  std::int64_t last_step_ = -1;
  std::vector<std::filesystem::path> kept_;
};

}  // namespace

std::string checkpoint_file_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%08lld.symb", static_cast<long long>(step));
  return buf;
}

EvalSnapshot evaluate_snapshot(const SymbiosisModel& model, const std::vector<Batch>& batches, const TrainConfig& cfg,
                               bool with_subnet) {
  EvalSnapshot snap;
  ForwardContext eval;
  ArgmaxCount acc_m, acc_s;
  double nll_sum = 0.0, margin_sum = 0.0;
  std::int64_t tokens = 0, sentences = 0, active = 0;
  for (const auto& b : batches) {
    const Tensor logits_m = model.mnet.forward(b.src, b.tgt_in, eval);
    const std::int64_t n_tok = b.target_tokens();
    nll_sum += label_smoothed_ce(logits_m, b.tgt_out.ids, cfg.label_eps, kPadId).item() * static_cast<double>(n_tok);
    tokens += n_tok;
    count_argmax(logits_m, b.tgt_out, acc_m);
    if (!with_subnet) continue;
    const Tensor logits_s = model.snet.forward(b.src, b.tgt_in, eval);
    count_argmax(logits_s, b.tgt_out, acc_s);
    const Tensor lm = sequence_log_prob(logits_m, b.tgt_out);
    const Tensor ls = sequence_log_prob(logits_s, b.tgt_out);
    for (std::int64_t i = 0; i < lm.numel(); ++i) {
      const double gap = lm[i] - ls[i];
      margin_sum += gap;
      if (margin_hinge(lm[i], ls[i], cfg.tau) > 0.0) ++active;
      ++sentences;
    }
  }
  snap.nll_m = tokens == 0 ? 0.0 : nll_sum / static_cast<double>(tokens);
  snap.token_acc_m = ratio(acc_m.correct, acc_m.total);
  if (with_subnet) {
    snap.token_acc_s = ratio(acc_s.correct, acc_s.total);
    snap.margin_mean = sentences == 0 ? 0.0 : margin_sum / static_cast<double>(sentences);
    snap.hinge_active_frac = ratio(active, sentences);
  }
  return snap;
}

TrainResult sym_train(const Dataset& data, const ModelDims& dims, const SymbiosisSpec& spec, const TrainConfig& cfg,
                      const TrainOptions& options) {
  cfg.validate();
  dims.validate();
  spec.validate();
  if (data.train.empty()) throw std::invalid_argument("sym_train: empty training set");
  if (data.vocab.size() > dims.vocab_size) {
    throw std::invalid_argument("sym_train: data vocabulary (" + std::to_string(data.vocab.size()) +
                                ") exceeds model.vocab_size (" + std::to_string(dims.vocab_size) + ")");
  }
  const bool classic = cfg.mode == TrainMode::kClassic;

  TrainResult res;
  res.model = build_symbiosis(dims, spec, cfg.seed);
  res.optimizer = Adam(res.model.params, cfg.adam);

  const std::vector<Batch> batches = batch_by_length(data.train, cfg.batch_token_budget);
  const std::vector<Batch> valid =
      data.valid.empty() ? std::vector<Batch>{} : batch_by_length(data.valid, cfg.batch_token_budget);
  Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng dropout_rng(cfg.seed + 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(batches.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  std::ofstream metrics;
  CheckpointRing ring(options.output_dir.empty() ? std::filesystem::path{} : options.output_dir / "checkpoints",
                      cfg.keep_checkpoints);
  if (!options.output_dir.empty()) {
    std::filesystem::create_directories(options.output_dir);
    metrics.open(options.output_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write metrics stream in '" + options.output_dir.string() + "'");
  }

  auto snapshot = [&](std::int64_t step, int stage, bool stage_end) {
    EvalSnapshot s = evaluate_snapshot(res.model, valid, cfg, !classic);
    s.step = step;
    s.stage = stage;
    s.stage_end = stage_end;
    res.evals.push_back(s);
    if (options.on_eval) options.on_eval(s);
    return s;
  };

  const std::int64_t budgets[2] = {classic ? cfg.stage1_steps + cfg.stage2_steps : cfg.stage1_steps,
                                   classic ? 0 : cfg.stage2_steps};
  std::int64_t step = 0;
  for (int stage = 1; stage <= 2; ++stage) {
    const std::int64_t budget = budgets[stage - 1];
    if (budget == 0) continue;
    const bool use_margin = stage == 2 && cfg.stage2_objective == Stage2Objective::kSym;
    double best_valid = std::numeric_limits<double>::infinity();
    int stale = 0;
    for (std::int64_t k = 0; k < budget; ++k) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const Batch& batch = batches[order[cursor++]];
      ++step;
      MetricRecord rec;
      rec.step = step;
      rec.stage = stage;
      rec.lr = lr_at(cfg.schedule, step);
      {
        Tape tape;
        TapeScope scope(tape);
        ForwardContext ctx{true, &dropout_rng};
        Tensor loss;
        if (classic) {
          loss = nll_loss(res.model.mnet, batch, cfg.label_eps, ctx);
          rec.nll_m = loss.item();
        } else {
          const PairTerms terms = pair_terms(res.model, batch, cfg.label_eps, ctx);
          loss = use_margin ? sym_loss(terms, cfg.tau, cfg.alpha) : joint_loss(terms.nll_m, terms.nll_s);
          rec.nll_m = terms.nll_m.item();
          rec.nll_s = terms.nll_s.item();
          double gap_sum = 0.0;
          std::int64_t active = 0;
          for (std::int64_t i = 0; i < terms.logp_m.numel(); ++i) {
            gap_sum += terms.logp_m[i] - terms.logp_s[i];
            if (margin_hinge(terms.logp_m[i], terms.logp_s[i], cfg.tau) > 0.0) ++active;
          }
          rec.margin_mean = gap_sum / static_cast<double>(terms.logp_m.numel());
          rec.hinge_active_frac = ratio(active, terms.logp_m.numel());
        }
        rec.loss = loss.item();
        if (!std::isfinite(rec.loss)) {
          throw DivergenceError("loss is " + std::to_string(rec.loss) + " at step " + std::to_string(step));
        }
        backward(loss);
      }
      res.optimizer.step(rec.lr);
      res.optimizer.zero_grad();
      res.history.push_back(rec);
      if (metrics.is_open()) metrics << nlohmann::json(rec).dump() << '\n' << std::flush;
      if (options.on_metric) options.on_metric(rec);

      if (cursor == order.size()) {
        ++res.epochs;
        ring.save(step, res.model, res.optimizer);
      }
      if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && k + 1 < budget && !valid.empty()) {
        const EvalSnapshot s = snapshot(step, stage, false);
        if (cfg.patience > 0) {
          if (s.nll_m < best_valid) {
            best_valid = s.nll_m;
            stale = 0;
          } else if (++stale >= cfg.patience) {
            res.stopped_early = true;
            break;
          }
        }
      }
    }
    if (!valid.empty()) snapshot(step, stage, true);
  }
  ring.save(step, res.model, res.optimizer);
  res.steps = step;
  res.checkpoints = ring.kept();
  return res;
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints) {
  if (checkpoints.empty()) throw std::invalid_argument("average_checkpoints: need at least one checkpoint");
  const Checkpoint& first = checkpoints.front();
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    if (!(checkpoints[i].dims == first.dims)) {
      throw CheckpointError("average_checkpoints: checkpoint " + std::to_string(i) + " has different model dims");
    }
    require_same_schema(first.params, checkpoints[i].params);
  }
  Checkpoint out{first.dims, first.params.clone()};
  const double k = static_cast<double>(checkpoints.size());
  std::vector<double> column(checkpoints.size());
  for (const auto& name : out.params.names()) {
    auto dst = out.params.at(name).mutable_data();
    for (std::size_t e = 0; e < dst.size(); ++e) {
      for (std::size_t c = 0; c < checkpoints.size(); ++c) column[c] = checkpoints[c].params.at(name).data()[e];
      std::sort(column.begin(), column.end());
      double s = 0.0;
      for (double x : column) s += x;
      dst[e] = store_value(s / k);
    }
  }
  return out;
}

Checkpoint average_checkpoints(const std::vector<std::filesystem::path>& paths) {
  std::vector<Checkpoint> loaded;
  for (const auto& p : paths) loaded.push_back(load_checkpoint(p));
  return average_checkpoints(loaded);
}

}  // namespace symb
