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

#include "symbiosis/config.hpp"

#include <fstream>
#include <limits>
#include <set>

#include "symbiosis/checkpoint.hpp"

namespace symb {

using nlohmann::json;

std::string to_string(NormStyle s) { return s == NormStyle::kPre ? "pre" : "post"; }

NormStyle parse_norm_style(const std::string& s) {
  if (s == "pre") return NormStyle::kPre;
  if (s == "post") return NormStyle::kPost;
  throw std::invalid_argument("unknown norm style '" + s + "' (expected pre or post)");
}

namespace {

// Reads the keys of one JSON object, tracking which were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  template <typename Int>
  void integer(const char* key, Int& dst) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number_integer()) fail(key, "expected an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v->is_number_unsigned()) {
        dst = static_cast<Int>(v->get<std::uint64_t>());
        return;
      }
      fail(key, "expected a non-negative integer");
    } else {
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<Int>::min() || x > std::numeric_limits<Int>::max()) fail(key, "out of range");
      dst = static_cast<Int>(x);
    }
  }

  void number(const char* key, double& dst) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number()) fail(key, "expected a number");
    dst = v->get<double>();
  }

  void string(const char* key, std::string& dst) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_string()) fail(key, "expected a string");
    dst = v->get<std::string>();
  }

  template <typename Enum, typename Parse>
  void enumeration(const char* key, Enum& dst, Parse parse) {
    std::string s;
    const json* v = find(key);
    if (!v) return;
    string(key, s);
    try {
      dst = parse(s);
    } catch (const std::invalid_argument& e) {
      fail(key, e.what());
    }
  }

  const json* object(const char* key) { return find(key); }

  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  // Throws on any key that was never read.
  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(child(key.c_str()) + ": unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const std::string where = key.empty() ? (path_.empty() ? std::string("config") : path_) : child(key.c_str());
    throw ConfigError(where + ": " + msg);
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(const json& j, ModelDims& m) {
  Section s(j, "model");
  s.integer("d_model", m.d_model);
  s.integer("n_heads", m.n_heads);
  s.integer("d_ffn", m.d_ffn);
  s.integer("vocab_size", m.vocab_size);
  s.integer("max_len", m.max_len);
  s.number("dropout", m.dropout);
  s.enumeration("norm_style", m.norm_style, parse_norm_style);
  s.finish();
}

void read_symbiosis(const json& j, SymbiosisSpec& sp) {
  Section s(j, "symbiosis");
  s.integer("main_depth", sp.main_depth);
  s.integer("sub_depth", sp.sub_depth);
  s.integer("decoder_depth", sp.decoder_depth);
  s.enumeration("layer_map", sp.strategy, parse_layer_map_strategy);
  s.finish();
}

void read_train(const json& j, TrainConfig& t) {
  Section s(j, "train");
  s.enumeration("mode", t.mode, parse_train_mode);
  s.number("tau", t.tau);
  s.number("alpha", t.alpha);
  if (const json* sched = s.object("schedule")) {
    Section ss(*sched, s.child("schedule"));
    ss.integer("warmup_steps", t.schedule.warmup_steps);
    ss.number("lr_floor", t.schedule.lr_floor);
    ss.number("lr_peak", t.schedule.lr_peak);
    ss.finish();
  }
  if (const json* adam = s.object("adam")) {
    Section sa(*adam, s.child("adam"));
    sa.number("beta1", t.adam.beta1);
    sa.number("beta2", t.adam.beta2);
    sa.number("eps", t.adam.eps);
    sa.finish();
  }
  s.integer("stage1_steps", t.stage1_steps);
  s.integer("stage2_steps", t.stage2_steps);
  s.integer("batch_token_budget", t.batch_token_budget);
  s.number("label_smoothing", t.label_eps);
  s.integer("seed", t.seed);
  s.enumeration("stage2_objective", t.stage2_objective, parse_stage2_objective);
  s.integer("keep_checkpoints", t.keep_checkpoints);
  s.integer("eval_every", t.eval_every);
  s.integer("patience", t.patience);
  s.finish();
}

void read_data(const json& j, SyntheticTaskSpec& d) {
  Section s(j, "data");
  s.enumeration("task", d.task, parse_task_kind);
  s.integer("vocab_size", d.vocab_size);
  s.integer("min_len", d.min_len);
  s.integer("max_len", d.max_len);
  s.integer("pairs", d.pairs);
  s.integer("seed", d.seed);
  s.integer("lexmap_seed", d.lexmap_seed);
  s.number("valid_fraction", d.valid_fraction);
  s.number("test_fraction", d.test_fraction);
  s.finish();
}

void read_beam(const json& j, BeamConfig& b) {
  Section s(j, "beam");
  s.integer("beam_size", b.beam_size);
  s.number("length_penalty", b.length_penalty);
  s.integer("max_decode_len", b.max_decode_len);
  s.finish();
}

template <typename F>
void rethrow_as_config_error(F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  rethrow_as_config_error([&] {
    model.validate();
    symbiosis.validate();
    train.validate();
    data.validate();
    beam.validate();
  });
  if (model.vocab_size != data.vocab_size) {
    throw ConfigError("model.vocab_size: must equal data.vocab_size (" + std::to_string(model.vocab_size) + " vs " +
                      std::to_string(data.vocab_size) + ")");
  }
  if (data.max_len + 1 > model.max_len) {
    throw ConfigError("model.max_len: must be at least data.max_len + 1 for the appended eos");
  }
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  Section s(j, "");
  if (const json* v = s.object("model")) read_model(*v, cfg.model);
  if (const json* v = s.object("symbiosis")) read_symbiosis(*v, cfg.symbiosis);
  if (const json* v = s.object("train")) read_train(*v, cfg.train);
  if (const json* v = s.object("data")) read_data(*v, cfg.data);
  if (const json* v = s.object("beam")) read_beam(*v, cfg.beam);
  s.string("output_dir", cfg.output_dir);
  s.finish();
  cfg.validate();
  return cfg;
}

json config_to_json(const RunConfig& c) {
  return json{
      {"model",
       {{"d_model", c.model.d_model},
        {"n_heads", c.model.n_heads},
        {"d_ffn", c.model.d_ffn},
        {"vocab_size", c.model.vocab_size},
        {"max_len", c.model.max_len},
        {"dropout", c.model.dropout},
        {"norm_style", to_string(c.model.norm_style)}}},
      {"symbiosis",
       {{"main_depth", c.symbiosis.main_depth},
        {"sub_depth", c.symbiosis.sub_depth},
        {"decoder_depth", c.symbiosis.decoder_depth},
        {"layer_map", to_string(c.symbiosis.strategy)}}},
      {"train",
       {{"mode", to_string(c.train.mode)},
        {"tau", c.train.tau},
        {"alpha", c.train.alpha},
        {"schedule",
         {{"warmup_steps", c.train.schedule.warmup_steps},
          {"lr_floor", c.train.schedule.lr_floor},
          {"lr_peak", c.train.schedule.lr_peak}}},
        {"adam", {{"beta1", c.train.adam.beta1}, {"beta2", c.train.adam.beta2}, {"eps", c.train.adam.eps}}},
        {"stage1_steps", c.train.stage1_steps},
        {"stage2_steps", c.train.stage2_steps},
        {"batch_token_budget", c.train.batch_token_budget},
        {"label_smoothing", c.train.label_eps},
        {"seed", c.train.seed},
        {"stage2_objective", to_string(c.train.stage2_objective)},
        {"keep_checkpoints", c.train.keep_checkpoints},
        {"eval_every", c.train.eval_every},
        {"patience", c.train.patience}}},
      {"data",
       {{"task", to_string(c.data.task)},
        {"vocab_size", c.data.vocab_size},
        {"min_len", c.data.min_len},
        {"max_len", c.data.max_len},
        {"pairs", c.data.pairs},
        {"seed", c.data.seed},
        {"lexmap_seed", c.data.lexmap_seed},
        {"valid_fraction", c.data.valid_fraction},
        {"test_fraction", c.data.test_fraction}}},
      {"beam",
       {{"beam_size", c.beam.beam_size},
        {"length_penalty", c.beam.length_penalty},
        {"max_decode_len", c.beam.max_decode_len}}},
      {"output_dir", c.output_dir},
  };
}

RunConfig load_config(const std::filesystem::path& path) { return config_from_json(parse_file(path)); }

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  const std::string text = config_to_json(cfg).dump(2) + "\n";
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void SweepConfig::validate() const {
  base.validate();
  if (depths.empty()) throw ConfigError("depths: need at least one (main, sub) pair");
  for (const auto& [m, o] : depths) {
    SymbiosisSpec sp = base.symbiosis;
    sp.main_depth = m;
    sp.sub_depth = o;
    rethrow_as_config_error([&] { sp.validate(); });
  }
  if (seeds.empty()) throw ConfigError("seeds: need at least one seed");
}

SweepConfig sweep_from_json(const json& j) {
  SweepConfig cfg;
  Section s(j, "");
  if (const json* v = s.object("base")) cfg.base = config_from_json(*v);
  if (const json* v = s.object("depths")) {
    if (!v->is_array()) s.fail("depths", "expected an array of [main, sub] pairs");
    for (const auto& d : *v) {
      if (!d.is_array() || d.size() != 2 || !d[0].is_number_integer() || !d[1].is_number_integer()) {
        s.fail("depths", "expected an array of [main, sub] integer pairs");
      }
      cfg.depths.emplace_back(d[0].get<int>(), d[1].get<int>());
    }
  }
  if (const json* v = s.object("seeds")) {
    if (!v->is_array()) s.fail("seeds", "expected an array of non-negative integers");
    cfg.seeds.clear();
    for (const auto& x : *v) {
      if (!x.is_number_unsigned()) s.fail("seeds", "expected an array of non-negative integers");
      cfg.seeds.push_back(x.get<std::uint64_t>());
    }
  }
  s.finish();
  cfg.validate();
  return cfg;
}

json sweep_to_json(const SweepConfig& cfg) {
  json depths = json::array();
  for (const auto& [m, o] : cfg.depths) depths.push_back({m, o});
  return json{{"base", config_to_json(cfg.base)}, {"depths", depths}, {"seeds", cfg.seeds}};
}

SweepConfig load_sweep(const std::filesystem::path& path) { return sweep_from_json(parse_file(path)); }

}  // namespace symb
