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

// Structured values cross the boundary as JSON text; the Python package
// decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "symbiosis/checkpoint.hpp"
#include "symbiosis/gradsuite.hpp"
#include "symbiosis/run.hpp"

namespace py = pybind11;
using namespace symb;

namespace {

RunConfig parse_config(const std::string& text) { return config_from_json(nlohmann::json::parse(text)); }

std::vector<std::vector<int>> pairs_field(const std::vector<SentencePair>& pairs, bool target) {
  std::vector<std::vector<int>> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(target ? p.tgt : p.src);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of symbiosis_nets";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.attr("PAD") = kPadId;
  m.attr("BOS") = kBosId;
  m.attr("EOS") = kEosId;
  m.attr("UNK") = kUnkId;

  m.def("code_version_hash", &code_version_hash);

  m.def(
      "layer_map",
      [](const std::string& strategy, int main_depth, int sub_depth) {
        return build_layer_map(parse_layer_map_strategy(strategy), main_depth, sub_depth);
      },
      py::arg("strategy"), py::arg("main_depth"), py::arg("sub_depth"));

  m.def(
      "lr_at",
      [](std::int64_t step, std::int64_t warmup, double lr_floor, double lr_peak) {
        return lr_at(Schedule{warmup, lr_floor, lr_peak}, step);
      },
      py::arg("step"), py::arg("warmup_steps") = 8000, py::arg("lr_floor") = 1e-7, py::arg("lr_peak") = 5e-4);

  m.def("margin_hinge", &margin_hinge, py::arg("logp_m"), py::arg("logp_s"), py::arg("tau"));
  m.def("length_penalty", &length_penalty, py::arg("length"), py::arg("alpha"));

  m.def(
      "bleu",
      [](const std::vector<std::vector<std::string>>& hyps, const std::vector<std::vector<std::string>>& refs) {
        return bleu(hyps, refs);
      },
      py::arg("hypotheses"), py::arg("references"));

  m.def(
      "generate",
      [](const std::string& task, int vocab_size, int min_len, int max_len, std::int64_t pairs, std::uint64_t seed) {
        SyntheticTaskSpec spec;
        spec.task = parse_task_kind(task);
        spec.vocab_size = vocab_size;
        spec.min_len = min_len;
        spec.max_len = max_len;
        spec.pairs = pairs;
        spec.seed = seed;
        const Dataset d = generate(spec);
        py::dict out;
        for (const auto& [name, split] : {std::pair{"train", &d.train}, {"valid", &d.valid}, {"test", &d.test}}) {
          out[name] = py::make_tuple(pairs_field(*split, false), pairs_field(*split, true));
        }
        return out;
      },
      py::arg("task"), py::arg("vocab_size") = 64, py::arg("min_len") = 4, py::arg("max_len") = 16,
      py::arg("pairs") = 10000, py::arg("seed") = 1);

  m.def(
      "normalize_config", [](const std::string& text) { return config_to_json(parse_config(text)).dump(); },
      py::arg("config_json"));

  m.def(
      "describe_layer_map",
      [](const std::string& text) { return describe_layer_map(parse_config(text).symbiosis); },
      py::arg("config_json"));

  m.def(
      "train",
      [](const std::string& text, const std::filesystem::path& dir) {
        const RunConfig cfg = parse_config(text);
        py::gil_scoped_release release;
        return run_training(cfg, dir).manifest.dump();
      },
      py::arg("config_json"), py::arg("run_dir"));

  m.def("list_checkpoints", &list_checkpoints, py::arg("run_dir"));

  m.def(
      "evaluate",
      [](const std::string& text, const std::vector<std::filesystem::path>& checkpoints, bool subnet,
         const std::string& split) {
        const RunConfig cfg = parse_config(text);
        EvalRun run;
        {
          py::gil_scoped_release release;
          run = run_eval(cfg, {checkpoints, subnet, split});
        }
        auto j = report_to_json(run.report);
        j["hypotheses"] = run.hypotheses;
        return j.dump();
      },
      py::arg("config_json"), py::arg("checkpoints"), py::arg("subnet") = false, py::arg("split") = "test");

  m.def(
      "verify",
      [](const std::string& text, const std::filesystem::path& checkpoint) {
        const auto r = run_verify(parse_config(text), checkpoint);
        return py::make_tuple(r.passed, r.summary());
      },
      py::arg("config_json"), py::arg("checkpoint"));

  m.def(
      "checkpoint_sha1", [](const std::filesystem::path& p) { return sha1_hex(read_file(p)); }, py::arg("path"));

  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& p) {
        const Checkpoint ck = load_checkpoint(p);
        py::dict params;
        for (const auto& [name, t] : ck.params) {
          params[py::str(name)] = py::make_tuple(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
        }
        return params;
      },
      py::arg("path"));

  m.def("gradient_suite", [] {
    const auto prim = run_primitive_grad_suite();
    const auto model = run_model_grad_suite();
    return py::make_tuple(prim.passed() && model.passed(), prim.summary() + model.summary());
  });
}
