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

#include "symbiosis/data.hpp"
#include "symbiosis/model.hpp"

namespace symb {

struct BeamConfig {
  int beam_size = 4;
  double length_penalty = 0.6;
  int max_decode_len = 32;

  void validate() const;
  bool operator==(const BeamConfig&) const = default;
};

struct Hypothesis {
  std::vector<int> tokens;  // ends with kEosId iff finished
  double log_prob = 0.0;
  bool finished = false;
  double score = 0.0;  // log_prob / length_penalty(tokens.size())
};

// ((5 + length) / 6) ^ alpha
double length_penalty(std::int64_t length, double alpha);

// Decoding never emits pad or bos. Ties go to the lower token id.
std::vector<std::vector<int>> greedy_decode(const ModelView& view, const std::vector<std::vector<int>>& sources,
                                            int max_decode_len);

// Candidates at each step are the top `beam_size` one-token extensions of the
// live hypotheses; extensions ending in eos move to the finished pool. Stops
// when nothing is live or at max_decode_len. Returns the best finished
// hypothesis by score, or the best live one if none finished. Ties prefer the
// lexicographically smaller token sequence, then the shorter one.
Hypothesis beam_search(const ModelView& view, const std::vector<int>& source, const BeamConfig& cfg);

struct AccuracyCount {
  std::int64_t correct = 0;
  std::int64_t total = 0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
  AccuracyCount& operator+=(const AccuracyCount& o) {
    correct += o.correct;
    total += o.total;
    return *this;
  }
};

// Teacher-forced argmax accuracy over non-pad target positions.
AccuracyCount token_accuracy(const ModelView& view, const Batch& batch);
AccuracyCount token_accuracy(const ModelView& view, const std::vector<Batch>& batches);

// Position-wise agreement of greedy decodes with the references (eos
// included), over reference positions.
AccuracyCount greedy_token_accuracy(const ModelView& view, const std::vector<SentencePair>& pairs,
                                    int max_decode_len, std::int64_t batch_size = 64);

using TokenSeq = std::vector<std::string>;

// Corpus BLEU-4 in [0, 100], unsmoothed, single reference.
double bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references);
// Token-id form; ids after the first eos are ignored and pad/bos dropped.
double bleu(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references);

struct EvalReport {
  double bleu = 0.0;
  double token_acc = 0.0;
  double greedy_acc = 0.0;
  std::int64_t n_sentences = 0;
  int beam = 0;
  double lp = 0.0;
};

struct EvalOutput {
  EvalReport report;
  std::vector<std::vector<int>> hypotheses;
};

EvalOutput evaluate(const ModelView& view, const std::vector<SentencePair>& pairs, const BeamConfig& beam,
                    std::int64_t token_budget);

}  // namespace symb
