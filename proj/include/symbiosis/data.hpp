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
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "symbiosis/model.hpp"

namespace symb {

class Vocab {
 public:
  // Reserved entries only.
  Vocab();
  // Reserved entries followed by "w<id>" for ids kNumReserved..size-1.
  static Vocab synthetic(int size);
  // Reserved entries followed by every token seen at least `min_freq` times,
  // most frequent first, ties in lexicographic order.
  static Vocab from_corpus(const std::vector<std::vector<std::string>>& sentences, int min_freq);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // kUnkId if unknown
  const std::string& token(int id) const;
  std::vector<int> encode(const std::vector<std::string>& words) const;
  // Drops pad/bos and stops at eos.
  std::vector<std::string> decode(std::span<const int> ids) const;
  std::string detokenize(std::span<const int> ids) const;

 private:
  void push(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// src holds payload ids only; tgt ends with kEosId.
struct SentencePair {
  std::vector<int> src;
  std::vector<int> tgt;
  bool operator==(const SentencePair&) const = default;
};

enum class TaskKind { kCopy, kReverse, kLexmap };

std::string to_string(TaskKind t);
TaskKind parse_task_kind(const std::string& s);

struct SyntheticTaskSpec {
  TaskKind task = TaskKind::kLexmap;
  int vocab_size = 64;
  int min_len = 4;
  int max_len = 16;
  std::int64_t pairs = 10000;
  std::uint64_t seed = 1;
  std::uint64_t lexmap_seed = 7;
  double valid_fraction = 0.05;
  double test_fraction = 0.05;

  void validate() const;
  bool operator==(const SyntheticTaskSpec&) const = default;
};

struct Dataset {
  Vocab vocab;
  std::vector<SentencePair> train;
  std::vector<SentencePair> valid;
  std::vector<SentencePair> test;
};

// Bijection over token ids that fixes the reserved ids and permutes the rest.
std::vector<int> lexmap_permutation(int vocab_size, std::uint64_t seed);

// copy: Y = X; reverse: Y = reverse(X); lexmap: Y = perm(reverse(X)); all
// followed by eos.
SentencePair make_task_pair(TaskKind task, const std::vector<int>& src, const std::vector<int>& permutation = {});

// Split bucket of a source sequence: 0 train, 1 valid, 2 test.
int split_of(std::span<const int> src, double valid_fraction, double test_fraction);

// Throws std::invalid_argument if more distinct sources are requested than
// the length/vocabulary range can produce.
Dataset generate(const SyntheticTaskSpec& spec);

struct TextCorpusSpec {
  std::string train_src, train_tgt;
  std::string valid_src, valid_tgt;
  std::string test_src, test_tgt;
  int min_freq = 1;
};

// Whitespace-tokenized parallel files, one sentence per line. The vocabulary
// is built from the training split (both sides) with the frequency cutoff.
Dataset load_text_corpus(const TextCorpusSpec& spec);

struct Batch {
  TokenMatrix src;      // [B, N]: payload then eos, padded
  TokenMatrix tgt_in;   // [B, T]: bos then Y[:-1]
  TokenMatrix tgt_out;  // [B, T]: Y
  std::int64_t size() const { return src.rows; }
  std::int64_t target_tokens() const;
};

// Encoder input for a set of sources: payload followed by eos.
TokenMatrix source_matrix(const std::vector<std::vector<int>>& sources);
Batch make_batch(std::span<const SentencePair> pairs);

// Columns a pair occupies in a batch: max(len(src) + 1, len(tgt)).
std::int64_t pair_length(const SentencePair& p);

// Length-sorted batches whose padded source and target token counts each
// stay within `token_budget`. Every pair appears exactly once.
std::vector<Batch> batch_by_length(const std::vector<SentencePair>& pairs, std::int64_t token_budget);

}  // namespace symb
