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

#include "symbiosis/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace symb {

///////////////////////////////////////////
// Vocab
///////////////////////////////////////////

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) push(t);
}

void Vocab::push(const std::string& token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::synthetic(int size) {
  if (size <= kNumReserved) throw std::invalid_argument("vocab: size must exceed the reserved ids");
  Vocab v;
  for (int i = kNumReserved; i < size; ++i) v.push("w" + std::to_string(i));
  return v;
}

Vocab Vocab::from_corpus(const std::vector<std::vector<std::string>>& sentences, int min_freq) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& s : sentences) {
    for (const auto& w : s) ++counts[w];
  }
  std::vector<std::pair<std::string, std::int64_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [w, c] : items) {
    if (c >= min_freq && v.index_.count(w) == 0) v.push(w);
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int i : ids) {
    if (i == kEosId) break;
    if (i == kPadId || i == kBosId) continue;
    out.push_back(token(i));
  }
  return out;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
  std::string out;
  for (const auto& w : decode(ids)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

///////////////////////////////////////////
// Synthetic tasks
///////////////////////////////////////////

std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kReverse: return "reverse";
    case TaskKind::kLexmap: return "lexmap";
  }
  return "unknown";
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "copy") return TaskKind::kCopy;
  if (s == "reverse") return TaskKind::kReverse;
  if (s == "lexmap") return TaskKind::kLexmap;
  throw std::invalid_argument("unknown task '" + s + "' (expected copy, reverse or lexmap)");
}

void SyntheticTaskSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("data." + msg); };
  if (vocab_size <= kNumReserved) fail("vocab_size must exceed the reserved ids");
  if (min_len < 1 || max_len < min_len) fail("need 1 <= min_len <= max_len");
  if (pairs < 1) fail("pairs must be positive");
  if (valid_fraction < 0.0 || test_fraction < 0.0 || valid_fraction + test_fraction >= 1.0) {
    fail("valid_fraction + test_fraction must lie in [0, 1)");
  }
}

std::vector<int> lexmap_permutation(int vocab_size, std::uint64_t seed) {
  std::vector<int> payload(static_cast<std::size_t>(vocab_size - kNumReserved));
  std::iota(payload.begin(), payload.end(), kNumReserved);
  Rng rng(seed);
  rng.shuffle(payload);
  std::vector<int> perm(static_cast<std::size_t>(vocab_size));
  std::iota(perm.begin(), perm.begin() + kNumReserved, 0);
  std::copy(payload.begin(), payload.end(), perm.begin() + kNumReserved);
  return perm;
}

SentencePair make_task_pair(TaskKind task, const std::vector<int>& src, const std::vector<int>& permutation) {
  SentencePair p{src, {}};
  switch (task) {
    case TaskKind::kCopy:
      p.tgt = src;
      break;
    case TaskKind::kReverse:
      p.tgt.assign(src.rbegin(), src.rend());
      break;
    case TaskKind::kLexmap:
      if (permutation.empty()) throw std::invalid_argument("make_task_pair: lexmap needs a permutation");
      for (auto it = src.rbegin(); it != src.rend(); ++it) p.tgt.push_back(permutation.at(static_cast<std::size_t>(*it)));
      break;
  }
  p.tgt.push_back(kEosId);
  return p;
}

int split_of(std::span<const int> src, double valid_fraction, double test_fraction) {
  // FNV-1a over the ids, finished with a 64-bit mix.
  std::uint64_t h = 1469598103934665603ULL;
  for (int id : src) {
    auto v = static_cast<std::uint32_t>(id);
    for (int b = 0; b < 4; ++b) {
      h ^= (v >> (8 * b)) & 0xFFu;
      h *= 1099511628211ULL;
    }
  }
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < valid_fraction) return 1;
  if (u < valid_fraction + test_fraction) return 2;
  return 0;
}

Dataset generate(const SyntheticTaskSpec& spec) {
  spec.validate();
  const double symbols = spec.vocab_size - kNumReserved;
  double capacity = 0.0;
  for (int len = spec.min_len; len <= spec.max_len; ++len) capacity += std::pow(symbols, len);
  if (static_cast<double>(spec.pairs) > capacity) {
    throw std::invalid_argument("data: " + std::to_string(spec.pairs) + " pairs requested but only " +
                                std::to_string(static_cast<std::int64_t>(capacity)) + " distinct sources exist");
  }
  Dataset ds;
  ds.vocab = Vocab::synthetic(spec.vocab_size);
  const std::vector<int> perm =
      spec.task == TaskKind::kLexmap ? lexmap_permutation(spec.vocab_size, spec.lexmap_seed) : std::vector<int>{};
  Rng rng(spec.seed);
  std::set<std::vector<int>> seen;
  while (static_cast<std::int64_t>(seen.size()) < spec.pairs) {
    const auto len = rng.uniform_int(spec.min_len, spec.max_len);
    std::vector<int> src(static_cast<std::size_t>(len));
    for (auto& t : src) t = static_cast<int>(rng.uniform_int(kNumReserved, spec.vocab_size - 1));
    if (!seen.insert(src).second) continue;
    SentencePair p = make_task_pair(spec.task, src, perm);
    switch (split_of(src, spec.valid_fraction, spec.test_fraction)) {
      case 1: ds.valid.push_back(std::move(p)); break;
      case 2: ds.test.push_back(std::move(p)); break;
      default: ds.train.push_back(std::move(p)); break;
    }
  }
  return ds;
}

namespace {

std::vector<std::vector<std::string>> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file '" + path + "'");
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<std::string> words;
    std::string w;
    while (ls >> w) words.push_back(w);
    out.push_back(std::move(words));
  }
  return out;
}

std::vector<SentencePair> encode_split(const Vocab& vocab, const std::string& src_path, const std::string& tgt_path) {
  if (src_path.empty()) return {};
  auto src = read_lines(src_path);
  auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size()) {
    throw std::runtime_error("corpus: '" + src_path + "' and '" + tgt_path + "' have different line counts");
  }
  std::vector<SentencePair> out;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].empty() || tgt[i].empty()) continue;
    SentencePair p{vocab.encode(src[i]), vocab.encode(tgt[i])};
    p.tgt.push_back(kEosId);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

Dataset load_text_corpus(const TextCorpusSpec& spec) {
  auto src = read_lines(spec.train_src);
  auto tgt = read_lines(spec.train_tgt);
  std::vector<std::vector<std::string>> both = src;
  both.insert(both.end(), tgt.begin(), tgt.end());
  Dataset ds;
  ds.vocab = Vocab::from_corpus(both, spec.min_freq);
  ds.train = encode_split(ds.vocab, spec.train_src, spec.train_tgt);
  ds.valid = encode_split(ds.vocab, spec.valid_src, spec.valid_tgt);
  ds.test = encode_split(ds.vocab, spec.test_src, spec.test_tgt);
  return ds;
}

///////////////////////////////////////////
// Batching
///////////////////////////////////////////

std::int64_t Batch::target_tokens() const {
  return std::count_if(tgt_out.ids.begin(), tgt_out.ids.end(), [](int t) { return t != kPadId; });
}

TokenMatrix source_matrix(const std::vector<std::vector<int>>& sources) {
  std::vector<std::vector<int>> rows = sources;
  for (auto& r : rows) r.push_back(kEosId);
  return TokenMatrix::from_rows(rows);
}

Batch make_batch(std::span<const SentencePair> pairs) {
  if (pairs.empty()) throw ContractError("make_batch: empty batch");
  std::vector<std::vector<int>> src, tin, tout;
  for (const auto& p : pairs) {
    if (p.tgt.empty()) throw ContractError("make_batch: empty target");
    src.push_back(p.src);
    std::vector<int> in{kBosId};
    in.insert(in.end(), p.tgt.begin(), p.tgt.end() - 1);
    tin.push_back(std::move(in));
    tout.push_back(p.tgt);
  }
  return Batch{source_matrix(src), TokenMatrix::from_rows(tin), TokenMatrix::from_rows(tout)};
}

std::int64_t pair_length(const SentencePair& p) {
  return std::max<std::int64_t>(static_cast<std::int64_t>(p.src.size()) + 1, static_cast<std::int64_t>(p.tgt.size()));
}

std::vector<Batch> batch_by_length(const std::vector<SentencePair>& pairs, std::int64_t token_budget) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i : order) {
    if (pair_length(pairs[i]) > token_budget) {
      throw std::invalid_argument("batch_by_length: pair " + std::to_string(i) + " has length " +
                                  std::to_string(pair_length(pairs[i])) + " > token budget " +
                                  std::to_string(token_budget));
    }
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = pairs[a];
    const auto& pb = pairs[b];
    if (pa.src.size() != pb.src.size()) return pa.src.size() < pb.src.size();
    return pa.tgt.size() < pb.tgt.size();
  });
  std::vector<Batch> batches;
  std::vector<SentencePair> current;
  std::int64_t src_w = 0, tgt_w = 0;
  for (std::size_t i : order) {
    const auto& p = pairs[i];
    const std::int64_t sw = std::max<std::int64_t>(src_w, static_cast<std::int64_t>(p.src.size()) + 1);
    const std::int64_t tw = std::max<std::int64_t>(tgt_w, static_cast<std::int64_t>(p.tgt.size()));
    const auto n = static_cast<std::int64_t>(current.size()) + 1;
    if (!current.empty() && (sw * n > token_budget || tw * n > token_budget)) {
      batches.push_back(make_batch(current));
      current.clear();
      src_w = tgt_w = 0;
    }
    current.push_back(p);
    src_w = std::max<std::int64_t>(src_w, static_cast<std::int64_t>(p.src.size()) + 1);
    tgt_w = std::max<std::int64_t>(tgt_w, static_cast<std::int64_t>(p.tgt.size()));
  }
  if (!current.empty()) batches.push_back(make_batch(current));
  return batches;
}

}  // namespace symb
