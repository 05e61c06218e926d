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

#include "symbiosis/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace symb {

void BeamConfig::validate() const {
  if (beam_size < 1) throw std::invalid_argument("beam.beam_size must be >= 1");
  if (max_decode_len < 1) throw std::invalid_argument("beam.max_decode_len must be >= 1");
  if (!(length_penalty >= 0.0)) throw std::invalid_argument("beam.length_penalty must be >= 0");
}

double length_penalty(std::int64_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

namespace {

bool allowed(int token) { return token != kPadId && token != kBosId; }

// Row `row` of a [.., T, V] logits tensor at position t, as log-probabilities.
std::vector<double> log_softmax_at(const Tensor& logits, std::int64_t row, std::int64_t t) {
  const std::int64_t tt = logits.dim(1), v = logits.dim(2);
  auto data = logits.data().subspan(static_cast<std::size_t>((row * tt + t) * v), static_cast<std::size_t>(v));
  const double m = *std::max_element(data.begin(), data.end());
  double z = 0.0;
  for (double x : data) z += std::exp(x - m);
  const double lse = m + std::log(z);
  std::vector<double> out(data.begin(), data.end());
  for (auto& x : out) x -= lse;
  return out;
}

// Encoder output for one source repeated `copies` times along the batch axis.
Tensor repeat_rows(const Tensor& enc, std::int64_t copies) {
  const auto one = enc.data();
  std::vector<double> v;
  v.reserve(one.size() * static_cast<std::size_t>(copies));
  for (std::int64_t i = 0; i < copies; ++i) v.insert(v.end(), one.begin(), one.end());
  return Tensor::from({copies, enc.dim(1), enc.dim(2)}, std::move(v));
}

TokenMatrix repeat_rows(const TokenMatrix& m, std::int64_t copies) {
  TokenMatrix out(copies, m.cols);
  for (std::int64_t r = 0; r < copies; ++r) std::copy(m.ids.begin(), m.ids.end(), out.ids.begin() + r * m.cols);
  return out;
}

TokenMatrix decoder_input(const std::vector<std::vector<int>>& prefixes, std::int64_t cols) {
  TokenMatrix m(static_cast<std::int64_t>(prefixes.size()), cols);
  for (std::size_t r = 0; r < prefixes.size(); ++r) {
    m.at(static_cast<std::int64_t>(r), 0) = kBosId;
    for (std::size_t c = 0; c < prefixes[r].size() && static_cast<std::int64_t>(c) + 1 < cols; ++c) {
      m.at(static_cast<std::int64_t>(r), static_cast<std::int64_t>(c) + 1) = prefixes[r][c];
    }
  }
  return m;
}

bool better_hypothesis(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  const std::size_t n = std::min(a.tokens.size(), b.tokens.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a.tokens[i] != b.tokens[i]) return a.tokens[i] < b.tokens[i];
  }
  return a.tokens.size() < b.tokens.size();
}

}  // namespace

std::vector<std::vector<int>> greedy_decode(const ModelView& view, const std::vector<std::vector<int>>& sources,
                                            int max_decode_len) {
  if (sources.empty()) return {};
  ForwardContext eval;
  const TokenMatrix src = source_matrix(sources);
  const Tensor enc = view.encode(src, eval);
  const auto rows = static_cast<std::int64_t>(sources.size());
  const int steps = std::min(max_decode_len, view.dims().max_len);
  std::vector<std::vector<int>> out(sources.size());
  std::vector<bool> done(sources.size(), false);
  for (int step = 1; step <= steps; ++step) {
    const Tensor logits = view.decode_logits(decoder_input(out, step), enc, src, eval);
    const std::int64_t v = logits.dim(2);
    bool all_done = true;
    for (std::int64_t r = 0; r < rows; ++r) {
      if (done[r]) continue;
      auto row = logits.data().subspan(static_cast<std::size_t>((r * step + step - 1) * v), static_cast<std::size_t>(v));
      int best = -1;
      for (int k = 0; k < v; ++k) {
        if (allowed(k) && (best < 0 || row[k] > row[best])) best = k;
      }
      out[r].push_back(best);
      if (best == kEosId) done[r] = true;
      else all_done = false;
    }
    if (all_done) break;
    // Finished rows are padded so the prefix matrix stays rectangular.
    for (std::int64_t r = 0; r < rows; ++r) {
      if (done[r] && static_cast<int>(out[r].size()) < step) out[r].push_back(kPadId);
    }
  }
  for (auto& seq : out) {
    while (!seq.empty() && seq.back() == kPadId) seq.pop_back();
  }
  return out;
}

Hypothesis beam_search(const ModelView& view, const std::vector<int>& source, const BeamConfig& cfg) {
  cfg.validate();
  ForwardContext eval;
  const TokenMatrix src = source_matrix({source});
  const Tensor enc = view.encode(src, eval);
  const int steps = std::min(cfg.max_decode_len, view.dims().max_len);

  struct Live {
    std::vector<int> tokens;
    double log_prob;
  };
  struct Candidate {
    double log_prob;
    std::size_t parent;
    int token;
  };
  std::vector<Live> live{{{}, 0.0}};
  std::vector<Hypothesis> finished;
  for (int step = 1; step <= steps && !live.empty(); ++step) {
    const auto a = static_cast<std::int64_t>(live.size());
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const Tensor logits =
        view.decode_logits(decoder_input(prefixes, step), repeat_rows(enc, a), repeat_rows(src, a), eval);
    std::vector<Candidate> cands;
    for (std::int64_t r = 0; r < a; ++r) {
      const auto lp = log_softmax_at(logits, r, step - 1);
      for (int k = 0; k < static_cast<int>(lp.size()); ++k) {
        if (allowed(k)) cands.push_back({live[r].log_prob + lp[k], static_cast<std::size_t>(r), k});
      }
    }
    auto before = [&](const Candidate& x, const Candidate& y) {
      if (x.log_prob != y.log_prob) return x.log_prob > y.log_prob;
      const auto& px = live[x.parent].tokens;
      const auto& py = live[y.parent].tokens;
      if (px != py) return px < py;
      return x.token < y.token;
    };
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(cfg.beam_size));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), before);
    std::vector<Live> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      std::vector<int> tokens = live[c.parent].tokens;
      tokens.push_back(c.token);
      if (c.token == kEosId) {
        const double score = c.log_prob / length_penalty(static_cast<std::int64_t>(tokens.size()), cfg.length_penalty);
        finished.push_back({std::move(tokens), c.log_prob, true, score});
      } else {
        next.push_back({std::move(tokens), c.log_prob});
      }
    }
    live = std::move(next);
  }
  std::vector<Hypothesis> pool = std::move(finished);
  if (pool.empty()) {
    for (auto& h : live) {
      const double score = h.log_prob / length_penalty(static_cast<std::int64_t>(h.tokens.size()), cfg.length_penalty);
      pool.push_back({std::move(h.tokens), h.log_prob, false, score});
    }
  }
  if (pool.empty()) throw std::logic_error("beam_search: no hypotheses");
  return *std::min_element(pool.begin(), pool.end(), better_hypothesis);
}

AccuracyCount token_accuracy(const ModelView& view, const Batch& batch) {
  ForwardContext eval;
  const Tensor logits = view.forward(batch.src, batch.tgt_in, eval);
  const std::int64_t v = logits.dim(2);
  AccuracyCount acc;
  const auto data = logits.data();
  for (std::size_t i = 0; i < batch.tgt_out.ids.size(); ++i) {
    const int target = batch.tgt_out.ids[i];
    if (target == kPadId) continue;
    const auto row = data.subspan(i * static_cast<std::size_t>(v), static_cast<std::size_t>(v));
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    ++acc.total;
    if (best == target) ++acc.correct;
  }
  return acc;
}

AccuracyCount token_accuracy(const ModelView& view, const std::vector<Batch>& batches) {
  AccuracyCount acc;
  for (const auto& b : batches) acc += token_accuracy(view, b);
  return acc;
}

AccuracyCount greedy_token_accuracy(const ModelView& view, const std::vector<SentencePair>& pairs,
                                    int max_decode_len, std::int64_t batch_size) {
  AccuracyCount acc;
  for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(pairs.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::vector<int>> sources;
    for (std::size_t i = start; i < end; ++i) sources.push_back(pairs[i].src);
    const auto hyps = greedy_decode(view, sources, max_decode_len);
    for (std::size_t i = start; i < end; ++i) {
      const auto& ref = pairs[i].tgt;
      const auto& hyp = hyps[i - start];
      for (std::size_t t = 0; t < ref.size(); ++t) {
        ++acc.total;
        if (t < hyp.size() && hyp[t] == ref[t]) ++acc.correct;
      }
    }
  }
  return acc;
}

double bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                                std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");
  constexpr int kMaxOrder = 4;
  std::int64_t matches[kMaxOrder] = {0, 0, 0, 0};
  std::int64_t totals[kMaxOrder] = {0, 0, 0, 0};
  std::int64_t hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    hyp_len += static_cast<std::int64_t>(h.size());
    ref_len += static_cast<std::int64_t>(r.size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      std::map<TokenSeq, std::int64_t> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[TokenSeq(r.begin() + i, r.begin() + i + n)];
      std::map<TokenSeq, std::int64_t> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[TokenSeq(h.begin() + i, h.begin() + i + n)];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(c, it->second);
        totals[n - 1] += c;
      }
    }
  }
  double log_precision = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
  }
  const double bp =
      hyp_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_precision / kMaxOrder);
}

double bleu(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references) {
  auto words = [](const std::vector<std::vector<int>>& corpus) {
    std::vector<TokenSeq> out;
    for (const auto& seq : corpus) {
      TokenSeq s;
      for (int id : seq) {
        if (id == kEosId) break;
        if (id == kPadId || id == kBosId) continue;
        s.push_back(std::to_string(id));
      }
      out.push_back(std::move(s));
    }
    return out;
  };
  return bleu(words(hypotheses), words(references));
}

EvalOutput evaluate(const ModelView& view, const std::vector<SentencePair>& pairs, const BeamConfig& beam,
                    std::int64_t token_budget) {
  if (pairs.empty()) throw std::invalid_argument("evaluate: no sentences");
  EvalOutput out;
  std::vector<std::vector<int>> refs;
  for (const auto& p : pairs) {
    out.hypotheses.push_back(beam_search(view, p.src, beam).tokens);
    refs.push_back(p.tgt);
  }
  out.report.bleu = bleu(out.hypotheses, refs);
  out.report.token_acc = token_accuracy(view, batch_by_length(pairs, token_budget)).value();
  out.report.greedy_acc = greedy_token_accuracy(view, pairs, beam.max_decode_len).value();
  out.report.n_sentences = static_cast<std::int64_t>(pairs.size());
  out.report.beam = beam.beam_size;
  out.report.lp = beam.length_penalty;
  return out;
}

}  // namespace symb
