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
#include "test_util.hpp"

#include <cmath>

using namespace symb;
using namespace symb::testing;

namespace {

TokenSeq words(const std::string& s) {
  TokenSeq out;
  std::string w;
  for (char c : s) {
    if (c == ' ') {
      if (!w.empty()) out.push_back(w);
      w.clear();
    } else {
      w += c;
    }
  }
  if (!w.empty()) out.push_back(w);
  return out;
}

// Teacher-forced log P of a full token sequence (eos included if present).
double sequence_score(const ModelView& view, const std::vector<int>& src, const std::vector<int>& seq) {
  ForwardContext eval;
  std::vector<int> tin{kBosId};
  tin.insert(tin.end(), seq.begin(), seq.end() - 1);
  return view
      .log_prob_of_target(source_matrix({src}), TokenMatrix::from_rows({tin}), TokenMatrix::from_rows({seq}), eval)
      .item();
}

// Best finished sequence of length <= max_len over the non-reserved tokens
// plus eos, ranked like beam_search.
Hypothesis exhaustive_best(const ModelView& view, const std::vector<int>& src, int max_len, double alpha) {
  const int v = view.dims().vocab_size;
  std::vector<int> alphabet{kEosId, kUnkId};
  for (int t = kNumReserved; t < v; ++t) alphabet.push_back(t);
  Hypothesis best;
  bool have = false;
  std::vector<std::vector<int>> frontier{{}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& prefix : frontier) {
      for (int t : alphabet) {
        auto seq = prefix;
        seq.push_back(t);
        if (t == kEosId) {
          const double lp = sequence_score(view, src, seq);
          Hypothesis h{seq, lp, true, lp / length_penalty(len, alpha)};
          const bool better = !have || h.score > best.score ||
                              (h.score == best.score && (h.tokens < best.tokens ||
                                                         (h.tokens == best.tokens && h.tokens.size() < best.tokens.size())));
          if (better) {
            best = h;
            have = true;
          }
        } else {
          next.push_back(std::move(seq));
        }
      }
    }
    frontier = std::move(next);
  }
  return best;
}

}  // namespace

TEST_CASE("length penalty") {
  CHECK(length_penalty(7, 0.0) == 1.0);
  CHECK(length_penalty(1, 0.6) == 1.0);
  CHECK(length_penalty(7, 0.6) == doctest::Approx(std::pow(2.0, 0.6)).epsilon(1e-15));
}

TEST_CASE("bleu values") {
  std::vector<TokenSeq> refs{words("the cat sat on the mat"), words("a b c d e f")};
  CHECK(bleu(refs, refs) == 100.0);
  CHECK(bleu(std::vector<TokenSeq>{{}, {}}, refs) == 0.0);
  CHECK(bleu(std::vector<TokenSeq>{words("a b c d")}, std::vector<TokenSeq>{words("a b c d e")}) ==
        doctest::Approx(77.8800783071405).epsilon(1e-12));
  CHECK(bleu(std::vector<TokenSeq>{words("a b c")}, std::vector<TokenSeq>{words("a b c")}) == 0.0);
  CHECK_THROWS_AS(bleu(std::vector<TokenSeq>{}, std::vector<TokenSeq>{}), std::invalid_argument);
  CHECK_THROWS_AS(bleu(refs, std::vector<TokenSeq>{refs[0]}), std::invalid_argument);
}

TEST_CASE("bleu is invariant to corpus order") {
  std::vector<TokenSeq> hyps{words("a b c d e"), words("x y z w v u"), words("p q r s")};
  std::vector<TokenSeq> refs{words("a b c d f"), words("x y z w u u"), words("p q r s t")};
  const double base = bleu(hyps, refs);
  CHECK(base > 0.0);
  std::vector<TokenSeq> h2{hyps[2], hyps[0], hyps[1]}, r2{refs[2], refs[0], refs[1]};
  CHECK(bleu(h2, r2) == base);
}

TEST_CASE("bleu over token ids stops at eos") {
  std::vector<std::vector<int>> hyp{{4, 5, 6, 7, kEosId, 9}};
  std::vector<std::vector<int>> ref{{4, 5, 6, 7, kEosId}};
  CHECK(bleu(hyp, ref) == 100.0);
}

TEST_CASE("greedy decoding") {
  ModelDims dims = toy_dims(8);
  auto view = build_model(dims, 1, 1, 5);
  std::vector<std::vector<int>> sources{{4, 5, 6}, {7}, {5, 5, 6, 7, 4}};
  auto a = greedy_decode(view, sources, 6);
  auto b = greedy_decode(view, sources, 6);
  CHECK(a == b);
  for (const auto& seq : a) {
    CHECK(!seq.empty());
    CHECK(seq.size() <= 6);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      CHECK(seq[i] != kPadId);
      CHECK(seq[i] != kBosId);
      if (seq[i] == kEosId) CHECK(i + 1 == seq.size());
    }
  }
  // Batched and one-at-a-time decoding agree.
  for (std::size_t i = 0; i < sources.size(); ++i) CHECK(greedy_decode(view, {sources[i]}, 6)[0] == a[i]);
}

TEST_CASE("beam of one is greedy") {
  Rng rng(3);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    auto view = build_model(toy_dims(8), 1, 1, seed);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<int> src;
      for (int i = 0, n = static_cast<int>(rng.uniform_int(1, 6)); i < n; ++i) src.push_back(static_cast<int>(rng.uniform_int(4, 7)));
      auto g = greedy_decode(view, {src}, 7)[0];
      auto h = beam_search(view, src, {1, 0.6, 7});
      CHECK(h.tokens == g);
      CHECK(h.finished == (g.back() == kEosId));
    }
  }
}

TEST_CASE("wide beam matches exhaustive search") {
  ModelDims dims = toy_dims(6);
  Rng rng(17);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto view = build_model(dims, 1, 1, seed);
    for (double alpha : {0.0, 0.6, 2.0}) {
      for (int trial = 0; trial < 3; ++trial) {
        std::vector<int> src;
        for (int i = 0, n = static_cast<int>(rng.uniform_int(1, 5)); i < n; ++i) src.push_back(static_cast<int>(rng.uniform_int(4, 5)));
        auto want = exhaustive_best(view, src, 3, alpha);
        auto got = beam_search(view, src, {6 * 6 * 6, alpha, 3});
        CHECK(got.tokens == want.tokens);
        CHECK(got.score == doctest::Approx(want.score).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("beam search returned score over beam widths") {
  ModelDims dims = toy_dims(8);
  Rng rng(23);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto view = build_model(dims, 1, 1, seed);
    for (int trial = 0; trial < 4; ++trial) {
      std::vector<int> src;
      for (int i = 0, n = static_cast<int>(rng.uniform_int(2, 5)); i < n; ++i) src.push_back(static_cast<int>(rng.uniform_int(4, 7)));
      const double exhaustive = beam_search(view, src, {1 << 12, 0.6, 4}).score;
      double prev = -1e300;
      for (int k : {1, 2, 4, 8, 16}) {
        auto h = beam_search(view, src, {k, 0.6, 4});
        CHECK(h.score >= prev - 1e-12);
        CHECK(h.score <= exhaustive + 1e-12);
        prev = h.score;
        CHECK(beam_search(view, src, {k, 0.6, 4}).tokens == h.tokens);
      }
    }
  }
}

TEST_CASE("token accuracy") {
  SUBCASE("chance level on random data") {
    ModelDims dims = toy_dims(16);
    auto view = build_model(dims, 1, 1, 8);
    Rng rng(4);
    AccuracyCount acc;
    for (int b = 0; b < 40; ++b) {
      std::vector<SentencePair> pairs;
      for (int i = 0; i < 25; ++i) {
        SentencePair p;
        for (int t = 0; t < 10; ++t) p.src.push_back(static_cast<int>(rng.uniform_int(4, 15)));
        for (int t = 0; t < 10; ++t) p.tgt.push_back(static_cast<int>(rng.uniform_int(0, 15)));
        for (auto& t : p.tgt) t = t == kPadId ? 1 + static_cast<int>(rng.uniform_int(0, 14)) : t;
        pairs.push_back(p);
      }
      acc += token_accuracy(view, make_batch(pairs));
    }
    CHECK(acc.total == 10000);
    CHECK(std::abs(acc.value() - 1.0 / 16.0) < 0.02);
  }
  SUBCASE("pads are excluded") {
    ModelDims dims = toy_dims(12);
    auto view = build_model(dims, 1, 1, 8);
    std::vector<SentencePair> pairs{make_task_pair(TaskKind::kCopy, {4, 5, 6}), make_task_pair(TaskKind::kCopy, {7, 8})};
    Batch b = make_batch(pairs);
    auto base = token_accuracy(view, b);
    CHECK(base.total == 7);
    Batch wide = b;
    auto widen = [](const TokenMatrix& m, std::int64_t extra) {
      TokenMatrix out(m.rows, m.cols + extra);
      for (std::int64_t r = 0; r < m.rows; ++r)
        for (std::int64_t c = 0; c < m.cols; ++c) out.at(r, c) = m.at(r, c);
      return out;
    };
    wide.src = widen(b.src, 2);
    wide.tgt_in = widen(b.tgt_in, 3);
    wide.tgt_out = widen(b.tgt_out, 3);
    auto ext = token_accuracy(view, wide);
    CHECK(ext.total == base.total);
    CHECK(ext.correct == base.correct);
  }
}

TEST_CASE("evaluation report") {
  ModelDims dims = toy_dims(10);
  auto view = build_model(dims, 1, 1, 2);
  std::vector<SentencePair> pairs{make_task_pair(TaskKind::kCopy, {4, 5}), make_task_pair(TaskKind::kCopy, {6, 7, 8})};
  auto out = evaluate(view, pairs, {2, 0.6, 5}, 64);
  CHECK(out.report.n_sentences == 2);
  CHECK(out.report.beam == 2);
  CHECK(out.report.lp == 0.6);
  CHECK(out.hypotheses.size() == 2);
  CHECK(out.report.bleu >= 0.0);
  CHECK(out.report.bleu <= 100.0);
  CHECK_THROWS_AS(evaluate(view, {}, {}, 64), std::invalid_argument);
}
