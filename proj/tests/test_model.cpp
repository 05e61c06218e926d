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
#include "symbiosis/model.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace symb;
using namespace symb::testing;

TEST_CASE("attention examples") {
  SUBCASE("single key returns its value") {
    Tensor q = Tensor::from({1, 2, 2}, {0.3, -1.0, 2.0, 0.5});
    Tensor k = Tensor::from({1, 1, 2}, {0.7, 0.1});
    Tensor v = Tensor::from({1, 1, 3}, {4.0, -2.0, 9.0});
    auto out = scaled_dot_product_attention(q, k, v);
    CHECK(out.shape() == Shape{1, 2, 3});
    for (int r = 0; r < 2; ++r) {
      CHECK(out[r * 3 + 0] == doctest::Approx(4.0).epsilon(1e-15));
      CHECK(out[r * 3 + 1] == doctest::Approx(-2.0).epsilon(1e-15));
      CHECK(out[r * 3 + 2] == doctest::Approx(9.0).epsilon(1e-15));
    }
  }
  SUBCASE("identical keys average the values") {
    Tensor q = Tensor::from({1, 2}, {1.5, -0.5});
    Tensor k = Tensor::from({3, 2}, {0.2, 0.4, 0.2, 0.4, 0.2, 0.4});
    Tensor v = Tensor::from({3, 2}, {1, 2, 3, 4, 8, 0});
    auto out = scaled_dot_product_attention(q, k, v);
    CHECK(out[0] == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(2.0).epsilon(1e-14));
  }
  SUBCASE("hand-evaluated weights") {
    Tensor q = Tensor::from({1, 2}, {1, 0});
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto out = scaled_dot_product_attention(q, eye, eye);
    CHECK(out[0] == doctest::Approx(0.6697615493266569).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(0.3302384506733431).epsilon(1e-14));
  }
  SUBCASE("d_k mismatch") {
    CHECK_THROWS_AS(scaled_dot_product_attention(Tensor::zeros({1, 2}), Tensor::zeros({2, 3}), Tensor::zeros({2, 3})),
                    ShapeError);
  }
}

TEST_CASE("masked attention weights still sum to one") {
  // With V = identity the output rows are the attention weights.
  Rng rng(5);
  const std::int64_t t = 5;
  std::vector<double> qv(static_cast<std::size_t>(2 * t * 4)), kv(qv.size());
  for (auto& x : qv) x = 3.0 * rng.normal();
  for (auto& x : kv) x = 3.0 * rng.normal();
  std::vector<double> eye(static_cast<std::size_t>(t * t), 0.0);
  for (std::int64_t i = 0; i < t; ++i) eye[i * t + i] = 1.0;
  Tensor q = Tensor::from({2, t, 4}, qv), k = Tensor::from({2, t, 4}, kv), v = Tensor::from({t, t}, eye);
  Tensor mask = reshape(causal_keep_mask(t), {1, t, t});
  auto w = scaled_dot_product_attention(q, k, v, &mask);
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t i = 0; i < t; ++i) {
      double s = 0.0;
      for (std::int64_t j = 0; j < t; ++j) {
        const double x = w[(b * t + i) * t + j];
        if (j > i) CHECK(x == 0.0);
        s += x;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("sublayer pipelines") {
  Tensor x = Tensor::from({2, 3}, {1.0, -2.0, 0.5, 3.0, 3.5, -1.0});
  Tensor g = Tensor::full({3}, 1.0), b = Tensor::zeros({3});
  auto zero_fn = [](const Tensor& h) { return scale(h, 0.0); };
  auto identity = [](const Tensor& h) { return h; };
  Tensor ln = layer_norm(x, g, b, 1e-5);

  auto pre_zero = sublayer_forward(x, zero_fn, NormStyle::kPre, g, b);
  CHECK(max_abs_diff(pre_zero.data(), x.data()) == 0.0);
  auto post_zero = sublayer_forward(x, zero_fn, NormStyle::kPost, g, b);
  CHECK(max_abs_diff(post_zero.data(), ln.data()) == 0.0);
  auto pre_id = sublayer_forward(x, identity, NormStyle::kPre, g, b);
  CHECK(max_abs_diff(pre_id.data(), add(x, ln).data()) == 0.0);
}

TEST_CASE("encoder contracts") {
  PrecisionScope p64(Precision::kFloat64);
  ModelDims dims = toy_dims();
  Rng rng(11);
  ForwardContext eval;

  SUBCASE("output shape") {
    auto view = build_model(dims, 2, 1, 3);
    auto out = view.encode(random_tokens(2, 5, dims.vocab_size, rng), eval);
    CHECK(out.shape() == Shape{2, 5, dims.d_model});
  }
  SUBCASE("depth-0 stack is the final norm of the embedded input") {
    auto view = build_model(dims, 0, 1, 3);
    auto src = random_tokens(2, 4, dims.vocab_size, rng);
    auto out = view.encode(src, eval);
    const auto& params = view.parameters();
    Tensor emb = embedding(params.at(param_name::kEmbedding), src.ids, src.shape());
    emb = add(scale(emb, std::sqrt(static_cast<double>(dims.d_model))), sinusoidal_positions(4, dims.d_model));
    Tensor want = layer_norm(emb, params.at("enc.final_ln.g"), params.at("enc.final_ln.b"), 1e-5);
    CHECK(max_abs_diff(out.data(), want.data()) < 1e-12);
  }
  SUBCASE("identical parameters give bit-identical outputs") {
    auto a = build_model(dims, 2, 1, 9);
    auto b = build_model(dims, 2, 1, 9);
    auto src = random_tokens(3, 6, dims.vocab_size, rng);
    CHECK(max_abs_diff(a.encode(src, eval).data(), b.encode(src, eval).data()) == 0.0);
  }
  SUBCASE("too long") {
    auto view = build_model(dims, 1, 1, 3);
    CHECK_THROWS_AS(view.encode(TokenMatrix(1, dims.max_len + 1), eval), std::length_error);
  }
  SUBCASE("dropout only acts in training mode") {
    ModelDims dd = dims;
    dd.dropout = 0.3;
    auto view = build_model(dd, 1, 1, 3);
    auto src = random_tokens(2, 5, dd.vocab_size, rng);
    Rng r1(1), r2(1);
    ForwardContext t1{true, &r1}, t2{true, &r2};
    auto a = view.encode(src, t1);
    auto b = view.encode(src, t2);
    CHECK(max_abs_diff(a.data(), b.data()) == 0.0);
    CHECK(max_abs_diff(a.data(), view.encode(src, eval).data()) > 1e-3);
    ForwardContext no_rng{true, nullptr};
    CHECK_THROWS_AS(view.encode(src, no_rng), ContractError);
  }
}

TEST_CASE("post-norm stack has no final norm parameters") {
  ModelDims dims = toy_dims();
  dims.norm_style = NormStyle::kPost;
  auto view = build_model(dims, 2, 1, 3);
  CHECK_FALSE(view.parameters().contains("enc.final_ln.g"));
  CHECK_FALSE(view.parameters().contains("dec.final_ln.g"));
  Rng rng(2);
  ForwardContext eval;
  auto src = random_tokens(2, 5, dims.vocab_size, rng);
  auto logits = view.forward(src, random_tokens(2, 3, dims.vocab_size, rng), eval);
  CHECK(logits.shape() == Shape{2, 3, dims.vocab_size});
}

TEST_CASE("decoder is causal") {
  PrecisionScope p64(Precision::kFloat64);
  ModelDims dims = toy_dims();
  auto view = build_model(dims, 2, 2, 4);
  Rng rng(8);
  ForwardContext eval;
  auto src = random_tokens(2, 5, dims.vocab_size, rng);
  auto tgt = random_tokens(2, 6, dims.vocab_size, rng);
  auto enc = view.encode(src, eval);
  auto base = view.decode_logits(tgt, enc, src, eval);
  CHECK(base.shape() == Shape{2, 6, dims.vocab_size});
  const std::int64_t v = dims.vocab_size;
  for (std::int64_t t = 0; t < 6; ++t) {
    TokenMatrix changed = tgt;
    for (std::int64_t r = 0; r < 2; ++r) changed.at(r, t) = kNumReserved + (changed.at(r, t) - kNumReserved + 1) % (dims.vocab_size - kNumReserved);
    auto out = view.decode_logits(changed, enc, src, eval);
    for (std::int64_t r = 0; r < 2; ++r) {
      for (std::int64_t pos = 0; pos < 6; ++pos) {
        double diff = 0.0;
        for (std::int64_t k = 0; k < v; ++k) {
          const auto i = (r * 6 + pos) * v + k;
          diff = std::max(diff, std::abs(out[i] - base[i]));
        }
        if (pos < t) CHECK(diff == 0.0);
        else if (pos == t) CHECK(diff > 0.0);
      }
    }
  }
}

TEST_CASE("decoder shape contract") {
  ModelDims dims = toy_dims();
  auto view = build_model(dims, 1, 1, 4);
  ForwardContext eval;
  TokenMatrix src(1, 3), tgt(1, 2);
  CHECK_THROWS_AS(view.decode_logits(tgt, Tensor::zeros({1, 3, dims.d_model + 1}), src, eval), ShapeError);
}

TEST_CASE("log_prob_of_target matches the chain rule") {
  PrecisionScope p64(Precision::kFloat64);
  ModelDims dims = toy_dims();
  auto view = build_model(dims, 2, 1, 21);
  ForwardContext eval;
  TokenMatrix src = TokenMatrix::from_rows({{5, 7, 9, kEosId}});
  const std::vector<int> y{6, 8, kEosId};
  TokenMatrix tin = TokenMatrix::from_rows({{kBosId, 6, 8}});
  TokenMatrix tout = TokenMatrix::from_rows({y});
  const double lp = view.log_prob_of_target(src, tin, tout, eval).item();

  // Decode each prefix separately and multiply the step probabilities.
  double prob = 1.0;
  std::vector<int> prefix{kBosId};
  auto enc = view.encode(src, eval);
  for (int tok : y) {
    auto logits = view.decode_logits(TokenMatrix::from_rows({prefix}), enc, src, eval);
    const auto t = static_cast<std::int64_t>(prefix.size()) - 1;
    double z = 0.0;
    for (int k = 0; k < dims.vocab_size; ++k) z += std::exp(logits[t * dims.vocab_size + k]);
    prob *= std::exp(logits[t * dims.vocab_size + tok]) / z;
    prefix.push_back(tok);
  }
  CHECK(lp == doctest::Approx(std::log(prob)).epsilon(1e-12));
  CHECK(std::exp(lp) > 0.0);
  CHECK(std::exp(lp) <= 1.0);
}

TEST_CASE("log_prob of uniform logits") {
  Tensor logits = Tensor::zeros({1, 3, 2});
  TokenMatrix tgt = TokenMatrix::from_rows({{1, 0, 0}});
  CHECK(sequence_log_prob(logits, tgt).item() == doctest::Approx(std::log(0.5)).epsilon(1e-15));
  TokenMatrix two = TokenMatrix::from_rows({{1, 1, 0}});
  CHECK(sequence_log_prob(logits, two).item() == doctest::Approx(2 * std::log(0.5)).epsilon(1e-15));
}

TEST_CASE("log_prob is invariant to pad extension") {
  PrecisionScope p64(Precision::kFloat64);
  ModelDims dims = toy_dims();
  auto view = build_model(dims, 2, 1, 22);
  ForwardContext eval;
  auto src = TokenMatrix::from_rows({{5, 6, kEosId}, {7, kEosId}});
  auto tin = TokenMatrix::from_rows({{kBosId, 9}, {kBosId, 4}});
  auto tout = TokenMatrix::from_rows({{9, kEosId}, {4, kEosId}});
  auto base = view.log_prob_of_target(src, tin, tout, eval);

  auto pad = [](const TokenMatrix& m, std::int64_t extra) {
    TokenMatrix out(m.rows, m.cols + extra);
    for (std::int64_t r = 0; r < m.rows; ++r)
      for (std::int64_t c = 0; c < m.cols; ++c) out.at(r, c) = m.at(r, c);
    return out;
  };
  auto ext = view.log_prob_of_target(pad(src, 3), pad(tin, 2), pad(tout, 2), eval);
  CHECK(max_abs_diff(base.data(), ext.data()) < 1e-12);
}

TEST_CASE("end-to-end gradient check") {
  PrecisionScope p64(Precision::kFloat64);
  ModelDims dims = toy_dims();
  auto view = build_model(dims, 2, 1, 31);
  auto src = TokenMatrix::from_rows({{5, 6, 7, kEosId}, {8, 9, kEosId}});
  auto tin = TokenMatrix::from_rows({{kBosId, 7, 6, 5}, {kBosId, 9, 8}});
  auto tout = TokenMatrix::from_rows({{7, 6, 5, kEosId}, {9, 8, kEosId}});
  std::vector<Tensor> params;
  for (const auto& [_, t] : view.parameters()) params.push_back(t);
  auto f = [&] {
    ForwardContext eval;
    return label_smoothed_ce(view.forward(src, tin, eval), tout.ids, 0.1, kPadId);
  };
  auto report = grad_check(f, params, 1e-5, 1e-3);
  INFO(report.worst_tensor << " max rel " << report.max_rel_error);
  CHECK(report.passed);
  CHECK(report.checked > 1000);
}

TEST_CASE("parameter store") {
  auto store = init_parameters(toy_dims(), 2, 1, 1);
  CHECK(store.contains("embed"));
  CHECK(store.contains("enc.layer.1.attn.wq"));
  CHECK(store.contains("dec.layer.0.cross_attn.bo"));
  CHECK_THROWS_AS(store.add("embed", Tensor::zeros({1})), std::invalid_argument);
  CHECK_THROWS_WITH_AS(store.at("nope"), doctest::Contains("nope"), std::out_of_range);
  auto copy = store.clone();
  CHECK_FALSE(copy.at("embed").same_storage(store.at("embed")));
  CHECK(max_abs_diff(copy.at("embed").data(), store.at("embed").data()) == 0.0);
  CHECK(store.distinct_storage_count() == store.size());

  auto again = init_parameters(toy_dims(), 2, 1, 1);
  for (const auto& [name, t] : store) CHECK(max_abs_diff(t.data(), again.at(name).data()) == 0.0);
}

TEST_CASE("dims validation names the field") {
  ModelDims d = toy_dims();
  d.n_heads = 3;
  CHECK_THROWS_WITH_AS(d.validate(), doctest::Contains("model."), std::invalid_argument);
}
