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

#include "symbiosis/model.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace symb {

namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kMaskedScore = -1e9;
}  // namespace

///////////////////////////////////////////
// TokenMatrix / ModelDims
///////////////////////////////////////////

TokenMatrix TokenMatrix::from_rows(const std::vector<std::vector<int>>& rows) {
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.size());
  TokenMatrix m(static_cast<std::int64_t>(rows.size()), static_cast<std::int64_t>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.at(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)) = rows[i][j];
  }
  return m;
}

std::vector<int> TokenMatrix::row(std::int64_t r) const {
  std::vector<int> out(ids.begin() + r * cols, ids.begin() + (r + 1) * cols);
  while (!out.empty() && out.back() == kPadId) out.pop_back();
  return out;
}

void ModelDims::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model." + msg); };
  if (d_model <= 0) fail("d_model must be positive");
  if (n_heads <= 0) fail("n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_ffn <= 0) fail("d_ffn must be positive");
  if (vocab_size <= kNumReserved) fail("vocab_size must exceed the reserved ids");
  if (max_len <= 0) fail("max_len must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
}

///////////////////////////////////////////
// ParameterStore
///////////////////////////////////////////

void ParameterStore::add(const std::string& name, Tensor t) {
  if (!params_.emplace(name, std::move(t)).second) {
    throw std::invalid_argument("parameter store: duplicate name '" + name + "'");
  }
}

void ParameterStore::bind(const std::string& name, Tensor t) { params_[name] = std::move(t); }

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("parameter store: no parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("parameter store: no parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::distinct_storage_count() const {
  std::set<const void*> ids;
  for (const auto& [_, t] : params_) ids.insert(t.storage_id());
  return ids.size();
}

std::int64_t ParameterStore::element_count() const {
  std::set<const void*> seen;
  std::int64_t n = 0;
  for (const auto& [_, t] : params_) {
    if (seen.insert(t.storage_id()).second) n += t.numel();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& [name, t] : params_) out.add(name, t.clone());
  return out;
}

///////////////////////////////////////////
// Names
///////////////////////////////////////////

namespace param_name {
std::string encoder_layer(int layer) { return "enc.layer." + std::to_string(layer); }
std::string decoder_layer(int layer) { return "dec.layer." + std::to_string(layer); }
}  // namespace param_name

namespace {

const std::vector<std::string> kAttnParams = {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"};

void append_attention(std::vector<std::string>& out, const std::string& prefix) {
  for (const auto& p : kAttnParams) out.push_back(prefix + "." + p);
}

void append_norm(std::vector<std::string>& out, const std::string& prefix) {
  out.push_back(prefix + ".g");
  out.push_back(prefix + ".b");
}

void append_ffn(std::vector<std::string>& out, const std::string& prefix) {
  for (const char* p : {"w1", "b1", "w2", "b2"}) out.push_back(prefix + "." + p);
}

}  // namespace

std::vector<std::string> encoder_layer_parameter_names(int layer) {
  const std::string base = param_name::encoder_layer(layer);
  std::vector<std::string> out;
  append_norm(out, base + ".ln_attn");
  append_attention(out, base + ".attn");
  append_norm(out, base + ".ln_ffn");
  append_ffn(out, base + ".ffn");
  return out;
}

std::vector<std::string> decoder_layer_parameter_names(int layer) {
  const std::string base = param_name::decoder_layer(layer);
  std::vector<std::string> out;
  append_norm(out, base + ".ln_self");
  append_attention(out, base + ".self_attn");
  append_norm(out, base + ".ln_cross");
  append_attention(out, base + ".cross_attn");
  append_norm(out, base + ".ln_ffn");
  append_ffn(out, base + ".ffn");
  return out;
}

///////////////////////////////////////////
// Initialization
///////////////////////////////////////////

namespace {

Shape parameter_shape(const ModelDims& dims, const std::string& name) {
  const std::int64_t d = dims.d_model, f = dims.d_ffn, v = dims.vocab_size;
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  if (name == param_name::kEmbedding) return {v, d};
  if (name == param_name::kOutput + ".w") return {d, v};
  if (name == param_name::kOutput + ".b") return {v};
  if (ends_with(".ffn.w1")) return {d, f};
  if (ends_with(".ffn.b1")) return {f};
  if (ends_with(".ffn.w2")) return {f, d};
  if (ends_with(".ffn.b2")) return {d};
  if (ends_with(".wq") || ends_with(".wk") || ends_with(".wv") || ends_with(".wo")) return {d, d};
  return {d};  // biases and norm gains/biases
}

Tensor init_tensor(const ModelDims& dims, const std::string& name, Rng& rng) {
  Shape shape = parameter_shape(dims, name);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)), 0.0);
  const bool is_norm_gain = name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
  if (name == param_name::kEmbedding) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(dims.d_model));
    for (auto& x : v) x = store_value(sd * rng.normal());
  } else if (shape.size() == 2) {
    // Xavier uniform.
    const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    for (auto& x : v) x = store_value(a * (2.0 * rng.uniform() - 1.0));
  } else if (is_norm_gain) {
    for (auto& x : v) x = 1.0;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

ParameterStore init_parameters(const ModelDims& dims, int enc_depth, int dec_depth, std::uint64_t seed) {
  dims.validate();
  if (enc_depth < 0 || dec_depth < 1) throw std::invalid_argument("model: encoder depth >= 0 and decoder depth >= 1 required");
  std::vector<std::string> order{param_name::kEmbedding};
  for (int i = 0; i < enc_depth; ++i) {
    auto names = encoder_layer_parameter_names(i);
    order.insert(order.end(), names.begin(), names.end());
  }
  if (dims.norm_style == NormStyle::kPre) append_norm(order, param_name::kEncoderFinalNorm);
  for (int i = 0; i < dec_depth; ++i) {
    auto names = decoder_layer_parameter_names(i);
    order.insert(order.end(), names.begin(), names.end());
  }
  if (dims.norm_style == NormStyle::kPre) append_norm(order, param_name::kDecoderFinalNorm);
  order.push_back(param_name::kOutput + ".w");
  order.push_back(param_name::kOutput + ".b");

  Rng rng(seed);
  ParameterStore store;
  for (const auto& name : order) store.add(name, init_tensor(dims, name, rng));
  return store;
}

ModelView make_view(const ModelDims& dims, const ParameterStore& store, const std::vector<int>& encoder_layers,
                    int dec_depth) {
  ParameterStore bindings;
  auto bind = [&](const std::string& name) { bindings.add(name, store.at(name)); };
  bind(param_name::kEmbedding);
  for (int layer : encoder_layers) {
    for (const auto& n : encoder_layer_parameter_names(layer)) bind(n);
  }
  EncoderStack enc{encoder_layers, ""};
  DecoderStack dec;
  for (int i = 0; i < dec_depth; ++i) {
    dec.layers.push_back(i);
    for (const auto& n : decoder_layer_parameter_names(i)) bind(n);
  }
  if (dims.norm_style == NormStyle::kPre) {
    enc.final_norm = param_name::kEncoderFinalNorm;
    dec.final_norm = param_name::kDecoderFinalNorm;
    for (const auto& p : {enc.final_norm, dec.final_norm}) {
      bind(p + ".g");
      bind(p + ".b");
    }
  }
  bind(param_name::kOutput + ".w");
  bind(param_name::kOutput + ".b");
  return ModelView(dims, std::move(enc), std::move(dec), std::move(bindings));
}

ModelView build_model(const ModelDims& dims, int enc_depth, int dec_depth, std::uint64_t seed) {
  ParameterStore store = init_parameters(dims, enc_depth, dec_depth, seed);
  std::vector<int> layers;
  for (int i = 0; i < enc_depth; ++i) layers.push_back(i);
  return make_view(dims, store, layers, dec_depth);
}

///////////////////////////////////////////
// Building blocks
///////////////////////////////////////////

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* keep_mask,
                                    const SublayerFn& weight_dropout) {
  if (q.rank() < 2 || k.rank() < 2 || v.rank() < 2) throw ShapeError("attention: Q, K, V must have rank >= 2");
  if (q.dim(-1) != k.dim(-1)) {
    throw ShapeError("attention: d_k differs between Q " + to_string(q.shape()) + " and K " + to_string(k.shape()));
  }
  if (k.dim(-2) != v.dim(-2)) {
    throw ShapeError("attention: K " + to_string(k.shape()) + " and V " + to_string(v.shape()) +
                     " disagree on key count");
  }
  std::vector<std::int64_t> perm(static_cast<std::size_t>(k.rank()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  Tensor scores = scale(matmul(q, transpose(k, perm)), 1.0 / std::sqrt(static_cast<double>(q.dim(-1))));
  if (keep_mask != nullptr) {
    std::vector<double> bias(keep_mask->data().begin(), keep_mask->data().end());
    for (auto& b : bias) b = b != 0.0 ? 0.0 : kMaskedScore;
    scores = add(scores, Tensor::from(keep_mask->shape(), std::move(bias)));
  }
  Tensor weights = softmax(scores, -1);
  if (weight_dropout) weights = weight_dropout(weights);
  return matmul(weights, v);
}

Tensor sublayer_forward(const Tensor& x, const SublayerFn& f, NormStyle style, const Tensor& gain,
                        const Tensor& bias, const SublayerFn& drop) {
  auto d = [&](const Tensor& t) { return drop ? drop(t) : t; };
  if (style == NormStyle::kPre) return add(x, d(f(layer_norm(x, gain, bias, kLayerNormEps))));
  return layer_norm(add(x, d(f(x))), gain, bias, kLayerNormEps);
}

Tensor sinusoidal_positions(std::int64_t length, int d_model) {
  std::vector<double> pe(static_cast<std::size_t>(length * d_model));
  for (std::int64_t pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / d_model);
      pe[pos * d_model + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d_model) pe[pos * d_model + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return Tensor::from({length, d_model}, std::move(pe));
}

Tensor causal_keep_mask(std::int64_t length) {
  std::vector<double> m(static_cast<std::size_t>(length * length), 0.0);
  for (std::int64_t i = 0; i < length; ++i) {
    for (std::int64_t j = 0; j <= i; ++j) m[i * length + j] = 1.0;
  }
  return Tensor::from({1, 1, length, length}, std::move(m));
}

Tensor key_keep_mask(const TokenMatrix& tokens) {
  std::vector<double> m(tokens.ids.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = tokens.ids[i] == kPadId ? 0.0 : 1.0;
  return Tensor::from({tokens.rows, 1, 1, tokens.cols}, std::move(m));
}

Tensor sequence_log_prob(const Tensor& logits, const TokenMatrix& targets) {
  const std::int64_t vocab = logits.dim(-1);
  if (logits.numel() != targets.rows * targets.cols * vocab) {
    throw ShapeError("sequence_log_prob: logits " + to_string(logits.shape()) + " vs targets " +
                     to_string(targets.shape()));
  }
  // One-hot selector; pad rows select every class so the picked mass is 1
  // and log() stays finite before masking.
  std::vector<double> select(static_cast<std::size_t>(logits.numel()), 0.0);
  std::vector<double> keep(targets.ids.size(), 0.0);
  for (std::size_t r = 0; r < targets.ids.size(); ++r) {
    const int t = targets.ids[r];
    if (t == kPadId) {
      std::fill_n(select.begin() + static_cast<std::ptrdiff_t>(r * vocab), vocab, 1.0);
    } else {
      if (t < 0 || t >= vocab) throw std::out_of_range("sequence_log_prob: target id out of range");
      select[r * vocab + t] = 1.0;
      keep[r] = 1.0;
    }
  }
  Tensor probs = softmax(logits, -1);
  Tensor picked = sum(multiply(probs, Tensor::from(logits.shape(), std::move(select))), -1);
  Tensor logp = multiply(log(picked), Tensor::from(picked.shape(), std::move(keep)));
  return sum(reshape(logp, targets.shape()), 1);
}

///////////////////////////////////////////
// ModelView
///////////////////////////////////////////

ModelView::ModelView(ModelDims dims, EncoderStack encoder, DecoderStack decoder, ParameterStore bindings)
    : dims_(dims), encoder_(std::move(encoder)), decoder_(std::move(decoder)), bindings_(std::move(bindings)) {
  dims_.validate();
}

Tensor ModelView::drop(const Tensor& x, ForwardContext& ctx) const {
  if (!ctx.train || dims_.dropout == 0.0) return x;
  if (ctx.rng == nullptr) throw ContractError("forward: training with dropout requires an Rng");
  return dropout(x, dims_.dropout, *ctx.rng);
}

Tensor ModelView::embed(const TokenMatrix& tokens, ForwardContext& ctx) const {
  if (tokens.cols > dims_.max_len) {
    throw std::length_error("model: sequence length " + std::to_string(tokens.cols) + " exceeds max_len " +
                            std::to_string(dims_.max_len));
  }
  Tensor x = embedding(param(param_name::kEmbedding), tokens.ids, tokens.shape());
  x = add(scale(x, std::sqrt(static_cast<double>(dims_.d_model))), sinusoidal_positions(tokens.cols, dims_.d_model));
  return drop(x, ctx);
}

Tensor ModelView::attention(const Tensor& query_in, const Tensor& kv_in, const Tensor& keep, const std::string& prefix,
                            ForwardContext& ctx) const {
  const std::int64_t b = query_in.dim(0), tq = query_in.dim(1), tk = kv_in.dim(1);
  const std::int64_t h = dims_.n_heads, dk = dims_.d_k();
  auto project = [&](const Tensor& x, const char* w, const char* bias) {
    return add(matmul(x, param(prefix + "." + w)), param(prefix + "." + bias));
  };
  auto heads = [&](const Tensor& x, std::int64_t t) { return transpose(reshape(x, {b, t, h, dk}), {0, 2, 1, 3}); };
  Tensor q = heads(project(query_in, "wq", "bq"), tq);
  Tensor k = heads(project(kv_in, "wk", "bk"), tk);
  Tensor v = heads(project(kv_in, "wv", "bv"), tk);
  SublayerFn weight_drop;
  if (ctx.train && dims_.dropout > 0.0) weight_drop = [&](const Tensor& w) { return drop(w, ctx); };
  Tensor attended = scaled_dot_product_attention(q, k, v, &keep, weight_drop);
  Tensor merged = reshape(transpose(attended, {0, 2, 1, 3}), {b, tq, dims_.d_model});
  return project(merged, "wo", "bo");
}

Tensor ModelView::feed_forward(const Tensor& x, const std::string& prefix, ForwardContext& ctx) const {
  Tensor hidden = relu(add(matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
  hidden = drop(hidden, ctx);
  return add(matmul(hidden, param(prefix + ".w2")), param(prefix + ".b2"));
}

Tensor ModelView::norm_sublayer(const Tensor& x, const SublayerFn& f, const std::string& ln, ForwardContext& ctx) const {
  return sublayer_forward(x, f, dims_.norm_style, param(ln + ".g"), param(ln + ".b"),
                          [&](const Tensor& t) { return drop(t, ctx); });
}

Tensor ModelView::encode(const TokenMatrix& src, ForwardContext& ctx) const {
  Tensor x = embed(src, ctx);
  const Tensor keep = key_keep_mask(src);
  for (int layer : encoder_.layers) {
    const std::string base = param_name::encoder_layer(layer);
    x = norm_sublayer(x, [&](const Tensor& h) { return attention(h, h, keep, base + ".attn", ctx); },
                      base + ".ln_attn", ctx);
    x = norm_sublayer(x, [&](const Tensor& h) { return feed_forward(h, base + ".ffn", ctx); }, base + ".ln_ffn", ctx);
  }
  if (!encoder_.final_norm.empty()) {
    x = layer_norm(x, param(encoder_.final_norm + ".g"), param(encoder_.final_norm + ".b"), kLayerNormEps);
  }
  return x;
}

Tensor ModelView::decode_logits(const TokenMatrix& tgt_in, const Tensor& enc_out, const TokenMatrix& src,
                                ForwardContext& ctx) const {
  if (enc_out.rank() != 3 || enc_out.dim(-1) != dims_.d_model) {
    throw ShapeError("decode: encoder output " + to_string(enc_out.shape()) + " does not end in d_model=" +
                     std::to_string(dims_.d_model));
  }
  if (enc_out.dim(0) != tgt_in.rows || enc_out.dim(1) != src.cols) {
    throw ShapeError("decode: encoder output " + to_string(enc_out.shape()) + " does not match batch " +
                     to_string(tgt_in.shape()) + " / source " + to_string(src.shape()));
  }
  Tensor y = embed(tgt_in, ctx);
  const Tensor causal = causal_keep_mask(tgt_in.cols);
  const Tensor src_keep = key_keep_mask(src);
  for (int layer : decoder_.layers) {
    const std::string base = param_name::decoder_layer(layer);
    y = norm_sublayer(y, [&](const Tensor& h) { return attention(h, h, causal, base + ".self_attn", ctx); },
                      base + ".ln_self", ctx);
    y = norm_sublayer(y, [&](const Tensor& h) { return attention(h, enc_out, src_keep, base + ".cross_attn", ctx); },
                      base + ".ln_cross", ctx);
    y = norm_sublayer(y, [&](const Tensor& h) { return feed_forward(h, base + ".ffn", ctx); }, base + ".ln_ffn", ctx);
  }
  if (!decoder_.final_norm.empty()) {
    y = layer_norm(y, param(decoder_.final_norm + ".g"), param(decoder_.final_norm + ".b"), kLayerNormEps);
  }
  return add(matmul(y, param(param_name::kOutput + ".w")), param(param_name::kOutput + ".b"));
}

Tensor ModelView::forward(const TokenMatrix& src, const TokenMatrix& tgt_in, ForwardContext& ctx) const {
  if (src.rows != tgt_in.rows) throw ShapeError("forward: source and target batch sizes differ");
  return decode_logits(tgt_in, encode(src, ctx), src, ctx);
}

Tensor ModelView::log_prob_of_target(const TokenMatrix& src, const TokenMatrix& tgt_in, const TokenMatrix& tgt_out,
                                     ForwardContext& ctx) const {
  return sequence_log_prob(forward(src, tgt_in, ctx), tgt_out);
}

}  // namespace symb
