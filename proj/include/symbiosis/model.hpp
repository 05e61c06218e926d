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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "symbiosis/tensor.hpp"

namespace symb {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

// Row-major [rows, cols] matrix of token ids, padded with kPadId.
struct TokenMatrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<int> ids;

  TokenMatrix() = default;
  TokenMatrix(std::int64_t r, std::int64_t c) : rows(r), cols(c), ids(static_cast<std::size_t>(r * c), kPadId) {}
  static TokenMatrix from_rows(const std::vector<std::vector<int>>& rows);

  int at(std::int64_t r, std::int64_t c) const { return ids[static_cast<std::size_t>(r * cols + c)]; }
  int& at(std::int64_t r, std::int64_t c) { return ids[static_cast<std::size_t>(r * cols + c)]; }
  Shape shape() const { return {rows, cols}; }
  std::vector<int> row(std::int64_t r) const;  // without trailing pads
  bool operator==(const TokenMatrix&) const = default;
};

enum class NormStyle { kPre, kPost };

struct ModelDims {
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 256;
  int vocab_size = 64;
  int max_len = 64;
  double dropout = 0.1;
  NormStyle norm_style = NormStyle::kPre;

  int d_k() const { return d_model / n_heads; }
  int d_v() const { return d_model / n_heads; }
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

// Named trainable tensors. Two stores may bind the same storage under the
// same name; that is how views share parameters.
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor>;

  void add(const std::string& name, Tensor t);
  void bind(const std::string& name, Tensor t);  // insert or replace
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t distinct_storage_count() const;
  std::int64_t element_count() const;  // over distinct storages
  void zero_grad();

  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

  // Deep copy: new storage for every tensor.
  ParameterStore clone() const;

 private:
  Map params_;
};

namespace param_name {
std::string encoder_layer(int layer);  // "enc.layer.<i>"
std::string decoder_layer(int layer);  // "dec.layer.<i>"
inline const std::string kEmbedding = "embed";
inline const std::string kEncoderFinalNorm = "enc.final_ln";
inline const std::string kDecoderFinalNorm = "dec.final_ln";
inline const std::string kOutput = "out";
}  // namespace param_name

// Ordered parameter-store layer indices that make up one stack. The final
// norm prefix is empty for post-norm stacks.
struct EncoderStack {
  std::vector<int> layers;
  std::string final_norm;
};

struct DecoderStack {
  std::vector<int> layers;
  std::string final_norm;
};

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;  // required when train is set and dropout > 0
};

using SublayerFn = std::function<Tensor(const Tensor&)>;

// softmax(Q K^T / sqrt(d_k)) V. `keep_mask` (1 keep, 0 masked) broadcasts to
// the score shape; masked scores receive an additive -1e9.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const Tensor* keep_mask = nullptr, const SublayerFn& weight_dropout = {});

// pre:  x + dropout(f(LN(x)))
// post: LN(x + dropout(f(x)))
Tensor sublayer_forward(const Tensor& x, const SublayerFn& f, NormStyle style, const Tensor& gain,
                        const Tensor& bias, const SublayerFn& drop = {});

Tensor sinusoidal_positions(std::int64_t length, int d_model);

// Causal [1, 1, T, T] keep mask.
Tensor causal_keep_mask(std::int64_t length);
// [B, 1, 1, N] keep mask marking non-pad source positions.
Tensor key_keep_mask(const TokenMatrix& tokens);

// Sum over non-pad positions of log softmax(logits)[target], per row: [B].
Tensor sequence_log_prob(const Tensor& logits, const TokenMatrix& targets);

// A runnable encoder-decoder over a set of parameter bindings.
class ModelView {
 public:
  ModelView() = default;
  ModelView(ModelDims dims, EncoderStack encoder, DecoderStack decoder, ParameterStore bindings);

  const ModelDims& dims() const { return dims_; }
  const EncoderStack& encoder() const { return encoder_; }
  const DecoderStack& decoder() const { return decoder_; }
  const ParameterStore& parameters() const { return bindings_; }
  ParameterStore& mutable_parameters() { return bindings_; }

  // [B, N] source ids -> [B, N, d_model].
  Tensor encode(const TokenMatrix& src, ForwardContext& ctx) const;
  // [B, T] shifted target ids -> [B, T, V] logits.
  Tensor decode_logits(const TokenMatrix& tgt_in, const Tensor& enc_out, const TokenMatrix& src,
                       ForwardContext& ctx) const;
  Tensor forward(const TokenMatrix& src, const TokenMatrix& tgt_in, ForwardContext& ctx) const;

  // log P(Y | X) per sentence, unsmoothed: [B].
  Tensor log_prob_of_target(const TokenMatrix& src, const TokenMatrix& tgt_in, const TokenMatrix& tgt_out,
                            ForwardContext& ctx) const;

 private:
  Tensor embed(const TokenMatrix& tokens, ForwardContext& ctx) const;
  Tensor attention(const Tensor& query_in, const Tensor& kv_in, const Tensor& keep, const std::string& prefix,
                   ForwardContext& ctx) const;
  Tensor feed_forward(const Tensor& x, const std::string& prefix, ForwardContext& ctx) const;
  Tensor norm_sublayer(const Tensor& x, const SublayerFn& f, const std::string& ln, ForwardContext& ctx) const;
  Tensor drop(const Tensor& x, ForwardContext& ctx) const;
  const Tensor& param(const std::string& name) const { return bindings_.at(name); }

  ModelDims dims_;
  EncoderStack encoder_;
  DecoderStack decoder_;
  ParameterStore bindings_;
};

// Creates and initializes every parameter for an encoder of `enc_depth`
// layers and a decoder of `dec_depth` layers from one seeded stream.
ParameterStore init_parameters(const ModelDims& dims, int enc_depth, int dec_depth, std::uint64_t seed);

// Names of all parameters of one encoder / decoder layer.
std::vector<std::string> encoder_layer_parameter_names(int layer);
std::vector<std::string> decoder_layer_parameter_names(int layer);

// Binds a view that runs the given encoder layers (in order) and the first
// `dec_depth` decoder layers of `store`.
ModelView make_view(const ModelDims& dims, const ParameterStore& store, const std::vector<int>& encoder_layers,
                    int dec_depth);

// Standalone model: fresh store, encoder layers 0..enc_depth-1.
ModelView build_model(const ModelDims& dims, int enc_depth, int dec_depth, std::uint64_t seed);

}  // namespace symb
