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
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "symbiosis/model.hpp"

namespace symb {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelDims dims;
  ParameterStore params;
};

// Layout (little-endian):
//   "SYMB1"
//   u32 d_model, n_heads, d_ffn, vocab_size, max_len, norm_style; f64 dropout
//   u32 record count
//   per record: u32 name length, name bytes, u32 rank, u32 dims[rank],
//               f32 payload[prod(dims)]
// Records are written in name order.
std::vector<std::uint8_t> encode_checkpoint(const ModelDims& dims, const ParameterStore& params);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const ModelDims& dims, const ParameterStore& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies values from `src` into the same-named tensors of `dst`; shapes and
// name sets must match exactly.
void assign_parameters(ParameterStore& dst, const ParameterStore& src);

// Throws CheckpointError naming the first parameter whose name or shape
// differs.
void require_same_schema(const ParameterStore& a, const ParameterStore& b);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Hex SHA-1 of a byte string.
std::string sha1_hex(const std::vector<std::uint8_t>& bytes);

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(const std::string& s);
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void expect_magic(const std::string& magic);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::uint8_t* need(std::size_t n);
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

}  // namespace symb
