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
#include "symbiosis/checkpoint.hpp"
#include "test_util.hpp"

#include <filesystem>

using namespace symb;
using namespace symb::testing;

TEST_CASE("checkpoint round trip is bit-exact") {
  ModelDims dims = toy_dims();
  dims.dropout = 0.1;
  dims.norm_style = NormStyle::kPost;
  auto params = init_parameters(dims, 2, 1, 4);
  auto bytes = encode_checkpoint(dims, params);
  CHECK(std::string(bytes.begin(), bytes.begin() + 5) == "SYMB1");
  auto ck = decode_checkpoint(bytes);
  CHECK(ck.dims == dims);
  CHECK(ck.params.names() == params.names());
  for (const auto& [name, t] : params) {
    CHECK(ck.params.at(name).shape() == t.shape());
    CHECK(max_abs_diff(ck.params.at(name).data(), t.data()) == 0.0);
  }
  CHECK(encode_checkpoint(ck.dims, ck.params) == bytes);

  auto path = std::filesystem::temp_directory_path() / "symb_roundtrip.symb";
  save_checkpoint(path, dims, params);
  CHECK(read_file(path) == bytes);
  auto loaded = load_checkpoint(path);
  CHECK(encode_checkpoint(loaded.dims, loaded.params) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("records are little-endian float32") {
  ParameterStore p;
  p.add("x", Tensor::from({2}, {1.0, -2.5}));
  auto bytes = encode_checkpoint(toy_dims(), p);
  // Tail: name "x", rank 1, dim 2, 1.0f, -2.5f.
  const std::vector<std::uint8_t> tail{1, 0, 0, 0, 'x', 1, 0, 0, 0, 2, 0, 0, 0,
                                       0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0};
  REQUIRE(bytes.size() > tail.size());
  CHECK(std::vector<std::uint8_t>(bytes.end() - static_cast<std::ptrdiff_t>(tail.size()), bytes.end()) == tail);
}

TEST_CASE("64-bit values are stored as float32") {
  ParameterStore p;
  p.add("x", Tensor::from({1}, {0.1}));
  auto ck = decode_checkpoint(encode_checkpoint(toy_dims(), p));
  CHECK(ck.params.at("x")[0] == static_cast<double>(0.1f));
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto bytes = encode_checkpoint(toy_dims(), init_parameters(toy_dims(), 1, 1, 1));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad), doctest::Contains("magic"), CheckpointError);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_WITH_AS(decode_checkpoint(cut), doctest::Contains("truncated"), CheckpointError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(extra), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.symb"), CheckpointError);
}

TEST_CASE("schema checks name the first differing parameter") {
  auto a = init_parameters(toy_dims(), 2, 1, 1);
  auto b = init_parameters(toy_dims(), 1, 1, 1);
  CHECK_THROWS_WITH_AS(require_same_schema(a, b), doctest::Contains("enc.layer.1"), CheckpointError);
  auto c = init_parameters(toy_dims(16), 2, 1, 1);
  CHECK_THROWS_WITH_AS(require_same_schema(a, c), doctest::Contains("embed"), CheckpointError);

  auto d = init_parameters(toy_dims(), 2, 1, 9);
  assign_parameters(d, a);
  for (const auto& [name, t] : a) CHECK(max_abs_diff(d.at(name).data(), t.data()) == 0.0);
}

TEST_CASE("sha1") {
  const std::string abc = "abc";
  CHECK(sha1_hex(std::vector<std::uint8_t>(abc.begin(), abc.end())) == "a9993e364706816aba3e25717850c26c9cd0d89d");
}
