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

#include "symbiosis/checkpoint.hpp"

#include <openssl/sha.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace symb {

namespace detail {

void ByteWriter::bytes(const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out_.insert(out_.end(), b, b + n);
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

const std::uint8_t* ByteReader::need(std::size_t n) {
  if (in_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated data at byte " + std::to_string(pos_));
  const std::uint8_t* p = in_.data() + pos_;
  pos_ += n;
  return p;
}

void ByteReader::expect_magic(const std::string& magic) {
  const std::uint8_t* p = need(magic.size());
  if (std::memcmp(p, magic.data(), magic.size()) != 0) {
    throw CheckpointError("checkpoint: bad magic (expected \"" + magic + "\")");
  }
}

std::uint32_t ByteReader::u32() {
  const std::uint8_t* p = need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  const std::uint8_t* p = need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  const std::uint8_t* p = need(n);
  return std::string(reinterpret_cast<const char*>(p), n);
}

}  // namespace detail

namespace {
constexpr const char* kMagic = "SYMB1";
}

std::vector<std::uint8_t> encode_checkpoint(const ModelDims& dims, const ParameterStore& params) {
  detail::ByteWriter w;
  w.bytes(kMagic, 5);
  w.u32(static_cast<std::uint32_t>(dims.d_model));
  w.u32(static_cast<std::uint32_t>(dims.n_heads));
  w.u32(static_cast<std::uint32_t>(dims.d_ffn));
  w.u32(static_cast<std::uint32_t>(dims.vocab_size));
  w.u32(static_cast<std::uint32_t>(dims.max_len));
  w.u32(dims.norm_style == NormStyle::kPre ? 0u : 1u);
  w.f64(dims.dropout);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kMagic);
  Checkpoint ck;
  ck.dims.d_model = static_cast<int>(r.u32());
  ck.dims.n_heads = static_cast<int>(r.u32());
  ck.dims.d_ffn = static_cast<int>(r.u32());
  ck.dims.vocab_size = static_cast<int>(r.u32());
  ck.dims.max_len = static_cast<int>(r.u32());
  const std::uint32_t style = r.u32();
  if (style > 1) throw CheckpointError("checkpoint: unknown norm style " + std::to_string(style));
  ck.dims.norm_style = style == 0 ? NormStyle::kPre : NormStyle::kPost;
  ck.dims.dropout = r.f64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.u32());
    std::vector<double> values(static_cast<std::size_t>(numel(shape)));
    for (auto& v : values) v = r.f32();
    ck.params.add(name, Tensor::from(std::move(shape), std::move(values), true));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after the last record");
  return ck;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const ModelDims& dims, const ParameterStore& params) {
  write_file_atomic(path, encode_checkpoint(dims, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void require_same_schema(const ParameterStore& a, const ParameterStore& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end() && ib != b.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      throw CheckpointError("schema mismatch at parameter '" + std::min(ia->first, ib->first) +
                            "' (present in only one checkpoint)");
    }
    if (ia->second.shape() != ib->second.shape()) {
      throw CheckpointError("schema mismatch at parameter '" + ia->first + "': shape " +
                            to_string(ia->second.shape()) + " vs " + to_string(ib->second.shape()));
    }
  }
  if (ia != a.end()) throw CheckpointError("schema mismatch at parameter '" + ia->first + "' (missing)");
  if (ib != b.end()) throw CheckpointError("schema mismatch at parameter '" + ib->first + "' (unexpected)");
}

void assign_parameters(ParameterStore& dst, const ParameterStore& src) {
  require_same_schema(dst, src);
  for (const auto& name : dst.names()) {
    auto out = dst.at(name).mutable_data();
    auto in = src.at(name).data();
    std::copy(in.begin(), in.end(), out.begin());
  }
}

std::string sha1_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(bytes.data(), bytes.size(), digest);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out += hex[c >> 4];
    out += hex[c & 15];
  }
  return out;
}

}  // namespace symb
