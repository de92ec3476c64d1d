// Copyright (c) 2026 The GKD Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gkd/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "gkd/errors.hpp"

namespace gkd::io {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::string_view Reader::take(std::size_t n) {
  if (n > bytes_.size() - pos_) throw IoError("truncated record: wanted " + std::to_string(n) + " bytes");
  auto s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::uint8_t Reader::u8() { return static_cast<std::uint8_t>(take(1)[0]); }

std::uint32_t Reader::u32() {
  const auto s = take(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[static_cast<std::size_t>(i)]);
  return v;
}

std::uint64_t Reader::u64() {
  const auto s = take(8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[static_cast<std::size_t>(i)]);
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string serialize_tensors(const std::vector<NamedTensor>& tensors) {
  std::string out = "GKDC";
  put_u32(out, kCheckpointVersion);
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_u64(out, e);
    for (double v : t.values()) put_f64(out, v);
  }
  return out;
}

std::vector<NamedTensor> deserialize_tensors(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != "GKDC") throw IoError("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.u64();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.u32();
    std::string name(r.take(len));
    const auto rank = r.u32();
    ad::Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    std::vector<double> values(ad::numel(shape));
    for (auto& v : values) v = r.f64();
    out.emplace_back(std::move(name), ad::Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint payload");
  return out;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file(path, serialize_tensors(tensors));
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  return deserialize_tensors(read_file(path));
}

void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const ParamSet& params) {
  for (const auto& [name, t] : params.items()) out.emplace_back(prefix + name, t.detach());
}

void append_encoder(std::vector<NamedTensor>& out, const std::string& prefix,
                    const models::Encoder& enc) {
  const auto& c = enc.config;
  out.emplace_back(prefix + "meta",
                   ad::Tensor({6}, {double(c.image_size), double(c.patch_size), double(c.depth),
                                    double(c.dim), double(c.heads), c.mlp_ratio}));
  append_params(out, prefix, enc.params);
}

void append_decoder(std::vector<NamedTensor>& out, const std::string& prefix,
                    const models::Decoder& dec) {
  out.emplace_back(prefix + "meta", ad::Tensor({4}, {double(dec.dim), double(dec.classes),
                                                     double(dec.grid), double(dec.image_size)}));
  append_params(out, prefix, dec.params);
}

bool has_prefix(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  for (const auto& [name, t] : tensors) {
    if (name.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

ParamSet extract_params(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  ParamSet p;
  for (const auto& [name, t] : tensors) {
    if (name.rfind(prefix, 0) != 0) continue;
    auto rest = name.substr(prefix.size());
    if (rest == "meta") continue;
    p.add(rest, t.detach());
  }
  return p;
}

namespace {

const ad::Tensor& find(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw IoError("checkpoint has no tensor '" + name + "'");
}

}  // namespace

models::Encoder extract_encoder(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  const auto meta = find(tensors, prefix + "meta").values();
  if (meta.size() != 6) throw IoError("bad encoder meta in checkpoint");
  models::EncoderConfig cfg{static_cast<std::size_t>(meta[0]), static_cast<std::size_t>(meta[1]),
                            static_cast<std::size_t>(meta[2]), static_cast<std::size_t>(meta[3]),
                            static_cast<std::size_t>(meta[4]), meta[5]};
  cfg.validate();
  models::Encoder enc = models::init_encoder(cfg, 0);
  enc.params.assign(extract_params(tensors, prefix));
  return enc;
}

models::Decoder extract_decoder(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  const auto meta = find(tensors, prefix + "meta").values();
  if (meta.size() != 4) throw IoError("bad decoder meta in checkpoint");
  models::Decoder dec = models::init_decoder(
      static_cast<std::size_t>(meta[0]), static_cast<std::size_t>(meta[1]),
      static_cast<std::size_t>(meta[2]), static_cast<std::size_t>(meta[3]), 0);
  dec.params.assign(extract_params(tensors, prefix));
  return dec;
}

}  // namespace gkd::io
