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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gkd/models.hpp"
#include "gkd/params.hpp"

// Named-tensor checkpoint file, all integers little-endian:
//
//   "GKDC"                     4 bytes
//   version                    u32 (= 1)
//   tensor count               u64
//   per tensor:
//     name length              u32, then UTF-8 name bytes
//     rank                     u32
//     extents                  rank x u64
//     values                   numel x f64
namespace gkd::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> deserialize_tensors(std::string_view bytes);

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

// Model <-> named tensors. Each model contributes "<prefix>meta" (its config
// as doubles) followed by its parameters under "<prefix><name>".
void append_encoder(std::vector<NamedTensor>& out, const std::string& prefix,
                    const models::Encoder& encoder);
void append_decoder(std::vector<NamedTensor>& out, const std::string& prefix,
                    const models::Decoder& decoder);
void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const ParamSet& params);

models::Encoder extract_encoder(const std::vector<NamedTensor>& tensors, const std::string& prefix);
models::Decoder extract_decoder(const std::vector<NamedTensor>& tensors, const std::string& prefix);
ParamSet extract_params(const std::vector<NamedTensor>& tensors, const std::string& prefix);
bool has_prefix(const std::vector<NamedTensor>& tensors, const std::string& prefix);

// Raw little-endian helpers shared with the corpus format.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string_view take(std::size_t n);
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace gkd::io
