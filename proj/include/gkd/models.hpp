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
#include <span>
#include <string>
#include <vector>

#include "gkd/params.hpp"
#include "gkd/tensor.hpp"

namespace gkd::models {

struct EncoderConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t depth = 4;
  std::size_t dim = 32;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;

  // Throws ValidationError.
  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
  std::size_t mlp_dim() const;

  static EncoderConfig teacher_default();
  static EncoderConfig student_default();

  bool operator==(const EncoderConfig&) const = default;
};

// Pre-norm ViT: patch projection, CLS token, learned positions, `depth`
// attention/MLP blocks and a final LayerNorm.
struct Encoder {
  EncoderConfig config;
  ParamSet params;
};

// Patch positions replaced by the learned mask token. The CLS token is never
// masked.
struct MaskSpec {
  double ratio = 0.0;
  std::vector<std::size_t> indices;  // sorted, unique, each < N
  std::uint64_t seed = 0;
};

struct EncoderOutput {
  ad::Tensor cls;     // [B, 1, C]
  ad::Tensor tokens;  // [B, N, C]
};

// Weights ~ truncated normal (std 0.02); biases 0, LayerNorm gains 1, CLS and
// mask tokens 0.
Encoder init_encoder(const EncoderConfig& config, std::uint64_t seed);

// images: [B, 3, H, W]. `masks` is empty (no masking), a single spec shared by
// the batch, or one spec per image.
EncoderOutput encode(const Encoder& encoder, const ad::Tensor& images,
                     std::span<const MaskSpec> masks = {});

// [B, 3, H, W] -> [B, N, 3*p*p], channel-major inside each patch. The result
// carries no gradient history.
ad::Tensor patchify(const ad::Tensor& images, std::size_t patch_size);

// Uniform draw of ceil(ratio * n_tokens) distinct positions.
MaskSpec sample_mask(std::size_t n_tokens, double ratio, std::uint64_t seed);

// Per-token linear classifier followed by bilinear upsampling to pixels.
struct Decoder {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::size_t grid = 0;
  std::size_t image_size = 0;
  ParamSet params;
};

Decoder init_decoder(std::size_t dim, std::size_t classes, std::size_t grid,
                     std::size_t image_size, std::uint64_t seed);

// tokens [B, N, C] -> logits [B, K, H, W].
ad::Tensor decode(const Decoder& decoder, const ad::Tensor& tokens);

// Per-pixel argmax of [B, K, H, W] logits, B*H*W labels in row-major order.
std::vector<std::uint8_t> argmax_labels(const ad::Tensor& logits);

}  // namespace gkd::models
