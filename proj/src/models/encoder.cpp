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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gkd/errors.hpp"
#include "gkd/models.hpp"
#include "gkd/ops.hpp"
#include "gkd/random.hpp"

namespace gkd::models {

using ad::Tensor;

void EncoderConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || heads == 0 || dim == 0) {
    throw ValidationError("encoder config: extents must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ValidationError("encoder config: image_size " + std::to_string(image_size) +
                          " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (dim % heads != 0) {
    throw ValidationError("encoder config: dim " + std::to_string(dim) +
                          " not divisible by heads " + std::to_string(heads));
  }
  if (!(mlp_ratio > 0.0) || mlp_dim() == 0) {
    throw ValidationError("encoder config: mlp_ratio must be positive");
  }
}

std::size_t EncoderConfig::mlp_dim() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(dim) * mlp_ratio));
}

EncoderConfig EncoderConfig::teacher_default() { return {64, 8, 6, 64, 4, 4.0}; }
EncoderConfig EncoderConfig::student_default() { return {64, 8, 4, 32, 4, 4.0}; }

namespace {

Tensor trunc_normal(ad::Shape shape, Rng& rng) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.truncated_normal(0.02);
  return Tensor(std::move(shape), std::move(v));
}

std::string block_name(std::size_t i, const char* leaf) {
  return "blocks." + std::to_string(i) + "." + leaf;
}

Tensor attention(const Tensor& x, const ParamSet& p, std::size_t block, std::size_t heads) {
  const std::size_t b = x.dim(0);
  const std::size_t t = x.dim(1);
  const std::size_t c = x.dim(2);
  const std::size_t d = c / heads;
  Tensor qkv = ad::linear(x, p.get(block_name(block, "attn.qkv.weight")),
                          p.get(block_name(block, "attn.qkv.bias")));
  qkv = ad::permute(ad::reshape(qkv, {b, t, 3, heads, d}), {2, 0, 3, 1, 4});
  auto part = [&](std::size_t i) { return ad::reshape(ad::slice(qkv, 0, i, 1), {b, heads, t, d}); };
  const Tensor q = part(0);
  const Tensor k = part(1);
  const Tensor v = part(2);
  Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor mixed = ad::matmul(ad::softmax(scores, -1), v);
  mixed = ad::reshape(ad::permute(mixed, {0, 2, 1, 3}), {b, t, c});
  return ad::linear(mixed, p.get(block_name(block, "attn.proj.weight")),
                    p.get(block_name(block, "attn.proj.bias")));
}

Tensor transformer_block(const Tensor& x, const ParamSet& p, std::size_t i, std::size_t heads) {
  Tensor h = ad::layer_norm(x, p.get(block_name(i, "norm1.gain")), p.get(block_name(i, "norm1.bias")));
  Tensor y = ad::add(x, attention(h, p, i, heads));
  h = ad::layer_norm(y, p.get(block_name(i, "norm2.gain")), p.get(block_name(i, "norm2.bias")));
  h = ad::gelu(ad::linear(h, p.get(block_name(i, "mlp.fc1.weight")), p.get(block_name(i, "mlp.fc1.bias"))));
  h = ad::linear(h, p.get(block_name(i, "mlp.fc2.weight")), p.get(block_name(i, "mlp.fc2.bias")));
  return ad::add(y, h);
}

}  // namespace

Encoder init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed({seed, 0x454e43ULL}));
  const std::size_t c = config.dim;
  const std::size_t m = config.mlp_dim();
  Encoder enc{config, {}};
  auto& p = enc.params;
  p.add("patch_embed.weight", trunc_normal({config.patch_dim(), c}, rng));
  p.add("patch_embed.bias", Tensor({c}));
  p.add("cls_token", Tensor({1, 1, c}));
  p.add("mask_token", Tensor({1, 1, c}));
  p.add("pos_embed", trunc_normal({1, config.num_patches() + 1, c}, rng));
  for (std::size_t i = 0; i < config.depth; ++i) {
    p.add(block_name(i, "norm1.gain"), Tensor::full({c}, 1.0));
    p.add(block_name(i, "norm1.bias"), Tensor({c}));
    p.add(block_name(i, "attn.qkv.weight"), trunc_normal({c, 3 * c}, rng));
    p.add(block_name(i, "attn.qkv.bias"), Tensor({3 * c}));
    p.add(block_name(i, "attn.proj.weight"), trunc_normal({c, c}, rng));
    p.add(block_name(i, "attn.proj.bias"), Tensor({c}));
    p.add(block_name(i, "norm2.gain"), Tensor::full({c}, 1.0));
    p.add(block_name(i, "norm2.bias"), Tensor({c}));
    p.add(block_name(i, "mlp.fc1.weight"), trunc_normal({c, m}, rng));
    p.add(block_name(i, "mlp.fc1.bias"), Tensor({m}));
    p.add(block_name(i, "mlp.fc2.weight"), trunc_normal({m, c}, rng));
    p.add(block_name(i, "mlp.fc2.bias"), Tensor({c}));
  }
  p.add("norm.gain", Tensor::full({c}, 1.0));
  p.add("norm.bias", Tensor({c}));
  return enc;
}

Tensor patchify(const Tensor& images, std::size_t patch) {
  if (images.rank() != 4 || images.dim(1) != 3) {
    throw DimensionError("patchify: expected [B,3,H,W], got " + ad::shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0);
  const std::size_t h = images.dim(2);
  const std::size_t w = images.dim(3);
  if (h % patch != 0 || w % patch != 0) {
    throw DimensionError("patchify: image " + ad::shape_str(images.shape()) +
                         " not divisible by patch " + std::to_string(patch));
  }
  const std::size_t gy = h / patch;
  const std::size_t gx = w / patch;
  const std::size_t pd = 3 * patch * patch;
  std::vector<double> out(b * gy * gx * pd);
  const auto src = images.values();
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t py = 0; py < gy; ++py) {
      for (std::size_t px = 0; px < gx; ++px) {
        double* dst = out.data() + ((n * gy + py) * gx + px) * pd;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          for (std::size_t y = 0; y < patch; ++y) {
            const double* row = src.data() + ((n * 3 + ch) * h + py * patch + y) * w + px * patch;
            std::copy(row, row + patch, dst + (ch * patch + y) * patch);
          }
        }
      }
    }
  }
  return Tensor({b, gy * gx, pd}, std::move(out));
}

EncoderOutput encode(const Encoder& enc, const Tensor& images, std::span<const MaskSpec> masks) {
  const auto& cfg = enc.config;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size) {
    throw DimensionError("encode: expected [B,3," + std::to_string(cfg.image_size) + "," +
                         std::to_string(cfg.image_size) + "], got " + ad::shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0);
  const std::size_t n = cfg.num_patches();
  const std::size_t c = cfg.dim;
  const auto& p = enc.params;

  Tensor x = ad::linear(patchify(images, cfg.patch_size), p.get("patch_embed.weight"),
                        p.get("patch_embed.bias"));
  if (!masks.empty()) {
    if (masks.size() != 1 && masks.size() != b) {
      throw DimensionError("encode: " + std::to_string(masks.size()) + " masks for batch " +
                           std::to_string(b));
    }
    std::vector<std::vector<std::size_t>> rows;
    bool any = false;
    for (const auto& m : masks) {
      for (auto i : m.indices) {
        if (i >= n) throw ValidationError("encode: mask index " + std::to_string(i) + " >= " + std::to_string(n));
      }
      any = any || !m.indices.empty();
      rows.push_back(m.indices);
    }
    if (any) x = ad::replace_rows(x, rows, p.get("mask_token"));
  }
  const Tensor cls = ad::broadcast_to(p.get("cls_token"), {b, 1, c});
  x = ad::add(ad::concat({cls, x}, 1), p.get("pos_embed"));
  for (std::size_t i = 0; i < cfg.depth; ++i) x = transformer_block(x, p, i, cfg.heads);
  x = ad::layer_norm(x, p.get("norm.gain"), p.get("norm.bias"));
  return {ad::slice(x, 1, 0, 1), ad::slice(x, 1, 1, n)};
}

MaskSpec sample_mask(std::size_t n_tokens, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ValidationError("sample_mask: ratio must lie in (0,1), got " + std::to_string(ratio));
  }
  if (n_tokens == 0) throw ValidationError("sample_mask: no tokens");
  const auto count = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n_tokens) - 1e-9));
  std::vector<std::size_t> pool(n_tokens);
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(derive_seed({seed, 0x4d41534bULL}));
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(rng.integer(i, n_tokens - 1));
    std::swap(pool[i], pool[j]);
  }
  MaskSpec spec{ratio, {pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count)}, seed};
  std::sort(spec.indices.begin(), spec.indices.end());
  return spec;
}

}  // namespace gkd::models
