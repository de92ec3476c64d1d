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

#include "gkd/errors.hpp"
#include "gkd/models.hpp"
#include "gkd/ops.hpp"
#include "gkd/random.hpp"

namespace gkd::models {

using ad::Tensor;

Decoder init_decoder(std::size_t dim, std::size_t classes, std::size_t grid,
                     std::size_t image_size, std::uint64_t seed) {
  if (dim == 0 || classes == 0 || grid == 0 || image_size == 0) {
    throw ValidationError("decoder: extents must be positive");
  }
  Rng rng(derive_seed({seed, 0x444543ULL}));
  std::vector<double> w(dim * classes);
  for (auto& v : w) v = rng.truncated_normal(0.02);
  Decoder dec{dim, classes, grid, image_size, {}};
  dec.params.add("head.weight", Tensor({dim, classes}, std::move(w)));
  dec.params.add("head.bias", Tensor({classes}));
  return dec;
}

Tensor decode(const Decoder& dec, const Tensor& tokens) {
  if (tokens.rank() != 3 || tokens.dim(1) != dec.grid * dec.grid || tokens.dim(2) != dec.dim) {
    throw DimensionError("decode: expected [B," + std::to_string(dec.grid * dec.grid) + "," +
                         std::to_string(dec.dim) + "], got " + ad::shape_str(tokens.shape()));
  }
  const std::size_t b = tokens.dim(0);
  Tensor logits = ad::linear(tokens, dec.params.get("head.weight"), dec.params.get("head.bias"));
  logits = ad::permute(ad::reshape(logits, {b, dec.grid, dec.grid, dec.classes}), {0, 3, 1, 2});
  return ad::bilinear_upsample(logits, dec.image_size, dec.image_size);
}

std::vector<std::uint8_t> argmax_labels(const Tensor& logits) {
  if (logits.rank() != 4) {
    throw DimensionError("argmax_labels: expected [B,K,H,W], got " + ad::shape_str(logits.shape()));
  }
  const std::size_t b = logits.dim(0);
  const std::size_t k = logits.dim(1);
  const std::size_t hw = logits.dim(2) * logits.dim(3);
  const auto v = logits.values();
  std::vector<std::uint8_t> out(b * hw);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (v[(n * k + c) * hw + i] > v[(n * k + best) * hw + i]) best = c;
      }
      out[n * hw + i] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace gkd::models
