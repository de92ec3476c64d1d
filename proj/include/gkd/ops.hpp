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
#include <vector>

#include "gkd/tensor.hpp"

namespace gkd::ad {

// Elementwise with numpy-style broadcasting (trailing alignment, extents equal
// or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// [.., M, K] x [.., K, P] -> [.., M, P]. Batch extents must agree or be 1; a
// rank-2 right operand is shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);
// x[.., K] * weight[K, P] + bias[P].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, Shape shape);
Tensor broadcast_to(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);
// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-6);
// Exact form x * Phi(x).
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);

// Mean negative log-likelihood of the labelled class over rows whose label
// is not `ignore_index`. Zero (with zero gradient) when every row is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels,
                     std::int32_t ignore_index);

// x[B, N, C]: rows listed in rows_per_batch[b] are replaced by `token` (C
// values, any shape). A single row list applies to every batch entry.
Tensor replace_rows(const Tensor& x,
                    const std::vector<std::vector<std::size_t>>& rows_per_batch,
                    const Tensor& token);

// x[B, C, h, w] -> [B, C, H, W], half-pixel centres, edge clamped.
Tensor bilinear_upsample(const Tensor& x, std::size_t height, std::size_t width);

}  // namespace gkd::ad
