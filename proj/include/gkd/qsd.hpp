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

#include "gkd/params.hpp"
#include "gkd/tensor.hpp"

// Query-based soft distillation.
//
// Student tokens, projected to the teacher width, act as queries against the
// teacher tokens:
//
//   W   = phi(v_s) . v_t^T                      [B, N, N]
//   v'_s = softmax_row(W / temperature) . psi(v_s)  [B, N, C_t]
//
// and the reconstruction is regressed onto v_t. Teacher tensors are always
// treated as constants; no gradient flows into them.
namespace gkd::qsd {

// Trainable projections C_s -> C_t. Parameter names: phi.*, psi.* for the
// patch path and phi_cls.*, psi_cls.* for the CLS path.
struct QsdHead {
  std::size_t student_dim = 0;
  std::size_t teacher_dim = 0;
  ParamSet params;
};

QsdHead init_qsd_head(std::size_t student_dim, std::size_t teacher_dim, std::uint64_t seed);

struct QsdOptions {
  double temperature = 1.0;
  // When set, the CLS query attends over the teacher's CLS + patch tokens
  // instead of the single teacher CLS token.
  bool cls_attend_all = false;
};

struct QsdWeights {
  double alpha = 1.0;  // feature term
  double beta = 1.0;   // masked-feature term
  double gamma = 1.0;  // CLS term
  // Throws ValidationError on negative or non-finite weights.
  void validate() const;
};

ad::Tensor attention_map(const QsdHead& head, const ad::Tensor& v_s, const ad::Tensor& v_t);
ad::Tensor reconstruct(const QsdHead& head, const ad::Tensor& v_s, const ad::Tensor& v_t,
                       double temperature = 1.0);

ad::Tensor loss_feat(const QsdHead& head, const ad::Tensor& v_s, const ad::Tensor& v_t,
                     double temperature = 1.0);
ad::Tensor loss_mask(const QsdHead& head, const ad::Tensor& v_s_mask, const ad::Tensor& v_t,
                     double temperature = 1.0);
// Single-token reconstruction: the softmax over one key is exactly 1, so the
// reconstruction equals psi_cls(v_s_cls).
ad::Tensor loss_cls(const QsdHead& head, const ad::Tensor& v_s_cls, const ad::Tensor& v_t_cls);
ad::Tensor loss_cls_attend_all(const QsdHead& head, const ad::Tensor& v_s_cls,
                               const ad::Tensor& v_s_tokens, const ad::Tensor& v_t_cls,
                               const ad::Tensor& v_t_tokens, double temperature = 1.0);

struct StudentFeatures {
  ad::Tensor cls;            // [B, 1, C_s]
  ad::Tensor tokens;         // [B, N, C_s]
  ad::Tensor tokens_masked;  // [B, N, C_s]; may be undefined when beta == 0
};

struct TeacherFeatures {
  ad::Tensor cls;     // [B, 1, C_t]
  ad::Tensor tokens;  // [B, N, C_t]
};

struct QsdLoss {
  ad::Tensor total;
  // Individual terms; undefined when the matching weight is zero.
  ad::Tensor feat;
  ad::Tensor mask;
  ad::Tensor cls;
};

// alpha * L_feat + beta * L_mask + gamma * L_cls. Terms with zero weight are
// not evaluated.
QsdLoss loss_qsd(const QsdHead& head, const StudentFeatures& student,
                 const TeacherFeatures& teacher, const QsdWeights& weights = {},
                 const QsdOptions& options = {});

}  // namespace gkd::qsd
