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

#include "gkd/qsd.hpp"

#include <cmath>

#include "gkd/errors.hpp"
#include "gkd/ops.hpp"
#include "gkd/random.hpp"

namespace gkd::qsd {

using ad::Tensor;

namespace {

Tensor constant(const Tensor& t) { return t.requires_grad() ? t.detach() : t; }

void check_pair(const QsdHead& head, const Tensor& v_s, const Tensor& v_t) {
  if (v_s.rank() != 3 || v_t.rank() != 3 || v_s.dim(0) != v_t.dim(0) || v_s.dim(1) != v_t.dim(1) ||
      v_s.dim(2) != head.student_dim || v_t.dim(2) != head.teacher_dim) {
    throw DimensionError("qsd: student " + ad::shape_str(v_s.shape()) + " / teacher " +
                         ad::shape_str(v_t.shape()) + " incompatible with head " +
                         std::to_string(head.student_dim) + "->" + std::to_string(head.teacher_dim));
  }
}

Tensor project(const QsdHead& head, const char* which, const Tensor& x) {
  const std::string name(which);
  return ad::linear(x, head.params.get(name + ".weight"), head.params.get(name + ".bias"));
}

// softmax(phi(q) . keys^T / temperature) . psi(values)
Tensor soft_reconstruct(const QsdHead& head, const char* phi, const char* psi, const Tensor& queries,
                        const Tensor& keys, const Tensor& values, double temperature) {
  Tensor w = ad::matmul(project(head, phi, queries), ad::transpose(constant(keys)));
  if (temperature != 1.0) w = ad::scale(w, 1.0 / temperature);
  return ad::matmul(ad::softmax(w, -1), project(head, psi, values));
}

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ValidationError("qsd: temperature must be positive, got " + std::to_string(t));
  }
}

}  // namespace

QsdHead init_qsd_head(std::size_t student_dim, std::size_t teacher_dim, std::uint64_t seed) {
  if (student_dim == 0 || teacher_dim == 0) throw ValidationError("qsd head: extents must be positive");
  Rng rng(derive_seed({seed, 0x515344ULL}));
  QsdHead head{student_dim, teacher_dim, {}};
  // Default linear-layer init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
  const double bound = 1.0 / std::sqrt(static_cast<double>(student_dim));
  for (const char* name : {"phi", "psi", "phi_cls", "psi_cls"}) {
    std::vector<double> w(student_dim * teacher_dim), b(teacher_dim);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    for (auto& v : b) v = rng.uniform(-bound, bound);
    head.params.add(std::string(name) + ".weight", Tensor({student_dim, teacher_dim}, std::move(w)));
    head.params.add(std::string(name) + ".bias", Tensor({teacher_dim}, std::move(b)));
  }
  return head;
}

void QsdWeights::validate() const {
  for (double w : {alpha, beta, gamma}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ValidationError("qsd: loss weights must be finite and nonnegative");
    }
  }
}

Tensor attention_map(const QsdHead& head, const Tensor& v_s, const Tensor& v_t) {
  check_pair(head, v_s, v_t);
  return ad::matmul(project(head, "phi", v_s), ad::transpose(constant(v_t)));
}

Tensor reconstruct(const QsdHead& head, const Tensor& v_s, const Tensor& v_t, double temperature) {
  check_pair(head, v_s, v_t);
  check_temperature(temperature);
  return soft_reconstruct(head, "phi", "psi", v_s, v_t, v_s, temperature);
}

Tensor loss_feat(const QsdHead& head, const Tensor& v_s, const Tensor& v_t, double temperature) {
  return ad::mse(reconstruct(head, v_s, v_t, temperature), constant(v_t));
}

Tensor loss_mask(const QsdHead& head, const Tensor& v_s_mask, const Tensor& v_t, double temperature) {
  return loss_feat(head, v_s_mask, v_t, temperature);
}

Tensor loss_cls(const QsdHead& head, const Tensor& v_s_cls, const Tensor& v_t_cls) {
  check_pair(head, v_s_cls, v_t_cls);
  if (v_s_cls.dim(1) != 1) {
    throw DimensionError("loss_cls: expected a single CLS token, got " + ad::shape_str(v_s_cls.shape()));
  }
  const Tensor rec = soft_reconstruct(head, "phi_cls", "psi_cls", v_s_cls, v_t_cls, v_s_cls, 1.0);
  return ad::mse(rec, constant(v_t_cls));
}

Tensor loss_cls_attend_all(const QsdHead& head, const Tensor& v_s_cls, const Tensor& v_s_tokens,
                           const Tensor& v_t_cls, const Tensor& v_t_tokens, double temperature) {
  check_pair(head, v_s_cls, v_t_cls);
  check_pair(head, v_s_tokens, v_t_tokens);
  check_temperature(temperature);
  const Tensor student = ad::concat({v_s_cls, v_s_tokens}, 1);
  const Tensor teacher = ad::concat({constant(v_t_cls), constant(v_t_tokens)}, 1);
  const Tensor rec =
      soft_reconstruct(head, "phi_cls", "psi_cls", v_s_cls, teacher, student, temperature);
  return ad::mse(rec, constant(v_t_cls));
}

QsdLoss loss_qsd(const QsdHead& head, const StudentFeatures& s, const TeacherFeatures& t,
                 const QsdWeights& weights, const QsdOptions& options) {
  weights.validate();
  check_temperature(options.temperature);
  QsdLoss out;
  Tensor total;
  auto accumulate = [&total](const Tensor& term, double w) {
    const Tensor weighted = w == 1.0 ? term : ad::scale(term, w);
    total = total.defined() ? ad::add(total, weighted) : weighted;
  };
  if (weights.alpha > 0.0) {
    out.feat = loss_feat(head, s.tokens, t.tokens, options.temperature);
    accumulate(out.feat, weights.alpha);
  }
  if (weights.beta > 0.0) {
    if (!s.tokens_masked.defined()) throw ContractError("loss_qsd: masked student tokens required when beta > 0");
    out.mask = loss_mask(head, s.tokens_masked, t.tokens, options.temperature);
    accumulate(out.mask, weights.beta);
  }
  if (weights.gamma > 0.0) {
    out.cls = options.cls_attend_all
                  ? loss_cls_attend_all(head, s.cls, s.tokens, t.cls, t.tokens, options.temperature)
                  : loss_cls(head, s.cls, t.cls);
    accumulate(out.cls, weights.gamma);
  }
  out.total = total.defined() ? total : Tensor::scalar(0.0);
  return out;
}

}  // namespace gkd::qsd
