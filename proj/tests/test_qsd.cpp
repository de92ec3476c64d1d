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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gkd/errors.hpp"
#include "gkd/gradcheck.hpp"
#include "gkd/ops.hpp"
#include "gkd/qsd.hpp"
#include "test_helpers.hpp"

namespace gkd::qsd {
namespace {

using ad::Tensor;
using testing::copy_values;
using testing::random_tensor;

QsdHead random_head(std::size_t cs, std::size_t ct, Rng& rng) {
  QsdHead head = init_qsd_head(cs, ct, rng.integer(0, 1u << 30));
  for (auto& [name, t] : head.params.items()) {
    for (auto& v : t.mutable_values()) v = rng.normal(0.0, 0.5);
  }
  return head;
}

// y[n, :] = x[n, :] W + b for one batch entry, computed with plain loops.
std::vector<double> project_oracle(const QsdHead& head, const std::string& which, const Tensor& x,
                                   std::size_t b) {
  const auto w = head.params.get(which + ".weight").values();
  const auto bias = head.params.get(which + ".bias").values();
  const std::size_t n = x.dim(1), cs = head.student_dim, ct = head.teacher_dim;
  std::vector<double> out(n * ct);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ct; ++j) {
      double acc = bias[j];
      for (std::size_t k = 0; k < cs; ++k) acc += x.values()[(b * n + i) * cs + k] * w[k * ct + j];
      out[i * ct + j] = acc;
    }
  }
  return out;
}

TEST(AttentionMap, DoubleLoopOracle) {
  Rng rng(101);
  const QsdHead head = random_head(3, 4, rng);
  const Tensor vs = random_tensor({2, 2, 3}, rng), vt = random_tensor({2, 2, 4}, rng);
  const auto w = copy_values(attention_map(head, vs, vt));
  for (std::size_t b = 0; b < 2; ++b) {
    const auto q = project_oracle(head, "phi", vs, b);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < 4; ++c) dot += q[i * 4 + c] * vt.values()[(b * 2 + j) * 4 + c];
        EXPECT_NEAR(w[(b * 2 + i) * 2 + j], dot, 1e-12);
      }
    }
  }
}

TEST(AttentionMap, OrthonormalIdentity) {
  QsdHead head = init_qsd_head(3, 3, 0);
  for (auto& v : head.params.get("phi.bias").mutable_values()) v = 0.0;
  auto w = head.params.get("phi.weight").mutable_values();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) w[i * 3 + j] = i == j ? 1.0 : 0.0;
  }
  const double c = 1.0 / std::sqrt(2.0);
  const Tensor v({1, 3, 3}, {c, c, 0.0, -c, c, 0.0, 0.0, 0.0, 1.0});
  const auto out = copy_values(attention_map(head, v, v));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out[i * 3 + j], i == j ? 1.0 : 0.0, 1e-15);
  }
}

TEST(InitQsdHead, ProjectionsMapToTeacherWidth) {
  const QsdHead head = init_qsd_head(3, 5, 9);
  const double bound = 1.0 / std::sqrt(3.0);
  for (const char* name : {"phi", "psi", "phi_cls", "psi_cls"}) {
    EXPECT_EQ(head.params.get(std::string(name) + ".weight").shape(), (ad::Shape{3, 5}));
    EXPECT_EQ(head.params.get(std::string(name) + ".bias").shape(), (ad::Shape{5}));
    for (double v : head.params.get(std::string(name) + ".weight").values()) EXPECT_LE(std::abs(v), bound);
  }
  EXPECT_EQ(init_qsd_head(3, 5, 9).params.hash(), head.params.hash());
  EXPECT_THROW(init_qsd_head(0, 5, 9), ValidationError);
}

TEST(AttentionMap, ShapeErrors) {
  const QsdHead head = init_qsd_head(3, 4, 1);
  Rng rng(1);
  EXPECT_THROW(attention_map(head, random_tensor({1, 2, 3}, rng), random_tensor({1, 3, 4}, rng)), DimensionError);
  EXPECT_THROW(attention_map(head, random_tensor({1, 2, 5}, rng), random_tensor({1, 2, 4}, rng)), DimensionError);
  EXPECT_THROW(attention_map(head, random_tensor({2, 2, 3}, rng), random_tensor({1, 2, 4}, rng)), DimensionError);
}

TEST(Reconstruct, TwoStepOracle) {
  Rng rng(103);
  const QsdHead head = random_head(3, 4, rng);
  const Tensor vs = random_tensor({2, 3, 3}, rng), vt = random_tensor({2, 3, 4}, rng);
  const auto rec = copy_values(reconstruct(head, vs, vt));
  for (std::size_t b = 0; b < 2; ++b) {
    const auto q = project_oracle(head, "phi", vs, b);
    const auto val = project_oracle(head, "psi", vs, b);
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> logits(3);
      for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t c = 0; c < 4; ++c) logits[j] += q[i * 4 + c] * vt.values()[(b * 3 + j) * 4 + c];
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t c = 0; c < 4; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < 3; ++j) acc += logits[j] / z * val[j * 4 + c];
        EXPECT_NEAR(rec[(b * 3 + i) * 4 + c], acc, 1e-12);
      }
    }
  }
}

TEST(Reconstruct, SingleTokenIsPsiExactly) {
  Rng rng(107);
  for (int trial = 0; trial < 20; ++trial) {
    const QsdHead head = random_head(3, 5, rng);
    const Tensor vs = random_tensor({2, 1, 3}, rng), vt = random_tensor({2, 1, 5}, rng, false, 50.0);
    const auto psi = ad::linear(vs, head.params.get("psi.weight"), head.params.get("psi.bias"));
    EXPECT_EQ(copy_values(reconstruct(head, vs, vt)), copy_values(psi));
  }
}

TEST(Reconstruct, EqualStudentTokensGiveEqualRows) {
  Rng rng(109);
  const QsdHead head = random_head(3, 4, rng);
  const Tensor row = random_tensor({1, 1, 3}, rng);
  const Tensor vs = ad::concat({row, row, row, row}, 1);
  const auto rec = copy_values(reconstruct(head, vs, random_tensor({1, 4, 4}, rng)));
  for (std::size_t i = 1; i < 4; ++i) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(rec[i * 4 + c], rec[c], 1e-12);
  }
}

TEST(Reconstruct, AttentionRowsAreStochastic) {
  Rng rng(113);
  for (int trial = 0; trial < 50; ++trial) {
    const QsdHead head = random_head(4, 6, rng);
    const Tensor vs = random_tensor({2, 7, 4}, rng, false, 3.0), vt = random_tensor({2, 7, 6}, rng, false, 3.0);
    const auto p = copy_values(ad::softmax(attention_map(head, vs, vt), -1));
    for (std::size_t r = 0; r < 14; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(p[r * 7 + j], 0.0);
        s += p[r * 7 + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Reconstruct, PermutationEquivariance) {
  Rng rng(127);
  const QsdHead head = random_head(3, 4, rng);
  const std::size_t n = 5;
  const Tensor vs = random_tensor({1, n, 3}, rng), vt = random_tensor({1, n, 4}, rng);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  auto permute_rows = [&](const Tensor& x) {
    std::vector<Tensor> rows;
    for (auto p : perm) rows.push_back(ad::slice(x, 1, p, 1));
    return ad::concat(rows, 1);
  };
  const auto base = copy_values(reconstruct(head, vs, vt));
  const auto moved = copy_values(reconstruct(head, permute_rows(vs), permute_rows(vt)));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(moved[i * 4 + c], base[perm[i] * 4 + c], 1e-12);
  }
  EXPECT_NEAR(loss_feat(head, permute_rows(vs), permute_rows(vt)).item(), loss_feat(head, vs, vt).item(), 1e-12);
}

TEST(LossFeat, ZeroWhenReconstructionMatches) {
  QsdHead head = init_qsd_head(2, 2, 3);
  for (auto& v : head.params.get("psi.bias").mutable_values()) v = 0.0;
  auto w = head.params.get("psi.weight").mutable_values();
  w[0] = 1.0, w[1] = 0.0, w[2] = 0.0, w[3] = 1.0;
  const Tensor v({1, 1, 2}, {0.3, -0.7});
  EXPECT_EQ(loss_feat(head, v, v).item(), 0.0);
  Rng rng(131);
  for (int trial = 0; trial < 20; ++trial) {
    const QsdHead h = random_head(3, 4, rng);
    EXPECT_GE(loss_feat(h, random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 4}, rng)).item(), 0.0);
  }
}

TEST(LossMask, MatchesFeatOnSameInputsAndOracle) {
  Rng rng(137);
  const QsdHead head = random_head(3, 4, rng);
  const Tensor vs = random_tensor({1, 2, 3}, rng), vt = random_tensor({1, 2, 4}, rng);
  EXPECT_EQ(loss_mask(head, vs, vt).item(), loss_feat(head, vs, vt).item());
  const auto rec = copy_values(reconstruct(head, vs, vt));
  double sq = 0.0;
  for (std::size_t i = 0; i < 8; ++i) sq += (rec[i] - vt.values()[i]) * (rec[i] - vt.values()[i]);
  EXPECT_NEAR(loss_mask(head, vs, vt).item(), sq / 8.0, 1e-12);
}

TEST(LossCls, ClosedFormForScaledTeacher) {
  Rng rng(139);
  const QsdHead head = random_head(3, 4, rng);
  const Tensor vs = random_tensor({1, 1, 3}, rng), vt = random_tensor({1, 1, 4}, rng);
  const auto psi = project_oracle(head, "psi_cls", vs, 0);
  for (double s : {1.0, 2.0}) {
    double sq = 0.0;
    for (std::size_t c = 0; c < 4; ++c) sq += std::pow(psi[c] - s * vt.values()[c], 2);
    EXPECT_NEAR(loss_cls(head, vs, ad::scale(vt, s)).item(), sq / 4.0, 1e-12);
  }
  EXPECT_THROW(loss_cls(head, random_tensor({1, 2, 3}, rng), random_tensor({1, 2, 4}, rng)), DimensionError);
}

TEST(Losses, TeacherGradientIsExactlyZero) {
  Rng rng(149);
  const QsdHead head = random_head(3, 4, rng);
  const Tensor vs = random_tensor({2, 3, 3}, rng, true), vsm = random_tensor({2, 3, 3}, rng, true);
  const Tensor cls_s = random_tensor({2, 1, 3}, rng, true);
  const Tensor vt = random_tensor({2, 3, 4}, rng, true), cls_t = random_tensor({2, 1, 4}, rng, true);
  for (bool all : {false, true}) {
    const auto loss = loss_qsd(head, {cls_s, vs, vsm}, {cls_t, vt}, {}, {1.0, all});
    ad::backward(loss.total);
    for (double g : vt.grad()) EXPECT_EQ(g, 0.0);
    for (double g : cls_t.grad()) EXPECT_EQ(g, 0.0);
    double s = 0.0;
    for (double g : vs.grad()) s += std::abs(g);
    EXPECT_GT(s, 0.0);
  }
}

TEST(LossQsd, WeightSelectionAndTermwiseSum) {
  Rng rng(151);
  const QsdHead head = random_head(3, 4, rng);
  const StudentFeatures s{random_tensor({2, 1, 3}, rng), random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 3}, rng)};
  const TeacherFeatures t{random_tensor({2, 1, 4}, rng), random_tensor({2, 3, 4}, rng)};
  EXPECT_EQ(loss_qsd(head, s, t, {0.0, 0.0, 0.0}).total.item(), 0.0);
  EXPECT_EQ(loss_qsd(head, s, t, {1.0, 0.0, 0.0}).total.item(), loss_feat(head, s.tokens, t.tokens).item());
  const double f = loss_feat(head, s.tokens, t.tokens).item();
  const double m = loss_mask(head, s.tokens_masked, t.tokens).item();
  const double c = loss_cls(head, s.cls, t.cls).item();
  const auto all = loss_qsd(head, s, t);
  EXPECT_NEAR(all.total.item(), f + m + c, 1e-12);
  EXPECT_EQ(all.feat.item(), f);
  EXPECT_EQ(all.mask.item(), m);
  EXPECT_EQ(all.cls.item(), c);
  EXPECT_NEAR(loss_qsd(head, s, t, {0.5, 2.0, 3.0}).total.item(), 0.5 * f + 2.0 * m + 3.0 * c, 1e-12);
  EXPECT_THROW(loss_qsd(head, s, t, {-1.0, 1.0, 1.0}), ValidationError);
  EXPECT_THROW(loss_qsd(head, {s.cls, s.tokens, Tensor()}, t), ContractError);
}

TEST(LossQsd, GradientMatchesFiniteDifferences) {
  Rng rng(157);
  QsdHead head = random_head(3, 4, rng);
  for (bool all : {false, true}) {
    const Tensor cls_s = random_tensor({1, 1, 3}, rng), vs = random_tensor({1, 2, 3}, rng);
    const Tensor vsm = random_tensor({1, 2, 3}, rng);
    const TeacherFeatures t{random_tensor({1, 1, 4}, rng), random_tensor({1, 2, 4}, rng)};
    std::vector<Tensor> inputs = {cls_s, vs, vsm};
    for (auto& [name, p] : head.params.items()) inputs.push_back(p);
    const double err = ad::grad_check(
        [&] { return loss_qsd(head, {cls_s, vs, vsm}, t, {}, {1.0, all}).total; }, inputs);
    EXPECT_LE(err, 1e-6);
  }
}

}  // namespace
}  // namespace gkd::qsd
