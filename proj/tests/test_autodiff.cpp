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
#include <limits>
#include <numbers>

#include "gkd/errors.hpp"
#include "gkd/gradcheck.hpp"
#include "gkd/ops.hpp"
#include "test_helpers.hpp"

namespace gkd::ad {
namespace {

using testing::random_tensor;

// Phi(1) by composite Simpson on the standard normal density over [0, 1].
double phi_one_by_quadrature() {
  const int n = 20000;
  const double h = 1.0 / n;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); };
  double acc = pdf(0.0) + pdf(1.0);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  return 0.5 + acc * h / 3.0;
}

TEST(Tensor, ShapeInvariants) {
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.values().size(), 6u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_EQ(t.dim(-1), 3u);
}

TEST(Matmul, IdentityAndHandCases) {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor b({2, 2}, {3, 4, 5, 6});
  const auto r = testing::copy_values(matmul(eye, b));
  EXPECT_EQ(std::vector<double>(r.begin(), r.end()), (std::vector<double>{3, 4, 5, 6}));
  EXPECT_EQ(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})).item(), 11.0);
}

TEST(Matmul, TripleLoopOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + trial % 4, k = 2 + trial % 3, p = 1 + trial % 5, batch = 1 + trial % 3;
    const Tensor a = random_tensor({batch, m, k}, rng);
    // Alternate between a shared rank-2 right operand and a batched one.
    const bool shared = trial % 2 == 0;
    const Tensor b = shared ? random_tensor({k, p}, rng) : random_tensor({batch, k, p}, rng);
    const auto out = matmul(a, b);
    ASSERT_EQ(out.shape(), (Shape{batch, m, p}));
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
          double acc = 0.0;
          for (std::size_t q = 0; q < k; ++q) {
            acc += a.values()[(n * m + i) * k + q] * b.values()[(shared ? 0 : n * k * p) + q * p + j];
          }
          EXPECT_NEAR(out.values()[(n * m + i) * p + j], acc, 1e-12);
        }
      }
    }
  }
  // 3x4 by 4x2 named case.
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  const auto out = testing::copy_values(matmul(a, b));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t q = 0; q < 4; ++q) acc += a.values()[i * 4 + q] * b.values()[q * 2 + j];
      EXPECT_NEAR(out[i * 2 + j], acc, 1e-12);
    }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Softmax, SingletonUniformAndShifted) {
  EXPECT_EQ(softmax(Tensor({1}, {123.0}), 0).item(), 1.0);
  for (double v : testing::copy_values(softmax(Tensor({3}, {0, 0, 0}), 0))) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto s = testing::copy_values(softmax(Tensor({2}, {1000.0, 1001.0}), 0));
  const double z = std::exp(0.0) + std::exp(1.0);
  EXPECT_NEAR(s[0], std::exp(0.0) / z, 1e-12);
  EXPECT_NEAR(s[1], std::exp(1.0) / z, 1e-12);
  EXPECT_THROW(softmax(Tensor({2, 2}), 2), DimensionError);
}

TEST(Softmax, RowsSumToOneForLargeMagnitudes) {
  Rng rng(3);
  const Tensor x = random_tensor({7, 9}, rng, false, 1e4);
  for (int axis : {0, 1}) {
    const auto s = softmax(x, axis);
    const std::size_t outer = axis == 0 ? 9 : 7, inner = axis == 0 ? 7 : 9;
    for (std::size_t o = 0; o < outer; ++o) {
      double sum = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const double v = axis == 0 ? s.values()[i * 9 + o] : s.values()[o * 9 + i];
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, ClosedForms) {
  const Tensor ones({2}, {1.0, 1.0}), zeros({2});
  for (double v : testing::copy_values(layer_norm(Tensor({2}, {5.0, 5.0}), ones, zeros))) EXPECT_EQ(v, 0.0);
  const auto y = testing::copy_values(layer_norm(Tensor({2}, {1.0, -1.0}), ones, zeros));
  // mean 0, variance 1, so each entry is +-1 / sqrt(1 + eps).
  const double expect = 1.0 / std::sqrt(1.0 + 1e-6);
  EXPECT_NEAR(y[0], expect, 1e-15);
  EXPECT_NEAR(y[1], -expect, 1e-15);
  Rng rng(5);
  const Tensor bias({4}, {0.5, -1.0, 2.0, 0.0});
  const auto g0 = testing::copy_values(layer_norm(random_tensor({3, 4}, rng), Tensor({4}), bias));
  for (std::size_t i = 0; i < g0.size(); ++i) EXPECT_EQ(g0[i], bias.values()[i % 4]);
  EXPECT_THROW(layer_norm(Tensor({2, 3}), ones, zeros), DimensionError);
}

TEST(Gelu, ExactForm) {
  EXPECT_EQ(gelu(Tensor({1}, {0.0})).item(), 0.0);
  EXPECT_NEAR(gelu(Tensor({1}, {12.0})).item(), 12.0, 1e-12);
  EXPECT_NEAR(gelu(Tensor({1}, {1.0})).item(), phi_one_by_quadrature(), 1e-10);
}

TEST(Mse, Cases) {
  Rng rng(9);
  const Tensor a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng);
  EXPECT_EQ(mse(a, a).item(), 0.0);
  EXPECT_EQ(mse(Tensor({2}, {0.0, 0.0}), Tensor({2}, {1.0, 1.0})).item(), 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < 15; ++i) acc += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
  EXPECT_NEAR(mse(a, b).item(), acc / 15.0, 1e-12);
  EXPECT_THROW(mse(a, Tensor({5, 3})), DimensionError);
}

TEST(CrossEntropy, Cases) {
  const std::vector<std::int32_t> l1 = {2};
  EXPECT_NEAR(cross_entropy(Tensor({1, 4}), l1, 255).item(), std::log(4.0), 1e-15);
  double prev = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 40.0}) {
    const double loss = cross_entropy(Tensor({1, 3}, {0.0, 0.0, margin}), l1, 255).item();
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-16);

  Rng rng(13);
  const Tensor logits = random_tensor({3, 3}, rng, false, 2.0);
  const std::vector<std::int32_t> labels = {0, 2, 1};
  double oracle = 0.0;
  for (std::size_t p = 0; p < 3; ++p) {
    double z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits.values()[p * 3 + k]);
    oracle -= std::log(std::exp(logits.values()[p * 3 + labels[p]]) / z);
  }
  EXPECT_NEAR(cross_entropy(logits, labels, 255).item(), oracle / 3.0, 1e-12);

  const std::vector<std::int32_t> bad = {0, 3, 1};
  EXPECT_THROW(cross_entropy(logits, bad, 255), ValidationError);
  const std::vector<std::int32_t> ignored = {255, 255, 255};
  const Tensor x({3, 3}, std::vector<double>(9, 0.5), true);
  const Tensor loss = cross_entropy(x, ignored, 255);
  EXPECT_EQ(loss.item(), 0.0);
  backward(loss);
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ClosedForms) {
  Rng rng(17);
  const Tensor x = random_tensor({4}, rng, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  const Tensor y = random_tensor({5}, rng, true);
  backward(mse(y, Tensor({5})));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y.grad()[i], 2.0 * y.values()[i] / 5.0, 1e-15);

  // A leaf that does not reach the loss keeps an exactly zero gradient.
  const Tensor unused = random_tensor({3}, rng, true);
  backward(sum(mul(y, y)));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);

  EXPECT_THROW(backward(add(x, x)), ContractError);
}

TEST(Backward, BitIdenticalReruns) {
  Rng rng(19);
  const Tensor a = random_tensor({3, 4}, rng, true), b = random_tensor({4, 2}, rng, true);
  auto run = [&] {
    a.node()->grad.clear();
    b.node()->grad.clear();
    const Tensor l = sum(gelu(softmax(matmul(a, b), -1)));
    backward(l);
    std::vector<double> g(a.grad().begin(), a.grad().end());
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    g.push_back(l.item());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, NonFiniteGradientIsReported) {
  const Tensor x({1}, {1e308}, true);
  EXPECT_THROW(backward(sum(mul(scale(x, 10.0), x))), NumericError);
}

TEST(GradCheck, EveryOperation) {
  Rng rng(23);
  auto check = [](const char* name, const std::function<Tensor()>& f, std::vector<Tensor> in, double tol = 1e-6) {
    const double err = grad_check(f, std::move(in));
    EXPECT_LE(err, tol) << name;
  };
  const Tensor a = random_tensor({2, 3}, rng, true), b = random_tensor({2, 3}, rng, true);
  const Tensor row = random_tensor({3}, rng, true);
  check("add", [&] { return sum(mul(add(a, row), b)); }, {a, b, row});
  check("sub", [&] { return sum(mul(sub(a, row), b)); }, {a, b, row});
  check("mul", [&] { return sum(mul(mul(a, b), a)); }, {a, b});
  check("scale", [&] { return sum(mul(scale(a, -1.7), b)); }, {a, b});
  const Tensor m1 = random_tensor({2, 3, 4}, rng, true), m2 = random_tensor({4, 2}, rng, true);
  const Tensor m3 = random_tensor({2, 4, 2}, rng, true);
  check("matmul", [&] { return sum(mul(matmul(m1, m2), matmul(m1, m3))); }, {m1, m2, m3});
  const Tensor bias = random_tensor({2}, rng, true);
  check("linear", [&] { return sum(mul(linear(m1, m2, bias), linear(m1, m2, bias))); }, {m1, m2, bias});
  check("transpose", [&] { return sum(mul(transpose(m1), transpose(m1))); }, {m1});
  const Tensor perm_probe = random_tensor({4, 2, 3}, rng);
  check("permute", [&] { return sum(mul(permute(m1, {2, 0, 1}), perm_probe)); }, {m1});
  check("reshape", [&] { return sum(mul(reshape(m1, {4, 6}), reshape(m1, {4, 6}))); }, {m1});
  check("broadcast_to", [&] { return sum(mul(broadcast_to(row, {4, 3}), broadcast_to(row, {4, 3}))); }, {row});
  check("concat", [&] { return sum(mul(concat({a, b}, 0), concat({b, a}, 0))); }, {a, b});
  check("slice", [&] { return sum(mul(slice(m1, 2, 1, 2), slice(m1, 2, 1, 2))); }, {m1});
  check("softmax", [&] { return sum(mul(softmax(m1, -1), m1)); }, {m1});
  check("softmax_axis0", [&] { return sum(mul(softmax(m1, 0), m1)); }, {m1});
  const Tensor gain = random_tensor({4}, rng, true), lb = random_tensor({4}, rng, true);
  check("layer_norm", [&] { return sum(mul(layer_norm(m1, gain, lb), m1)); }, {m1, gain, lb});
  check("gelu", [&] { return sum(mul(gelu(m1), m1)); }, {m1});
  check("sum", [&] { return sum(mul(m1, m1)); }, {m1});
  check("mean", [&] { return mean(mul(m1, m1)); }, {m1});
  check("mse", [&] { return mse(a, b); }, {a, b}, 1e-8);
  const std::vector<std::int32_t> labels = {1, 255};
  check("cross_entropy", [&] { return cross_entropy(a, labels, 255); }, {a}, 1e-7);
  const Tensor tok = random_tensor({1, 1, 4}, rng, true);
  const std::vector<std::vector<std::size_t>> rows = {{0, 2}, {1}};
  check("replace_rows", [&] { return sum(mul(replace_rows(m1, rows, tok), m1)); }, {m1, tok});
  const Tensor img = random_tensor({1, 2, 2, 2}, rng, true);
  const Tensor probe = random_tensor({1, 2, 5, 3}, rng);
  check("bilinear_upsample", [&] { return sum(mul(bilinear_upsample(img, 5, 3), probe)); }, {img});
}

TEST(GradCheck, NonFiniteNamesCoordinate) {
  // Finite at the base point; squaring overflows once coordinate 1 is
  // stepped up by the (deliberately huge) step.
  const Tensor x({2}, {0.0, 1.3e154}, true);
  try {
    grad_check([&] { return sum(mul(x, x)); }, {x}, 1e153);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(grad_check([&] { return sum(mul(x, Tensor({2}, {1.0, std::numeric_limits<double>::infinity()}))); }, {x}),
               NumericError);
}

TEST(BilinearUpsample, TwoByTwoOracle) {
  // Half-pixel centres: output pixel (y, x) samples source coordinate
  // ((y + 0.5) * h / H - 0.5), clamped to the edge.
  const Tensor src({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const auto out = testing::copy_values(bilinear_upsample(src, 4, 4));
  const double expect[16] = {1.0, 1.25, 1.75, 2.0, 1.5, 1.75, 2.25, 2.5,
                             2.5, 2.75, 3.25, 3.5, 3.0, 3.25, 3.75, 4.0};
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(out[i], expect[i], 1e-15) << i;
}

}  // namespace
}  // namespace gkd::ad
