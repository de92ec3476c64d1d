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

#include <chrono>
#include <cstdio>
#include <memory>

#include "gkd/app.hpp"
#include "gkd/gradcheck.hpp"
#include "gkd/models.hpp"
#include "gkd/ops.hpp"
#include "gkd/qsd.hpp"
#include "gkd/random.hpp"

namespace gkd::app {

using ad::Tensor;

namespace {

Tensor randn(ad::Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Tensor(std::move(shape), std::move(v));
}

// Negative control: identity forward, backward off by 1%.
Tensor corrupted_identity(const Tensor& x) {
  auto node = std::make_shared<ad::detail::Node>();
  node->shape = x.shape();
  node->value.assign(x.values().begin(), x.values().end());
  node->op = "corrupted_identity";
  if (x.requires_grad()) {
    node->requires_grad = true;
    node->inputs = {x.node()};
    node->backward = [](ad::detail::Node& n) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 1.01 * n.grad[i];
    };
  }
  return Tensor::from_node(std::move(node));
}

struct Case {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Tensor()> f;
};

// Scalar probe sum(y * r) with a fixed random r, so every output coordinate
// contributes a distinct weight.
std::function<Tensor()> probe(std::function<Tensor()> op, Rng& rng) {
  auto r = std::make_shared<Tensor>();
  auto seed = rng.integer(0, ~0ULL);
  return [op = std::move(op), r, seed] {
    Tensor y = op();
    if (!r->defined()) {
      Rng local(seed);
      *r = randn(y.shape(), local);
    }
    return ad::sum(ad::mul(y, *r));
  };
}

std::vector<Case> build_cases(bool corrupt) {
  Rng rng(20260415);
  std::vector<Case> cases;
  auto unary = [&](const std::string& name, ad::Shape shape, std::function<Tensor(const Tensor&)> op,
                   double scale = 1.0) {
    Tensor x = randn(shape, rng, scale);
    cases.push_back({name, {x}, probe([x, op] { return op(x); }, rng)});
  };
  auto binary = [&](const std::string& name, ad::Shape sa, ad::Shape sb,
                    std::function<Tensor(const Tensor&, const Tensor&)> op) {
    Tensor a = randn(sa, rng), b = randn(sb, rng);
    cases.push_back({name, {a, b}, probe([a, b, op] { return op(a, b); }, rng)});
  };

  binary("add (broadcast)", {2, 3, 4}, {3, 1}, [](auto& a, auto& b) { return ad::add(a, b); });
  binary("sub (broadcast)", {2, 1, 4}, {3, 4}, [](auto& a, auto& b) { return ad::sub(a, b); });
  binary("mul (broadcast)", {2, 3, 4}, {4}, [](auto& a, auto& b) { return ad::mul(a, b); });
  unary("scale", {3, 5}, [](auto& x) { return ad::scale(x, -1.7); });
  binary("matmul (batched)", {2, 3, 4}, {2, 4, 5}, [](auto& a, auto& b) { return ad::matmul(a, b); });
  binary("matmul (shared rhs)", {2, 3, 4}, {4, 2}, [](auto& a, auto& b) { return ad::matmul(a, b); });
  {
    Tensor x = randn({2, 3, 4}, rng), w = randn({4, 5}, rng), b = randn({5}, rng);
    cases.push_back({"linear", {x, w, b}, probe([=] { return ad::linear(x, w, b); }, rng)});
  }
  unary("transpose", {2, 3, 4}, [](auto& x) { return ad::transpose(x); });
  unary("permute", {2, 3, 4}, [](auto& x) { return ad::permute(x, {2, 0, 1}); });
  unary("reshape", {2, 3, 4}, [](auto& x) { return ad::reshape(x, {6, 4}); });
  unary("broadcast_to", {3, 1}, [](auto& x) { return ad::broadcast_to(x, {2, 3, 4}); });
  binary("concat", {2, 3, 4}, {2, 2, 4}, [](auto& a, auto& b) { return ad::concat({a, b}, 1); });
  unary("slice", {2, 5, 3}, [](auto& x) { return ad::slice(x, 1, 1, 3); });
  unary("softmax (last axis)", {2, 3, 5}, [](auto& x) { return ad::softmax(x, -1); }, 2.0);
  unary("softmax (axis 1)", {2, 4, 3}, [](auto& x) { return ad::softmax(x, 1); }, 2.0);
  {
    Tensor x = randn({2, 3, 6}, rng), g = randn({6}, rng), b = randn({6}, rng);
    cases.push_back({"layer_norm", {x, g, b}, probe([=] { return ad::layer_norm(x, g, b); }, rng)});
  }
  if (corrupt) {
    unary("gelu", {3, 7}, [](auto& x) { return ad::gelu(corrupted_identity(x)); }, 1.5);
  } else {
    unary("gelu", {3, 7}, [](auto& x) { return ad::gelu(x); }, 1.5);
  }
  {
    Tensor x = randn({3, 4}, rng);
    cases.push_back({"sum", {x}, [x] { return ad::sum(ad::mul(x, x)); }});
    Tensor y = randn({3, 4}, rng);
    cases.push_back({"mean", {y}, [y] { return ad::mean(ad::mul(y, y)); }});
  }
  binary("mse", {2, 3, 4}, {2, 3, 4}, [](auto& a, auto& b) { return ad::mse(a, b); });
  {
    Tensor logits = randn({6, 5}, rng, 2.0);
    const std::vector<std::int32_t> labels = {0, 4, 255, 2, 1, 3};
    cases.push_back({"cross_entropy (ignore)", {logits}, [logits, labels] {
                       return ad::cross_entropy(logits, labels, 255);
                     }});
  }
  {
    Tensor x = randn({2, 5, 3}, rng), tok = randn({3}, rng);
    const std::vector<std::vector<std::size_t>> rows = {{0, 3}, {1, 2, 4}};
    cases.push_back({"replace_rows", {x, tok}, probe([=] { return ad::replace_rows(x, rows, tok); }, rng)});
  }
  unary("bilinear_upsample", {2, 3, 2, 3}, [](auto& x) { return ad::bilinear_upsample(x, 5, 4); });

  // QSD terms and the weighted composite, including the head parameters.
  const std::size_t cs = 3, ct = 4, n = 5;
  auto head = std::make_shared<qsd::QsdHead>(qsd::init_qsd_head(cs, ct, 11));
  std::vector<Tensor> head_params;
  for (auto& [name, p] : head->params.items()) head_params.push_back(p);
  Tensor vs = randn({2, n, cs}, rng), vsm = randn({2, n, cs}, rng), cls_s = randn({2, 1, cs}, rng);
  const Tensor vt = randn({2, n, ct}, rng), cls_t = randn({2, 1, ct}, rng);
  auto with_head = [&](std::vector<Tensor> xs) {
    xs.insert(xs.end(), head_params.begin(), head_params.end());
    return xs;
  };
  cases.push_back({"qsd feat", with_head({vs}), [=] { return qsd::loss_feat(*head, vs, vt, 0.7); }});
  cases.push_back({"qsd mask", with_head({vsm}), [=] { return qsd::loss_mask(*head, vsm, vt); }});
  cases.push_back({"qsd cls", with_head({cls_s}), [=] { return qsd::loss_cls(*head, cls_s, cls_t); }});
  cases.push_back({"qsd cls (attend all)", with_head({cls_s, vs}),
                   [=] { return qsd::loss_cls_attend_all(*head, cls_s, vs, cls_t, vt); }});
  cases.push_back({"qsd composite", with_head({cls_s, vs, vsm}), [=] {
                     return qsd::loss_qsd(*head, {cls_s, vs, vsm}, {cls_t, vt}, {0.8, 1.3, 0.5}).total;
                   }});

  // Full encoder and decoder forward passes on a tiny model.
  const models::EncoderConfig ec{8, 4, 1, 4, 2, 2.0};
  auto enc = std::make_shared<models::Encoder>(models::init_encoder(ec, 13));
  for (auto& [name, p] : enc->params.items()) {
    Rng jitter(fnv1a64(name));
    for (auto& v : p.mutable_values()) v += jitter.normal(0.0, 0.1);
  }
  const Tensor images = randn({2, 3, 8, 8}, rng);
  std::vector<Tensor> enc_params;
  for (auto& [name, p] : enc->params.items()) enc_params.push_back(p);
  const models::MaskSpec mask{0.5, {1, 2}, 0};
  cases.push_back({"encoder (masked)", enc_params, probe([=] {
                     const models::MaskSpec masks[] = {mask};
                     return models::encode(*enc, images, masks).tokens;
                   }, rng)});
  auto dec = std::make_shared<models::Decoder>(models::init_decoder(4, 5, 2, 8, 17));
  for (auto& [name, p] : dec->params.items()) {
    for (auto& v : p.mutable_values()) v += rng.normal(0.0, 0.3);
  }
  std::vector<Tensor> dec_params;
  for (auto& [name, p] : dec->params.items()) dec_params.push_back(p);
  Tensor tokens = randn({2, 4, 4}, rng);
  dec_params.push_back(tokens);
  cases.push_back({"decoder", dec_params, probe([=] { return models::decode(*dec, tokens); }, rng)});
  return cases;
}

}  // namespace

std::vector<GradcheckRow> cmd_gradcheck(const GradcheckOptions& options, const Logger& log) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<GradcheckRow> rows;
  std::size_t failed = 0;
  log("operation                   max rel error   result");
  for (auto& c : build_cases(options.corrupt)) {
    GradcheckRow row{c.name, 0.0, false, {}};
    try {
      row.max_rel_error = ad::grad_check(c.f, c.inputs);
      row.passed = row.max_rel_error <= options.tolerance;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    failed += !row.passed;
    char line[160];
    std::snprintf(line, sizeof line, "%-27s %-15.3e %s", row.name.c_str(), row.max_rel_error,
                  row.passed ? "pass" : "FAIL");
    log(line + (row.error.empty() ? std::string() : "  (" + row.error + ")"));
    rows.push_back(std::move(row));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char tail[128];
  std::snprintf(tail, sizeof tail, "%zu/%zu passed (tolerance %.0e) in %.2fs", rows.size() - failed, rows.size(),
                options.tolerance, secs);
  log(tail);
  return rows;
}

}  // namespace gkd::app
