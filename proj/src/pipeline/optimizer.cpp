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

#include <cmath>

#include "gkd/errors.hpp"
#include "gkd/pipeline.hpp"

namespace gkd::pipeline {

void adamw_update(std::span<double> p, std::span<const double> g, std::span<double> m, std::span<double> v,
                  std::uint64_t t, double lr, const AdamWConfig& cfg) {
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw DimensionError("adamw: parameter, gradient and moment sizes differ");
  }
  if (t == 0) throw ValidationError("adamw: step count starts at 1");
  const double decay = 1.0 - lr * cfg.weight_decay;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] *= decay;
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
  }
}

void AdamW::add_group(const std::string& group, ParamSet& params, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("adamw: bad learning rate for " + group);
  for (auto& [name, t] : params.items()) {
    if (!t.is_leaf()) throw ContractError("adamw: '" + name + "' is not a leaf tensor");
    slots_.push_back({group + "/" + name, t, lr, std::vector<double>(t.numel(), 0.0),
                      std::vector<double>(t.numel(), 0.0)});
  }
}

void AdamW::step() {
  for (auto& s : slots_) {
    for (double g : s.param.grad()) {
      if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient in parameter '" + s.name + "'");
    }
  }
  ++t_;
  for (auto& s : slots_) adamw_update(s.param.mutable_values(), s.param.grad(), s.m, s.v, t_, s.lr, cfg_);
}

}  // namespace gkd::pipeline
