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

#include "gkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gkd/errors.hpp"

namespace gkd::ad {

namespace {

double evaluate(const std::function<Tensor()>& f, std::size_t input, std::size_t coord) {
  const Tensor y = f();
  if (y.numel() != 1) throw ContractError("grad_check: function must be scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: non-finite value at input " + std::to_string(input) +
                       ", coordinate " + std::to_string(coord));
  }
  return v;
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double step) {
  for (auto& in : inputs) {
    if (!in.is_leaf()) throw ContractError("grad_check: inputs must be leaves");
    for (double v : in.values()) {
      if (!std::isfinite(v)) throw NumericError("grad_check: non-finite input");
    }
    in.set_requires_grad(true);
    in.zero_grad();
  }

  const Tensor y = f();
  if (y.numel() != 1) throw ContractError("grad_check: function must be scalar-valued");
  backward(y);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& in = inputs[k];
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    auto values = in.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = evaluate(f, k, i);
      values[i] = saved - step;
      const double down = evaluate(f, k, i);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      if (!std::isfinite(analytic[i])) {
        throw NumericError("grad_check: non-finite analytic gradient at input " +
                           std::to_string(k) + ", coordinate " + std::to_string(i));
      }
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  Tensor leaf = x.detach();
  return grad_check([&]() { return f(leaf); }, {leaf}, step);
}

}  // namespace gkd::ad
