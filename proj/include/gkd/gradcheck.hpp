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

#include <functional>
#include <vector>

#include "gkd/tensor.hpp"

namespace gkd::ad {

// Compares reverse-mode gradients with central differences and returns
//   max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
// `f` must be scalar-valued. Throws NumericError naming the coordinate if any
// evaluation is non-finite.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step = 1e-6);

// Multi-input form: `f` closes over `inputs`, whose values are perturbed in
// place (and restored). Every input must be a leaf.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                  double step = 1e-6);

}  // namespace gkd::ad
