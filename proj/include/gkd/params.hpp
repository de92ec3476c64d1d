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
#include <string>
#include <utility>
#include <vector>

#include "gkd/tensor.hpp"

namespace gkd {

using NamedTensor = std::pair<std::string, ad::Tensor>;

// Insertion-ordered named parameter collection. The order is part of the
// checkpoint contract.
class ParamSet {
 public:
  ad::Tensor& add(std::string name, ad::Tensor tensor);
  ad::Tensor& get(const std::string& name);
  const ad::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<NamedTensor>& items() { return items_; }
  const std::vector<NamedTensor>& items() const { return items_; }

  // Total scalar count.
  std::size_t count() const;
  void set_trainable(bool trainable);
  void zero_grad();
  // FNV-1a over names, shapes and raw value bytes.
  std::uint64_t hash() const;
  // Deep copy: fresh leaves with the same values.
  ParamSet clone() const;
  // Copies values from `other`; names and shapes must match.
  void assign(const ParamSet& other);

 private:
  std::vector<NamedTensor> items_;
};

}  // namespace gkd
