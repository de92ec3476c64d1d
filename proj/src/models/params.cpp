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

#include "gkd/params.hpp"

#include <algorithm>

#include "gkd/errors.hpp"
#include "gkd/random.hpp"

namespace gkd {

ad::Tensor& ParamSet::add(std::string name, ad::Tensor tensor) {
  if (contains(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  items_.emplace_back(std::move(name), std::move(tensor));
  return items_.back().second;
}

ad::Tensor& ParamSet::get(const std::string& name) {
  for (auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw ValidationError("no parameter named '" + name + "'");
}

const ad::Tensor& ParamSet::get(const std::string& name) const {
  return const_cast<ParamSet*>(this)->get(name);
}

bool ParamSet::contains(const std::string& name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const auto& p) { return p.first == name; });
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamSet::set_trainable(bool trainable) {
  for (auto& [name, t] : items_) t.set_requires_grad(trainable);
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : items_) {
    h = fnv1a64({reinterpret_cast<const unsigned char*>(name.data()), name.size()}, h);
    for (auto e : t.shape()) {
      const auto v = static_cast<std::uint64_t>(e);
      h = fnv1a64({reinterpret_cast<const unsigned char*>(&v), sizeof v}, h);
    }
    const auto vals = t.values();
    h = fnv1a64({reinterpret_cast<const unsigned char*>(vals.data()), vals.size_bytes()}, h);
  }
  return h;
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& [name, t] : items_) {
    ad::Tensor copy = t.detach();
    copy.set_requires_grad(t.requires_grad());
    out.add(name, std::move(copy));
  }
  return out;
}

void ParamSet::assign(const ParamSet& other) {
  if (other.items_.size() != items_.size()) throw ValidationError("parameter count mismatch");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto& [name, t] = items_[i];
    const auto& [oname, ot] = other.items_[i];
    if (name != oname || t.shape() != ot.shape()) {
      throw ValidationError("parameter mismatch at '" + name + "'");
    }
    auto dst = t.mutable_values();
    std::copy(ot.values().begin(), ot.values().end(), dst.begin());
  }
}

}  // namespace gkd
