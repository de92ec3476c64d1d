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

#include "gkd/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "gkd/errors.hpp"

namespace gkd::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
  }
}

const std::shared_ptr<detail::Node>& require(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return node;
}

}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  check_shape(shape);
  node_->value.assign(ad::numel(shape), 0.0);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  check_shape(shape);
  if (values.size() != ad::numel(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = ad::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return require(node_)->shape; }

std::size_t Tensor::dim(int axis) const {
  const auto r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(shape()));
  }
  return shape()[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return require(node_)->value.size(); }

std::span<const double> Tensor::values() const { return require(node_)->value; }

std::span<double> Tensor::mutable_values() {
  if (!require(node_)->inputs.empty()) {
    throw ContractError(std::string("cannot mutate the output of '") + node_->op + "'");
  }
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on non-scalar tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return require(node_)->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return require(node_)->inputs.empty(); }

std::span<const double> Tensor::grad() const { return require(node_)->grad_buffer(); }

std::span<double> Tensor::mutable_grad() { return require(node_)->grad_buffer(); }

void Tensor::zero_grad() {
  auto& g = require(node_)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

const char* Tensor::op_name() const { return require(node_)->op; }

Graph Graph::trace(const Tensor& root) {
  Graph g;
  g.root_ = root.node();
  if (!g.root_ || !g.root_->requires_grad) return g;

  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(g.root_.get(), 0);
  visited.insert(g.root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      g.order_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

void Graph::backward() {
  if (!root_) throw ContractError("backward on an empty graph");
  if (root_->value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(root_->shape));
  }
  if (order_.empty()) return;
  root_->grad_buffer()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (auto* node : order_) {
    if (!node->inputs.empty()) continue;
    for (double g : node->grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient reached a leaf tensor");
    }
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  Graph::trace(loss).backward();
}

}  // namespace gkd::ad
