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

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gkd::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the define-by-run graph. A node owns its value buffer; the
// gradient buffer is allocated on first use. Nodes that do not require a
// gradient keep no inputs and no backward rule.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major tensor of doubles with an optional gradient slot.
//
// Copies are shallow: two Tensor objects may refer to the same node. Values of
// an operation's output are never written after construction; leaves (model
// parameters, inputs) may be mutated between steps through mutable_values().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
  // Braced value lists bind here rather than to the requires_grad overload.
  Tensor(Shape shape, std::initializer_list<double> values, bool requires_grad = false)
      : Tensor(std::move(shape), std::vector<double>(values), requires_grad) {}

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  // Zeros when no gradient has reached this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Leaf copy with no history.
  Tensor detach() const;

  const char* op_name() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Topologically ordered view of every node that a root depends on through
// gradient-carrying edges.
class Graph {
 public:
  static Graph trace(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  std::span<detail::Node* const> nodes() const { return order_; }

  // Seeds d(root)/d(root) = 1 and runs each node's rule once in reverse
  // topological order.
  void backward();

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;
};

// Reverse-mode pass from a scalar loss. Leaf gradients accumulate.
void backward(const Tensor& loss);

}  // namespace gkd::ad
