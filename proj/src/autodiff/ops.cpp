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

#include "gkd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "gkd/errors.hpp"

namespace gkd::ad {

using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   const char* op, std::function<void(Node&)> rule) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(rule);
  }
  return Tensor::from_node(std::move(node));
}

std::size_t normalize_axis(int axis, std::size_t rank, const Shape& shape) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  }
  return static_cast<std::size_t>(a);
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::size_t eb = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Strides of `in` viewed under the broadcast shape `out`; 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = r - 1 - k;
    strides[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

template <class F>
void broadcast_loop(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t total = numel(out);
  const std::size_t inner = out[r - 1];
  const std::size_t step_a = sa[r - 1];
  const std::size_t step_b = sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    std::size_t a = ia;
    std::size_t b = ib;
    for (std::size_t j = 0; j < inner; ++j, a += step_a, b += step_b) f(o + j, a, b);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class Binary { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* op) {
  const Shape out = broadcast_shapes(a.shape(), b.shape(), op);
  std::vector<double> value(numel(out));
  const auto av = a.values();
  const auto bv = b.values();

  if (a.shape() == out && b.shape() == out) {
    for (std::size_t i = 0; i < value.size(); ++i) {
      value[i] = kind == Binary::kAdd   ? av[i] + bv[i]
                 : kind == Binary::kSub ? av[i] - bv[i]
                                        : av[i] * bv[i];
    }
  } else {
    const auto sa = broadcast_strides(a.shape(), out);
    const auto sb = broadcast_strides(b.shape(), out);
    broadcast_loop(out, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      value[o] = kind == Binary::kAdd   ? av[i] + bv[j]
                 : kind == Binary::kSub ? av[i] - bv[j]
                                        : av[i] * bv[j];
    });
  }

  return make_result(out, std::move(value), {a, b}, op, [kind](Node& n) {
    Node& na = *n.inputs[0];
    Node& nb = *n.inputs[1];
    const auto sa = broadcast_strides(na.shape, n.shape);
    const auto sb = broadcast_strides(nb.shape, n.shape);
    const auto& g = n.grad;
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      broadcast_loop(n.shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        ga[i] += kind == Binary::kMul ? g[o] * nb.value[j] : g[o];
      });
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();
      broadcast_loop(n.shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        gb[j] += kind == Binary::kAdd   ? g[o]
                 : kind == Binary::kSub ? -g[o]
                                        : g[o] * na.value[i];
      });
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> value(x.values().begin(), x.values().end());
  for (auto& v : value) v *= factor;
  return make_result(x.shape(), std::move(value), {x}, "scale", [factor](Node& n) {
    auto& gx = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * n.grad[i];
  });
}

namespace {

struct MatmulPlan {
  std::size_t m, k, p;
  Shape out;
  std::size_t batches;
  std::vector<std::size_t> a_offset, b_offset;  // per output batch, in elements
};

MatmulPlan plan_matmul(const Shape& as, const Shape& bs) {
  if (as.size() < 2 || bs.size() < 2 || as[as.size() - 1] != bs[bs.size() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  }
  MatmulPlan plan{as[as.size() - 2], as.back(), bs.back(), {}, 0, {}, {}};
  const Shape ab(as.begin(), as.end() - 2);
  const Shape bb(bs.begin(), bs.end() - 2);
  Shape batch;
  try {
    batch = ab.empty() && bb.empty() ? Shape{} : broadcast_shapes(ab.empty() ? Shape{1} : ab,
                                                                 bb.empty() ? Shape{1} : bb,
                                                                 "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch extents of " + shape_str(as) + " and " + shape_str(bs) +
                         " do not broadcast");
  }
  plan.out = batch;
  plan.out.push_back(plan.m);
  plan.out.push_back(plan.p);
  plan.batches = numel(batch);
  if (batch.empty()) {
    plan.batches = 1;
    plan.a_offset = {0};
    plan.b_offset = {0};
    return plan;
  }
  const auto sa = broadcast_strides(ab.empty() ? Shape{1} : ab, batch);
  const auto sb = broadcast_strides(bb.empty() ? Shape{1} : bb, batch);
  plan.a_offset.resize(plan.batches);
  plan.b_offset.resize(plan.batches);
  broadcast_loop(batch, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
    plan.a_offset[o] = i * plan.m * plan.k;
    plan.b_offset[o] = j * plan.k * plan.p;
  });
  return plan;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto plan = plan_matmul(a.shape(), b.shape());
  std::vector<double> value(numel(plan.out));
  const double* av = a.values().data();
  const double* bv = b.values().data();
  const bool shared_rhs = b.rank() == 2;

  if (shared_rhs) {
    const std::size_t rows = a.numel() / plan.k;
    MatMap(value.data(), rows, plan.p).noalias() =
        ConstMatMap(av, rows, plan.k) * ConstMatMap(bv, plan.k, plan.p);
  } else {
    for (std::size_t t = 0; t < plan.batches; ++t) {
      MatMap(value.data() + t * plan.m * plan.p, plan.m, plan.p).noalias() =
          ConstMatMap(av + plan.a_offset[t], plan.m, plan.k) *
          ConstMatMap(bv + plan.b_offset[t], plan.k, plan.p);
    }
  }

  Shape out = plan.out;
  return make_result(std::move(out), std::move(value), {a, b}, "matmul",
                     [plan = std::move(plan), shared_rhs](Node& n) {
    Node& na = *n.inputs[0];
    Node& nb = *n.inputs[1];
    const double* g = n.grad.data();
    if (shared_rhs) {
      const std::size_t rows = na.value.size() / plan.k;
      ConstMatMap gm(g, rows, plan.p);
      if (na.requires_grad) {
        MatMap(na.grad_buffer().data(), rows, plan.k).noalias() +=
            gm * ConstMatMap(nb.value.data(), plan.k, plan.p).transpose();
      }
      if (nb.requires_grad) {
        MatMap(nb.grad_buffer().data(), plan.k, plan.p).noalias() +=
            ConstMatMap(na.value.data(), rows, plan.k).transpose() * gm;
      }
      return;
    }
    for (std::size_t t = 0; t < plan.batches; ++t) {
      ConstMatMap gm(g + t * plan.m * plan.p, plan.m, plan.p);
      if (na.requires_grad) {
        MatMap(na.grad_buffer().data() + plan.a_offset[t], plan.m, plan.k).noalias() +=
            gm * ConstMatMap(nb.value.data() + plan.b_offset[t], plan.k, plan.p).transpose();
      }
      if (nb.requires_grad) {
        MatMap(nb.grad_buffer().data() + plan.b_offset[t], plan.k, plan.p).noalias() +=
            ConstMatMap(na.value.data() + plan.a_offset[t], plan.m, plan.k).transpose() * gm;
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || bias.numel() != weight.dim(1)) {
    throw DimensionError("linear: weight " + shape_str(weight.shape()) + " / bias " +
                         shape_str(bias.shape()) + " mismatch");
  }
  return add(matmul(x, weight), bias);
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& in = x.shape();
  const std::size_t r = in.size();
  if (axes.size() != r) throw DimensionError("permute: axis count mismatch for " + shape_str(in));
  std::vector<bool> seen(r, false);
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw DimensionError("permute: invalid axis order");
    seen[axes[i]] = true;
    out[i] = in[axes[i]];
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in[i + 1];
  // Input stride for each output axis; lets a broadcast_loop walk the output
  // in order while gathering from the input.
  std::vector<std::size_t> gather(r);
  for (std::size_t i = 0; i < r; ++i) gather[i] = in_strides[axes[i]];
  const std::vector<std::size_t> unused(r, 0);

  std::vector<double> value(x.numel());
  const auto xv = x.values();
  broadcast_loop(out, gather, unused,
                 [&](std::size_t o, std::size_t i, std::size_t) { value[o] = xv[i]; });

  return make_result(out, std::move(value), {x}, "permute",
                     [gather, unused, out](Node& n) {
    auto& gx = n.inputs[0]->grad_buffer();
    broadcast_loop(out, gather, unused,
                   [&](std::size_t o, std::size_t i, std::size_t) { gx[i] += n.grad[o]; });
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank < 2 for " + shape_str(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> value(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(value), {x}, "reshape", [](Node& n) {
    auto& gx = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i];
  });
}

Tensor broadcast_to(const Tensor& x, Shape shape) {
  const Shape out = broadcast_shapes(x.shape(), shape, "broadcast_to");
  if (out != shape) {
    throw DimensionError("broadcast_to: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  const auto sx = broadcast_strides(x.shape(), out);
  const std::vector<std::size_t> unused(out.size(), 0);
  std::vector<double> value(numel(out));
  const auto xv = x.values();
  broadcast_loop(out, sx, unused, [&](std::size_t o, std::size_t i, std::size_t) { value[o] = xv[i]; });
  return make_result(out, std::move(value), {x}, "broadcast_to", [sx, unused](Node& n) {
    auto& gx = n.inputs[0]->grad_buffer();
    broadcast_loop(n.shape, sx, unused,
                   [&](std::size_t o, std::size_t i, std::size_t) { gx[i] += n.grad[o]; });
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size(), first);
  Shape out = first;
  out[ax] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + shape_str(first) + " vs " + shape_str(s));
    out[ax] += s[ax];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= out[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < out.size(); ++i) inner *= out[i];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[ax] * inner);
  const std::size_t row = out[ax] * inner;

  std::vector<double> value(numel(out));
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  value.begin() + static_cast<std::ptrdiff_t>(o * row + col));
    }
    col += widths[k];
  }
  return make_result(out, std::move(value), parts, "concat", [widths, outer, row](Node& n) {
    std::size_t c = 0;
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      Node& in = *n.inputs[k];
      if (in.requires_grad) {
        auto& g = in.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < widths[k]; ++j) g[o * widths[k] + j] += n.grad[o * row + c + j];
        }
      }
      c += widths[k];
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  const std::size_t ax = normalize_axis(axis, in.size(), in);
  if (length == 0 || start + length > in[ax]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") out of range for " + shape_str(in));
  }
  Shape out = in;
  out[ax] = length;
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= in[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t in_row = in[ax] * inner;
  const std::size_t out_row = length * inner;
  const std::size_t offset = start * inner;

  std::vector<double> value(numel(out));
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * in_row + offset), out_row,
                value.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  }
  return make_result(out, std::move(value), {x}, "slice", [=](Node& n) {
    auto& gx = n.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < out_row; ++j) gx[o * in_row + offset + j] += n.grad[o * out_row + j];
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size(), s);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];

  std::vector<double> value(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double peak = xv[base];
      for (std::size_t j = 1; j < len; ++j) peak = std::max(peak, xv[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - peak);
        value[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) value[base + j * inner] /= total;
    }
  }
  return make_result(s, std::move(value), {x}, "softmax", [=](Node& n) {
    auto& gx = n.inputs[0]->grad_buffer();
    const auto& y = n.value;
    const auto& g = n.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t i = base + j * inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t c = x.dim(-1);
  if (gain.numel() != c || bias.numel() != c) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match last extent of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / c;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> value(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * rstd[r];
      xhat[r * c + j] = h;
      value[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(value), {x, gain, bias}, "layer_norm",
                     [c, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& n) {
    Node& nx = *n.inputs[0];
    Node& ng = *n.inputs[1];
    Node& nb = *n.inputs[2];
    const auto& g = n.grad;
    if (ng.requires_grad || nb.requires_grad) {
      auto& gg = ng.grad_buffer();
      auto& gb = nb.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
          gg[j] += g[r * c + j] * xhat[r * c + j];
          gb[j] += g[r * c + j];
        }
      }
    }
    if (nx.requires_grad) {
      auto& gx = nx.grad_buffer();
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dh = 0.0;
        double mean_dh_h = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double dh = g[r * c + j] * ng.value[j];
          mean_dh += dh;
          mean_dh_h += dh * xhat[r * c + j];
        }
        mean_dh *= inv_c;
        mean_dh_h *= inv_c;
        for (std::size_t j = 0; j < c; ++j) {
          const double dh = g[r * c + j] * ng.value[j];
          gx[r * c + j] += rstd[r] * (dh - mean_dh - xhat[r * c + j] * mean_dh_h);
        }
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  const auto xv = x.values();
  std::vector<double> value(x.numel());
  for (std::size_t i = 0; i < value.size(); ++i) {
    value[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  }
  return make_result(x.shape(), std::move(value), {x}, "gelu", [](Node& n) {
    Node& nx = *n.inputs[0];
    auto& gx = nx.grad_buffer();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = nx.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({1}, {total}, {x}, "sum", [](Node& n) {
    auto& gx = n.inputs[0]->grad_buffer();
    for (auto& g : gx) g += n.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double count = static_cast<double>(x.numel());
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({1}, {total / count}, {x}, "mean", [count](Node& n) {
    auto& gx = n.inputs[0]->grad_buffer();
    for (auto& g : gx) g += n.grad[0] / count;
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double count = static_cast<double>(av.size());
  return make_result({1}, {total / count}, {a, b}, "mse", [count](Node& n) {
    Node& na = *n.inputs[0];
    Node& nb = *n.inputs[1];
    const double k = 2.0 * n.grad[0] / count;
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k * (na.value[i] - nb.value[i]);
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= k * (na.value[i] - nb.value[i]);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels,
                     std::int32_t ignore_index) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy: logits must be [P,K], got " + shape_str(logits.shape()));
  }
  const std::size_t rows = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (labels.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  const auto lv = logits.values();
  std::vector<double> probs(logits.numel());
  std::vector<std::int32_t> kept(labels.begin(), labels.end());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t y = labels[r];
    if (y == ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ValidationError("cross_entropy: label " + std::to_string(y) + " at row " +
                            std::to_string(r) + " outside [0, " + std::to_string(k) + ")");
    }
    const double* row = lv.data() + r * k;
    const double peak = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - peak);
    const double lse = peak + std::log(z);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - lse);
    total += lse - row[y];
    ++count;
  }
  const double loss = count ? total / static_cast<double>(count) : 0.0;
  return make_result({1}, {loss}, {logits}, "cross_entropy",
                     [k, count, ignore_index, probs = std::move(probs),
                      kept = std::move(kept)](Node& n) {
    auto& gx = n.inputs[0]->grad_buffer();
    if (count == 0) return;
    const double w = n.grad[0] / static_cast<double>(count);
    for (std::size_t r = 0; r < kept.size(); ++r) {
      if (kept[r] == ignore_index) continue;
      for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += w * probs[r * k + j];
      gx[r * k + static_cast<std::size_t>(kept[r])] -= w;
    }
  });
}

Tensor replace_rows(const Tensor& x, const std::vector<std::vector<std::size_t>>& rows_per_batch,
                    const Tensor& token) {
  if (x.rank() != 3) throw DimensionError("replace_rows: expected [B,N,C], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t c = x.dim(2);
  if (token.numel() != c) {
    throw DimensionError("replace_rows: token " + shape_str(token.shape()) + " vs width " +
                         std::to_string(c));
  }
  if (rows_per_batch.size() != 1 && rows_per_batch.size() != b) {
    throw DimensionError("replace_rows: need 1 or " + std::to_string(b) + " row lists");
  }
  auto rows_of = [&rows_per_batch](std::size_t i) -> const std::vector<std::size_t>& {
    return rows_per_batch.size() == 1 ? rows_per_batch[0] : rows_per_batch[i];
  };
  std::vector<double> value(x.values().begin(), x.values().end());
  const auto tv = token.values();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t r : rows_of(i)) {
      if (r >= n) throw DimensionError("replace_rows: row " + std::to_string(r) + " >= " + std::to_string(n));
      std::copy(tv.begin(), tv.end(), value.begin() + static_cast<std::ptrdiff_t>((i * n + r) * c));
    }
  }
  return make_result(x.shape(), std::move(value), {x, token}, "replace_rows",
                     [b, n, c, rows_per_batch](Node& node) {
    Node& nx = *node.inputs[0];
    Node& nt = *node.inputs[1];
    const auto& g = node.grad;
    for (std::size_t i = 0; i < b; ++i) {
      const auto& rows = rows_per_batch.size() == 1 ? rows_per_batch[0] : rows_per_batch[i];
      std::vector<bool> masked(n, false);
      for (std::size_t r : rows) masked[r] = true;
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t base = (i * n + r) * c;
        if (masked[r]) {
          if (nt.requires_grad) {
            auto& gt = nt.grad_buffer();
            for (std::size_t j = 0; j < c; ++j) gt[j] += g[base + j];
          }
        } else if (nx.requires_grad) {
          auto& gx = nx.grad_buffer();
          for (std::size_t j = 0; j < c; ++j) gx[base + j] += g[base + j];
        }
      }
    }
  });
}

namespace {

struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w;  // weight of `hi`
};

Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    t.lo.push_back(lo);
    t.hi.push_back(hi);
    t.w.push_back(hi == lo ? 0.0 : src - static_cast<double>(lo));
  }
  return t;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t height, std::size_t width) {
  if (x.rank() != 4) throw DimensionError("bilinear_upsample: expected [B,C,h,w], got " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  const Taps ty = bilinear_taps(h, height);
  const Taps tx = bilinear_taps(w, width);
  std::vector<double> value(planes * height * width);
  const auto xv = x.values();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = value.data() + p * height * width;
    for (std::size_t oy = 0; oy < height; ++oy) {
      const double wy = ty.w[oy];
      const double* r0 = src + ty.lo[oy] * w;
      const double* r1 = src + ty.hi[oy] * w;
      for (std::size_t ox = 0; ox < width; ++ox) {
        const double wx = tx.w[ox];
        const double top = (1.0 - wx) * r0[tx.lo[ox]] + wx * r0[tx.hi[ox]];
        const double bot = (1.0 - wx) * r1[tx.lo[ox]] + wx * r1[tx.hi[ox]];
        dst[oy * width + ox] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  Shape out = {x.dim(0), x.dim(1), height, width};
  return make_result(out, std::move(value), {x}, "bilinear_upsample",
                     [=](Node& n) {
    auto& gx = n.inputs[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      double* dsrc = gx.data() + p * h * w;
      const double* g = n.grad.data() + p * height * width;
      for (std::size_t oy = 0; oy < height; ++oy) {
        const double wy = ty.w[oy];
        for (std::size_t ox = 0; ox < width; ++ox) {
          const double wx = tx.w[ox];
          const double v = g[oy * width + ox];
          dsrc[ty.lo[oy] * w + tx.lo[ox]] += (1.0 - wy) * (1.0 - wx) * v;
          dsrc[ty.lo[oy] * w + tx.hi[ox]] += (1.0 - wy) * wx * v;
          dsrc[ty.hi[oy] * w + tx.lo[ox]] += wy * (1.0 - wx) * v;
          dsrc[ty.hi[oy] * w + tx.hi[ox]] += wy * wx * v;
        }
      }
    }
  });
}

}  // namespace gkd::ad
