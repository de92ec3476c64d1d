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

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gkd/datagen.hpp"
#include "gkd/errors.hpp"
#include "gkd/random.hpp"

namespace gkd::data {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTextureAmp = 0.12;

bool covers(const Primitive& p, double x, double y) {
  switch (p.kind) {
    case ShapeKind::kCircle:
      return (x - p.cx) * (x - p.cx) + (y - p.cy) * (y - p.cy) <= p.a * p.a;
    case ShapeKind::kRectangle:
      return std::abs(x - p.cx) <= p.a && std::abs(y - p.cy) <= p.b;
    case ShapeKind::kStripe:
      return std::abs(x * std::cos(p.angle) + y * std::sin(p.angle) - p.offset) <= p.a;
    case ShapeKind::kBlob:
      for (const auto& [bx, by] : p.bumps) {
        if ((x - bx) * (x - bx) + (y - by) * (y - by) <= p.a * p.a) return true;
      }
      return false;
  }
  return false;
}

Primitive primitive(ShapeKind kind, std::uint8_t label) {
  Primitive p;
  p.kind = kind;
  p.label = label;
  return p;
}

SceneSpec sample_spec(Rng& rng, std::uint64_t seed, std::size_t size) {
  const double s = static_cast<double>(size);
  const double k = s / 64.0;  // geometry scales with resolution
  SceneSpec spec{seed, size, {}};
  if (rng.uniform() < 0.6) {
    Primitive p = primitive(ShapeKind::kStripe, 3);
    p.angle = rng.uniform(0.0, kPi);
    // Offsets are measured along the stripe normal from the image centre.
    const double c = s / 2.0;
    p.offset = c * std::cos(p.angle) + c * std::sin(p.angle) + rng.uniform(-18.0, 18.0) * k;
    p.a = rng.uniform(3.0, 6.0) * k;
    spec.shapes.push_back(p);
  }
  const auto n_rect = rng.integer(0, 2);
  for (std::uint64_t i = 0; i < n_rect; ++i) {
    Primitive p = primitive(ShapeKind::kRectangle, 2);
    p.cx = rng.uniform(8.0, 56.0) * k;
    p.cy = rng.uniform(8.0, 56.0) * k;
    p.a = rng.uniform(5.0, 12.0) * k;
    p.b = rng.uniform(5.0, 12.0) * k;
    spec.shapes.push_back(p);
  }
  if (rng.uniform() < 0.6) {
    Primitive p = primitive(ShapeKind::kBlob, 4);
    p.cx = rng.uniform(12.0, 52.0) * k;
    p.cy = rng.uniform(12.0, 52.0) * k;
    p.a = rng.uniform(4.0, 7.0) * k;
    const auto n_bumps = rng.integer(3, 4);
    for (std::uint64_t b = 0; b < n_bumps; ++b) {
      p.bumps.push_back({p.cx + rng.uniform(-7.0, 7.0) * k, p.cy + rng.uniform(-7.0, 7.0) * k});
    }
    spec.shapes.push_back(p);
  }
  const auto n_circ = rng.integer(0, 2);
  for (std::uint64_t i = 0; i < n_circ; ++i) {
    Primitive p = primitive(ShapeKind::kCircle, 1);
    p.cx = rng.uniform(8.0, 56.0) * k;
    p.cy = rng.uniform(8.0, 56.0) * k;
    p.a = rng.uniform(4.0, 10.0) * k;
    spec.shapes.push_back(p);
  }
  return spec;
}

std::vector<std::uint8_t> rasterize(const SceneSpec& spec) {
  const std::size_t n = spec.size;
  std::vector<std::uint8_t> labels(n * n, 0);
  for (const auto& p : spec.shapes) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        if (covers(p, x + 0.5, y + 0.5)) labels[y * n + x] = p.label;
      }
    }
  }
  return labels;
}

// Rotation about the grey axis, then saturation about luminance, then offset.
std::array<double, 3> recolor(std::array<double, 3> c, double hue_deg, double sat, double shift) {
  const double h = hue_deg * kPi / 180.0;
  const double cs = std::cos(h), sn = std::sin(h), t = (1.0 - cs) / 3.0, r = std::sqrt(1.0 / 3.0) * sn;
  const double m[3][3] = {{cs + t, t - r, t + r}, {t + r, cs + t, t - r}, {t - r, t + r, cs + t}};
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) out[i] = m[i][0] * c[0] + m[i][1] * c[1] + m[i][2] * c[2];
  const double lum = (out[0] + out[1] + out[2]) / 3.0;
  for (auto& v : out) v = std::clamp(lum + sat * (v - lum) + shift, 0.0, 1.0);
  return out;
}

struct StyleRow {
  const char* id;
  double hue, sat, shift, noise, gamma, freq, blur;
};

// Proxy hues cover the wheel; targets sit between proxy hues and away from
// the source hue.
constexpr StyleRow kStyles[] = {
    {"S1", 0.0, 1.00, 0.00, 0.020, 1.00, 6.0, 0.0},
    {"P1", 50.0, 0.90, 0.05, 0.040, 0.80, 4.0, 0.5},
    {"P2", 105.0, 1.10, -0.05, 0.030, 1.20, 8.0, 0.0},
    {"P3", 165.0, 0.80, 0.00, 0.050, 0.90, 5.0, 1.0},
    {"P4", 215.0, 1.00, 0.08, 0.025, 1.30, 10.0, 0.7},
    {"P5", 250.0, 0.70, -0.08, 0.060, 1.10, 7.0, 0.0},
    {"P6", 320.0, 1.20, 0.03, 0.035, 0.70, 3.0, 1.2},
    {"T1", 25.0, 0.85, 0.06, 0.050, 0.80, 9.0, 0.8},
    {"T2", 140.0, 1.00, -0.04, 0.045, 0.85, 5.5, 0.4},
    {"T3", 285.0, 0.90, 0.00, 0.065, 1.15, 7.5, 1.0},
};

constexpr std::array<std::array<double, 3>, kNumClasses> kBasePalette = {{
    {0.55, 0.50, 0.40},  // background
    {0.90, 0.20, 0.20},  // circles
    {0.20, 0.35, 0.90},  // rectangles
    {0.20, 0.80, 0.30},  // stripes
    {0.95, 0.85, 0.15},  // blobs
}};

std::vector<double> gaussian_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(2.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  return k;
}

// Separable blur of one channel plane, edges clamped.
void blur_plane(double* plane, std::size_t n, const std::vector<double>& kernel) {
  const int r = static_cast<int>(kernel.size() / 2);
  const int last = static_cast<int>(n) - 1;
  std::vector<double> tmp(n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) acc += kernel[d + r] * plane[y * n + std::clamp<int>(int(x) + d, 0, last)];
      tmp[y * n + x] = acc;
    }
  }
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) acc += kernel[d + r] * tmp[std::clamp<int>(int(y) + d, 0, last) * n + x];
      plane[y * n + x] = acc;
    }
  }
}

}  // namespace

Scene generate_scene(std::uint64_t seed, std::size_t size) {
  if (size < 8) throw ValidationError("generate_scene: size must be at least 8");
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed({seed, attempt}));
    SceneSpec spec = sample_spec(rng, seed, size);
    auto labels = rasterize(spec);
    const auto bg = static_cast<double>(std::count(labels.begin(), labels.end(), 0)) / labels.size();
    if (bg >= 0.3 && bg <= 0.8) return {std::move(spec), std::move(labels)};
  }
}

void DomainStyle::validate() const {
  auto bad = [&](const std::string& what) {
    throw ValidationError("style '" + domain_id + "': " + what);
  };
  if (domain_id.empty()) bad("empty domain id");
  for (const auto& c : palette) {
    for (double v : c) {
      if (!(v >= 0.0 && v <= 1.0)) bad("palette values must lie in [0,1]");
    }
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) bad("noise_std must be >= 0");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) bad("gamma must be > 0");
  if (!(texture_freq >= 0.0) || !std::isfinite(texture_freq)) bad("texture_freq must be >= 0");
  if (!(blur_radius >= 0.0) || !std::isfinite(blur_radius)) bad("blur_radius must be >= 0");
}

DomainStyle builtin_style(const std::string& domain_id) {
  for (const auto& row : kStyles) {
    if (domain_id != row.id) continue;
    DomainStyle s;
    s.domain_id = row.id;
    for (std::size_t c = 0; c < kNumClasses; ++c) s.palette[c] = recolor(kBasePalette[c], row.hue, row.sat, row.shift);
    s.noise_std = row.noise;
    s.gamma = row.gamma;
    s.texture_freq = row.freq;
    s.blur_radius = row.blur;
    return s;
  }
  throw ValidationError("unknown domain style '" + domain_id + "'");
}

std::vector<std::string> builtin_style_ids() {
  std::vector<std::string> ids;
  for (const auto& row : kStyles) ids.emplace_back(row.id);
  return ids;
}

Sample render(const Scene& scene, const DomainStyle& style, std::uint64_t seed) {
  style.validate();
  const std::size_t n = scene.spec.size;
  if (scene.labels.size() != n * n) throw DimensionError("render: label grid does not match scene size");
  Rng rng(derive_seed({seed, 0x52454e44ULL}));
  const double phase = rng.uniform(0.0, 2.0 * kPi);

  Sample out;
  out.domain_id = style.domain_id;
  out.size = n;
  out.image.assign(3 * n * n, 0.0);
  const std::size_t plane = n * n;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const auto label = scene.labels[y * n + x];
      if (label >= kNumClasses) throw ValidationError("render: label out of range");
      double tex = 0.0;
      if (style.texture_freq > 0.0) {
        const double theta = label * kPi / kNumClasses;
        const double u = (x * std::cos(theta) + y * std::sin(theta)) / static_cast<double>(n);
        tex = kTextureAmp * std::sin(2.0 * kPi * style.texture_freq * u + phase);
      }
      for (std::size_t c = 0; c < 3; ++c) out.image[c * plane + y * n + x] = style.palette[label][c] + tex;
    }
  }
  if (style.blur_radius > 0.0) {
    const auto kernel = gaussian_kernel(style.blur_radius);
    for (std::size_t c = 0; c < 3; ++c) blur_plane(out.image.data() + c * plane, n, kernel);
  }
  for (auto& v : out.image) {
    if (style.gamma != 1.0) v = std::pow(std::clamp(v, 0.0, 1.0), style.gamma);
    if (style.noise_std > 0.0) v += rng.normal(0.0, style.noise_std);
    v = std::clamp(v, 0.0, 1.0);
  }
  out.labels = scene.labels;
  return out;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kProxy: return "proxy";
    case Split::kSource: return "source";
    case Split::kTarget: return "target";
    case Split::kTeacherPool: return "teacher_pool";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  for (auto s : {Split::kProxy, Split::kSource, Split::kTarget, Split::kTeacherPool}) {
    if (name == split_name(s)) return s;
  }
  throw ValidationError("unknown split '" + name + "'");
}

}  // namespace gkd::data
