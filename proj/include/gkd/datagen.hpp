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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gkd/tensor.hpp"

namespace gkd::data {

inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::int32_t kIgnoreIndex = 255;

enum class ShapeKind { kCircle, kRectangle, kStripe, kBlob };

// One painted primitive. Circles use (cx, cy, a = radius); rectangles
// (cx, cy, a = half width, b = half height); stripes (angle, offset, a = half
// width); blobs (bumps of radius a around (cx, cy)).
struct Primitive {
  ShapeKind kind = ShapeKind::kCircle;
  std::uint8_t label = 0;
  double cx = 0, cy = 0, a = 0, b = 0, angle = 0, offset = 0;
  std::vector<std::array<double, 2>> bumps;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t size = 64;
  std::vector<Primitive> shapes;  // painted in order; later shapes win
};

struct Scene {
  SceneSpec spec;
  std::vector<std::uint8_t> labels;  // size * size, classes 0..4
};

// Background covers between 30% and 80% of every scene.
Scene generate_scene(std::uint64_t seed, std::size_t size = 64);

struct DomainStyle {
  std::string domain_id;
  std::array<std::array<double, 3>, kNumClasses> palette{};  // RGB in [0,1]
  double noise_std = 0.0;
  double gamma = 1.0;
  double texture_freq = 0.0;  // cycles per image; 0 = flat
  double blur_radius = 0.0;   // gaussian sigma in pixels; 0 = none

  void validate() const;
};

// Built-in styles: proxy P1..P6, source S1, unseen targets T1..T3.
DomainStyle builtin_style(const std::string& domain_id);
std::vector<std::string> builtin_style_ids();

enum class Split { kProxy, kSource, kTarget, kTeacherPool };
const char* split_name(Split s);
Split parse_split(const std::string& name);

struct Sample {
  std::uint64_t id = 0;
  std::string domain_id;
  Split split = Split::kSource;
  std::size_t size = 64;
  std::vector<double> image;                        // [3, H, W]
  std::optional<std::vector<std::uint8_t>> labels;  // [H, W]
};

// image = palette lookup, class-oriented sinusoidal texture, gaussian blur,
// gamma, additive noise, clamp to [0,1]. Labels pass through untouched.
Sample render(const Scene& scene, const DomainStyle& style, std::uint64_t seed);

struct SplitManifest {
  std::uint64_t corpus_seed = 2024;
  std::size_t image_size = 64;
  std::size_t proxy_count = 2048;
  std::size_t source_count = 512;
  std::size_t target_count_per_domain = 128;
  std::vector<std::string> proxy_styles = {"P1", "P2", "P3", "P4", "P5", "P6"};
  std::vector<std::string> source_styles = {"S1"};
  std::vector<std::string> target_styles = {"T1", "T2", "T3"};
  double label_fraction = 1.0;

  void validate() const;
  std::string to_json() const;
  static SplitManifest from_json(const std::string& text);
};

// Sample ids are sequential: proxy first, then source, then targets.
std::vector<Sample> generate_split(const SplitManifest& manifest, Split split);

// Labelled pool used only for teacher pretraining: proxy and source styles,
// ids with the top bit set so they never collide with corpus ids.
std::vector<Sample> generate_teacher_pool(const SplitManifest& manifest, std::size_t per_style);

// Rank of each source sample in the deterministic label-priority order; the
// first round(f * source_count) ranks carry labels at fraction f.
std::vector<std::size_t> source_label_ranks(const SplitManifest& manifest);
std::size_t labeled_count(std::size_t source_count, double fraction);

struct Corpus {
  SplitManifest manifest;
  std::vector<Sample> proxy;
  std::vector<Sample> source;
  std::vector<Sample> target;

  const std::vector<Sample>& split(Split s) const;
  std::vector<std::string> target_domains() const;
};

struct BuildSummary {
  std::size_t proxy = 0;
  std::size_t source = 0;
  std::size_t source_labeled = 0;
  std::size_t target = 0;
  std::uint64_t hash = 0;  // FNV-1a over the three record files
};

// Writes manifest.json plus proxy.gkdd, source.gkdd and target.gkdd.
BuildSummary build_corpus(const SplitManifest& manifest, const std::filesystem::path& dir,
                          bool overwrite = false);
Corpus load_corpus(const std::filesystem::path& dir);
std::uint64_t corpus_hash(const std::filesystem::path& dir);

// Record file ("GKDD"):
//   "GKDD", version u32, record count u64, then per record:
//   id u64, domain length u32 + bytes, H u32, W u32, K u32,
//   3*H*W f64 image, label flag u8, H*W u8 labels when the flag is 1.
std::string serialize_records(const std::vector<Sample>& samples);
std::vector<Sample> deserialize_records(const std::string& bytes, Split split);

// Stacks images into [B, 3, H, W].
ad::Tensor stack_images(const std::vector<const Sample*>& samples);

}  // namespace gkd::data
