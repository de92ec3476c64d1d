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
#include <numeric>
#include <set>

#include <json.hpp>

#include "gkd/checkpoint.hpp"
#include "gkd/datagen.hpp"
#include "gkd/errors.hpp"
#include "gkd/random.hpp"

namespace gkd::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t kRecordVersion = 1;
constexpr std::uint64_t kTeacherPoolBit = 1ULL << 63;
constexpr const char* kSplitFiles[] = {"proxy.gkdd", "source.gkdd", "target.gkdd"};

Sample make_sample(const SplitManifest& m, std::uint64_t id, const std::string& style, Split split) {
  const auto seed = derive_seed({m.corpus_seed, id});
  const Scene scene = generate_scene(seed, m.image_size);
  Sample s = render(scene, builtin_style(style), seed);
  s.id = id;
  s.split = split;
  return s;
}

}  // namespace

void SplitManifest::validate() const {
  if (image_size < 8 || image_size % 8 != 0) {
    throw ValidationError("manifest: image_size must be a positive multiple of 8");
  }
  if (source_count == 0) throw ValidationError("manifest: source_count must be positive");
  if (proxy_count > 0 && proxy_styles.empty()) throw ValidationError("manifest: proxy_styles empty");
  if (source_styles.empty()) throw ValidationError("manifest: source_styles empty");
  if (target_count_per_domain > 0 && target_styles.empty()) {
    throw ValidationError("manifest: target_styles empty");
  }
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
    throw ValidationError("manifest: label_fraction must lie in (0, 1]");
  }
  for (const auto* list : {&proxy_styles, &source_styles, &target_styles}) {
    for (const auto& id : *list) builtin_style(id);
  }
  const std::set<std::string> src(source_styles.begin(), source_styles.end());
  for (const auto& t : target_styles) {
    if (src.count(t)) throw ValidationError("manifest: target style '" + t + "' is also a source style");
  }
}

std::string SplitManifest::to_json() const {
  json j = {{"corpus_seed", corpus_seed},
            {"image_size", image_size},
            {"proxy_count", proxy_count},
            {"source_count", source_count},
            {"target_count_per_domain", target_count_per_domain},
            {"proxy_styles", proxy_styles},
            {"source_styles", source_styles},
            {"target_styles", target_styles},
            {"label_fraction", label_fraction}};
  return j.dump(2);
}

SplitManifest SplitManifest::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("manifest: expected a JSON object");
  SplitManifest m;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "corpus_seed") m.corpus_seed = v.get<std::uint64_t>();
      else if (key == "image_size") m.image_size = v.get<std::size_t>();
      else if (key == "proxy_count") m.proxy_count = v.get<std::size_t>();
      else if (key == "source_count") m.source_count = v.get<std::size_t>();
      else if (key == "target_count_per_domain") m.target_count_per_domain = v.get<std::size_t>();
      else if (key == "proxy_styles") m.proxy_styles = v.get<std::vector<std::string>>();
      else if (key == "source_styles") m.source_styles = v.get<std::vector<std::string>>();
      else if (key == "target_styles") m.target_styles = v.get<std::vector<std::string>>();
      else if (key == "label_fraction") m.label_fraction = v.get<double>();
      else if (key == "summary") continue;
      else throw ValidationError("manifest: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

std::size_t labeled_count(std::size_t source_count, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("label fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(source_count)));
}

std::vector<std::size_t> source_label_ranks(const SplitManifest& m) {
  std::vector<std::size_t> order(m.source_count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed({m.corpus_seed, 0x4c41424cULL}));
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::size_t> rank(m.source_count);
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

std::vector<Sample> generate_split(const SplitManifest& m, Split split) {
  m.validate();
  std::vector<Sample> out;
  switch (split) {
    case Split::kProxy:
      for (std::size_t i = 0; i < m.proxy_count; ++i) {
        out.push_back(make_sample(m, i, m.proxy_styles[i % m.proxy_styles.size()], split));
        out.back().labels.reset();
      }
      break;
    case Split::kSource: {
      const auto ranks = source_label_ranks(m);
      const auto keep = labeled_count(m.source_count, m.label_fraction);
      for (std::size_t i = 0; i < m.source_count; ++i) {
        out.push_back(make_sample(m, m.proxy_count + i, m.source_styles[i % m.source_styles.size()], split));
        if (ranks[i] >= keep) out.back().labels.reset();
      }
      break;
    }
    case Split::kTarget: {
      std::uint64_t id = m.proxy_count + m.source_count;
      for (const auto& style : m.target_styles) {
        for (std::size_t i = 0; i < m.target_count_per_domain; ++i) out.push_back(make_sample(m, id++, style, split));
      }
      break;
    }
    case Split::kTeacherPool:
      throw ValidationError("generate_split: use generate_teacher_pool for the teacher pool");
  }
  return out;
}

std::vector<Sample> generate_teacher_pool(const SplitManifest& m, std::size_t per_style) {
  m.validate();
  std::vector<std::string> styles = m.proxy_styles;
  styles.insert(styles.end(), m.source_styles.begin(), m.source_styles.end());
  std::vector<Sample> out;
  out.reserve(per_style * styles.size());
  // Interleave styles so any prefix is style-balanced.
  std::uint64_t id = kTeacherPoolBit;
  for (std::size_t i = 0; i < per_style; ++i) {
    for (const auto& style : styles) out.push_back(make_sample(m, id++, style, Split::kTeacherPool));
  }
  return out;
}

const std::vector<Sample>& Corpus::split(Split s) const {
  switch (s) {
    case Split::kProxy: return proxy;
    case Split::kSource: return source;
    case Split::kTarget: return target;
    case Split::kTeacherPool: break;
  }
  throw ValidationError(std::string("corpus has no split '") + split_name(s) + "'");
}

std::vector<std::string> Corpus::target_domains() const {
  std::vector<std::string> ids;
  for (const auto& s : target) {
    if (std::find(ids.begin(), ids.end(), s.domain_id) == ids.end()) ids.push_back(s.domain_id);
  }
  return ids;
}

std::string serialize_records(const std::vector<Sample>& samples) {
  std::string out = "GKDD";
  io::put_u32(out, kRecordVersion);
  io::put_u64(out, samples.size());
  for (const auto& s : samples) {
    io::put_u64(out, s.id);
    io::put_u32(out, static_cast<std::uint32_t>(s.domain_id.size()));
    out += s.domain_id;
    io::put_u32(out, static_cast<std::uint32_t>(s.size));
    io::put_u32(out, static_cast<std::uint32_t>(s.size));
    io::put_u32(out, static_cast<std::uint32_t>(kNumClasses));
    if (s.image.size() != 3 * s.size * s.size) throw DimensionError("serialize_records: image size mismatch");
    for (double v : s.image) io::put_f64(out, v);
    out.push_back(s.labels ? 1 : 0);
    if (s.labels) out.append(s.labels->begin(), s.labels->end());
  }
  return out;
}

std::vector<Sample> deserialize_records(const std::string& bytes, Split split) {
  io::Reader r(bytes);
  if (r.take(4) != "GKDD") throw IoError("not a corpus record file (bad magic)");
  const auto version = r.u32();
  if (version != kRecordVersion) throw IoError("unsupported record version " + std::to_string(version));
  const auto count = r.u64();
  std::vector<Sample> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Sample s;
    s.split = split;
    s.id = r.u64();
    s.domain_id = std::string(r.take(r.u32()));
    const auto h = r.u32(), w = r.u32(), k = r.u32();
    if (h != w || k != kNumClasses) throw IoError("record " + std::to_string(s.id) + ": unsupported geometry");
    s.size = h;
    s.image.resize(3 * std::size_t{h} * w);
    for (auto& v : s.image) v = r.f64();
    const auto flag = r.u8();
    if (flag > 1) throw IoError("record " + std::to_string(s.id) + ": bad label flag");
    if (flag == 1) {
      const auto raw = r.take(std::size_t{h} * w);
      s.labels.emplace(raw.begin(), raw.end());
      for (auto v : *s.labels) {
        if (v >= kNumClasses) throw IoError("record " + std::to_string(s.id) + ": label out of range");
      }
    }
    out.push_back(std::move(s));
  }
  if (!r.done()) throw IoError("trailing bytes after corpus records");
  return out;
}

BuildSummary build_corpus(const SplitManifest& m, const fs::path& dir, bool overwrite) {
  m.validate();
  if (fs::exists(dir / "manifest.json") && !overwrite) {
    throw ExistsError("corpus already exists at '" + dir.string() + "' (pass --overwrite to replace)");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  BuildSummary summary;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const Split splits[] = {Split::kProxy, Split::kSource, Split::kTarget};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto samples = generate_split(m, splits[i]);
    const auto bytes = serialize_records(samples);
    h = fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()}, h);
    io::write_file(dir / kSplitFiles[i], bytes);
    if (splits[i] == Split::kProxy) summary.proxy = samples.size();
    if (splits[i] == Split::kTarget) summary.target = samples.size();
    if (splits[i] == Split::kSource) {
      summary.source = samples.size();
      summary.source_labeled = static_cast<std::size_t>(
          std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.labels.has_value(); }));
    }
  }
  summary.hash = h;

  json j = json::parse(m.to_json());
  j["summary"] = {{"proxy", summary.proxy},
                  {"source", summary.source},
                  {"source_labeled", summary.source_labeled},
                  {"target", summary.target},
                  {"hash", summary.hash}};
  io::write_file(dir / "manifest.json", j.dump(2) + "\n");
  return summary;
}

Corpus load_corpus(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw MissingInputError("no corpus at '" + dir.string() + "' (run build-corpus first)");
  }
  Corpus c;
  c.manifest = SplitManifest::from_json(io::read_file(dir / "manifest.json"));
  c.proxy = deserialize_records(io::read_file(dir / kSplitFiles[0]), Split::kProxy);
  c.source = deserialize_records(io::read_file(dir / kSplitFiles[1]), Split::kSource);
  c.target = deserialize_records(io::read_file(dir / kSplitFiles[2]), Split::kTarget);
  for (const auto& s : c.proxy) {
    if (s.labels) throw IoError("proxy record " + std::to_string(s.id) + " carries labels");
  }
  return c;
}

std::uint64_t corpus_hash(const fs::path& dir) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* name : kSplitFiles) {
    const auto bytes = io::read_file(dir / name);
    h = fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()}, h);
  }
  return h;
}

ad::Tensor stack_images(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ValidationError("stack_images: empty batch");
  const std::size_t n = samples.front()->size;
  std::vector<double> values;
  values.reserve(samples.size() * 3 * n * n);
  for (const auto* s : samples) {
    if (s->size != n) throw DimensionError("stack_images: mixed image sizes");
    values.insert(values.end(), s->image.begin(), s->image.end());
  }
  return ad::Tensor({samples.size(), 3, n, n}, std::move(values));
}

}  // namespace gkd::data
