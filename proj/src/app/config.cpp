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

#include <cmath>
#include <cstdio>
#include <set>

#include "gkd/app.hpp"
#include "gkd/checkpoint.hpp"
#include "gkd/errors.hpp"
#include "json.hpp"

namespace gkd::app {

using nlohmann::ordered_json;

namespace {

void check_keys(const ordered_json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ordered_json encoder_json(const models::EncoderConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"depth", c.depth},
          {"dim", c.dim},               {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio}};
}

models::EncoderConfig encoder_from(const ordered_json& j, const std::string& where, models::EncoderConfig c) {
  check_keys(j, where, {"image_size", "patch_size", "depth", "dim", "heads", "mlp_ratio"});
  read(j, "image_size", c.image_size);
  read(j, "patch_size", c.patch_size);
  read(j, "depth", c.depth);
  read(j, "dim", c.dim);
  read(j, "heads", c.heads);
  read(j, "mlp_ratio", c.mlp_ratio);
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  manifest.validate();
  teacher.encoder.validate();
  train.validate();
  if (teacher.encoder.image_size != manifest.image_size || train.student.image_size != manifest.image_size) {
    throw ValidationError("teacher and student image_size must equal the manifest image_size");
  }
  if (teacher.encoder.patch_size != train.student.patch_size) {
    throw ValidationError("teacher and student must share the patch size");
  }
  if (teacher.steps == 0 || teacher.batch == 0 || teacher.pool_per_style == 0) {
    throw ValidationError("teacher steps, batch and pool_per_style must be positive");
  }
  if (!(teacher.lr > 0.0) || !std::isfinite(teacher.lr)) throw ValidationError("teacher lr must be positive");
  if (seeds.empty()) throw ValidationError("seeds must be nonempty");
  if (methods.empty()) throw ValidationError("methods must be nonempty");
  if (label_fractions.empty()) throw ValidationError("label_fractions must be nonempty");
  for (const auto& m : methods) {
    bool known = false;
    for (const auto& n : pipeline::method_names()) known = known || n == m;
    if (!known) throw ValidationError("unknown method '" + m + "'");
  }
  for (double f : label_fractions) {
    data::labeled_count(manifest.source_count, f);
    if (f > manifest.label_fraction) {
      throw ValidationError("label fraction " + fraction_tag(f) + " exceeds the manifest label_fraction");
    }
  }
  if (out.empty()) throw ValidationError("out must be set");
}

std::string ExperimentConfig::to_json() const {
  ordered_json j;
  j["manifest_path"] = manifest_path.string();
  j["manifest"] = ordered_json::parse(manifest.to_json());
  j["out"] = out.string();
  j["corpus_dir"] = corpus().string();
  j["teacher_path"] = teacher_file().string();
  j["teacher"] = {{"encoder", encoder_json(teacher.encoder)},
                  {"pool_per_style", teacher.pool_per_style},
                  {"val_per_style", teacher.val_per_style},
                  {"steps", teacher.steps},
                  {"batch", teacher.batch},
                  {"lr", teacher.lr},
                  {"seed", teacher_seed}};
  j["student"] = encoder_json(train.student);
  const auto& t = train;
  j["train"] = {{"mask_ratio", t.mask_ratio},
                {"stage1_steps", t.stage1_steps},
                {"stage2_steps", t.stage2_steps},
                {"stage3_steps", t.stage3_steps},
                {"joint_steps", t.joint_steps},
                {"batch", t.batch},
                {"distill_lr", t.distill_lr},
                {"decoder_lr", t.decoder_lr},
                {"backbone_lr", t.backbone_lr},
                {"distill_weight", t.distill_weight},
                {"skip_task_agnostic", t.skip_task_agnostic},
                {"skip_domain_agnostic", t.skip_domain_agnostic},
                {"weight_decay", t.adamw.weight_decay},
                {"beta1", t.adamw.beta1},
                {"beta2", t.adamw.beta2},
                {"eps", t.adamw.eps}};
  j["qsd"] = {{"alpha", t.weights.alpha},
              {"beta", t.weights.beta},
              {"gamma", t.weights.gamma},
              {"temperature", t.qsd_options.temperature},
              {"cls_attend_all", t.qsd_options.cls_attend_all}};
  j["methods"] = methods;
  j["seeds"] = seeds;
  j["label_fractions"] = label_fractions;
  j["parallel"] = parallel;
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text, const std::filesystem::path& base) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  try {
    check_keys(j, "config",
               {"manifest", "manifest_path", "out", "corpus_dir", "teacher_path", "teacher", "student", "train", "qsd",
                "methods", "seeds", "label_fractions", "parallel"});
    if (j.contains("manifest")) {
      const auto& m = j.at("manifest");
      if (m.is_string()) {
        std::filesystem::path p = m.get<std::string>();
        if (p.is_relative() && !base.empty()) p = base / p;
        if (!std::filesystem::exists(p)) throw MissingInputError("manifest not found: " + p.string());
        c.manifest_path = p;
        c.manifest = data::SplitManifest::from_json(io::read_file(p));
      } else {
        c.manifest = data::SplitManifest::from_json(m.dump());
      }
    }
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("corpus_dir")) c.corpus_dir = j.at("corpus_dir").get<std::string>();
    if (j.contains("teacher_path")) c.teacher_path = j.at("teacher_path").get<std::string>();
    if (j.contains("teacher")) {
      const auto& t = j.at("teacher");
      check_keys(t, "teacher", {"encoder", "pool_per_style", "val_per_style", "steps", "batch", "lr", "seed"});
      if (t.contains("encoder")) c.teacher.encoder = encoder_from(t.at("encoder"), "teacher.encoder", c.teacher.encoder);
      read(t, "pool_per_style", c.teacher.pool_per_style);
      read(t, "val_per_style", c.teacher.val_per_style);
      read(t, "steps", c.teacher.steps);
      read(t, "batch", c.teacher.batch);
      read(t, "lr", c.teacher.lr);
      read(t, "seed", c.teacher_seed);
    }
    if (j.contains("student")) c.train.student = encoder_from(j.at("student"), "student", c.train.student);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      auto& x = c.train;
      check_keys(t, "train",
                 {"mask_ratio", "stage1_steps", "stage2_steps", "stage3_steps", "joint_steps", "batch", "distill_lr",
                  "decoder_lr", "backbone_lr", "distill_weight", "skip_task_agnostic", "skip_domain_agnostic",
                  "weight_decay", "beta1", "beta2", "eps"});
      read(t, "mask_ratio", x.mask_ratio);
      read(t, "stage1_steps", x.stage1_steps);
      read(t, "stage2_steps", x.stage2_steps);
      read(t, "stage3_steps", x.stage3_steps);
      read(t, "joint_steps", x.joint_steps);
      read(t, "batch", x.batch);
      read(t, "distill_lr", x.distill_lr);
      read(t, "decoder_lr", x.decoder_lr);
      read(t, "backbone_lr", x.backbone_lr);
      read(t, "distill_weight", x.distill_weight);
      read(t, "skip_task_agnostic", x.skip_task_agnostic);
      read(t, "skip_domain_agnostic", x.skip_domain_agnostic);
      read(t, "weight_decay", x.adamw.weight_decay);
      read(t, "beta1", x.adamw.beta1);
      read(t, "beta2", x.adamw.beta2);
      read(t, "eps", x.adamw.eps);
    }
    if (j.contains("qsd")) {
      const auto& q = j.at("qsd");
      check_keys(q, "qsd", {"alpha", "beta", "gamma", "temperature", "cls_attend_all"});
      read(q, "alpha", c.train.weights.alpha);
      read(q, "beta", c.train.weights.beta);
      read(q, "gamma", c.train.weights.gamma);
      read(q, "temperature", c.train.qsd_options.temperature);
      read(q, "cls_attend_all", c.train.qsd_options.cls_attend_all);
    }
    read(j, "methods", c.methods);
    read(j, "seeds", c.seeds);
    read(j, "label_fractions", c.label_fractions);
    read(j, "parallel", c.parallel);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw MissingInputError("config not found: " + path.string());
  return from_json(io::read_file(path), path.parent_path());
}

void Overrides::apply(ExperimentConfig& config) const {
  if (seed) config.seeds = {*seed};
  if (method) config.methods = {*method};
  if (label_fraction) config.label_fractions = {*label_fraction};
  if (out) config.out = *out;
  config.validate();
}

std::string fraction_tag(double fraction) {
  if (fraction == 1.0) return "1";
  const double inv = 1.0 / fraction;
  if (fraction > 0.0 && std::abs(inv - std::round(inv)) < 1e-9) {
    return "1-" + std::to_string(static_cast<long long>(std::llround(inv)));
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", fraction);
  return buf;
}

std::filesystem::path run_dir(const ExperimentConfig& config, const std::string& method, double fraction,
                              std::uint64_t seed) {
  return config.out / "runs" / method / ("lf" + fraction_tag(fraction)) / ("seed" + std::to_string(seed));
}

}  // namespace gkd::app
