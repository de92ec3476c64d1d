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
#include <chrono>
#include <cmath>

#include <json.hpp>

#include "gkd/checkpoint.hpp"
#include "gkd/errors.hpp"
#include "gkd/eval.hpp"
#include "gkd/ops.hpp"
#include "gkd/pipeline.hpp"
#include "gkd/random.hpp"

namespace gkd::pipeline {

using ad::Tensor;

TeacherResult pretrain_teacher(const data::SplitManifest& manifest, const TeacherConfig& cfg, std::uint64_t seed) {
  tune_allocator();
  manifest.validate();
  cfg.encoder.validate();
  if (cfg.encoder.image_size != manifest.image_size) throw ValidationError("teacher image_size does not match corpus");
  if (cfg.pool_per_style == 0 || cfg.batch == 0) throw ValidationError("teacher pool and batch must be positive");
  const auto start = std::chrono::steady_clock::now();

  // Interleaved by style, so the tail is a style-balanced validation slice.
  auto pool = data::generate_teacher_pool(manifest, cfg.pool_per_style + cfg.val_per_style);
  const std::size_t styles = manifest.proxy_styles.size() + manifest.source_styles.size();
  const std::size_t n_train = cfg.pool_per_style * styles;
  std::vector<const data::Sample*> train, val;
  for (std::size_t i = 0; i < pool.size(); ++i) (i < n_train ? train : val).push_back(&pool[i]);

  TeacherResult out;
  out.encoder = models::init_encoder(cfg.encoder, derive_seed({seed, 0x54454eULL}));
  out.aux_head = models::init_decoder(cfg.encoder.dim, data::kNumClasses, cfg.encoder.grid(), cfg.encoder.image_size,
                                      derive_seed({seed, 0x544445ULL}));
  out.encoder.params.set_trainable(true);
  out.aux_head.params.set_trainable(true);
  AdamW opt(cfg.adamw);
  opt.add_group("encoder", out.encoder.params, cfg.lr);
  opt.add_group("aux_head", out.aux_head.params, cfg.lr);

  nlohmann::ordered_json header = {
      {"method", "pretrain_teacher"},
      {"seed", seed},
      {"steps", cfg.steps},
      {"batch", cfg.batch},
      {"lr", cfg.lr},
      {"pool_per_style", cfg.pool_per_style},
      {"val_per_style", cfg.val_per_style},
      {"encoder", {{"depth", cfg.encoder.depth}, {"dim", cfg.encoder.dim}, {"heads", cfg.encoder.heads}}}};
  out.record.header_json = header.dump();

  StageBoundary boundary;
  boundary.stage = "teacher";
  boundary.before = {{"encoder", out.encoder.params.hash()}, {"aux_head", out.aux_head.params.hash()}};

  std::vector<std::size_t> order(train.size());
  std::uint64_t epoch = 0;
  std::size_t pos = order.size();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<const data::Sample*> batch;
    while (batch.size() < std::min(cfg.batch, train.size())) {
      if (pos == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed({seed, 0x45504fULL, epoch++}));
        std::shuffle(order.begin(), order.end(), rng.engine());
        pos = 0;
      }
      batch.push_back(train[order[pos++]]);
    }
    std::vector<std::int32_t> labels;
    StepEntry entry{"teacher", step, {}, {}};
    for (const auto* s : batch) {
      labels.insert(labels.end(), s->labels->begin(), s->labels->end());
      entry.sample_ids.push_back(s->id);
    }
    const auto enc = models::encode(out.encoder, data::stack_images(batch));
    const Tensor logits = models::decode(out.aux_head, enc.tokens);
    const Tensor rows = ad::reshape(ad::permute(logits, {0, 2, 3, 1}), {labels.size(), data::kNumClasses});
    const Tensor loss = ad::cross_entropy(rows, labels, data::kIgnoreIndex);
    if (!std::isfinite(loss.item())) {
      throw RunError("teacher pretraining diverged at step " + std::to_string(step));
    }
    ad::backward(loss);
    opt.step();
    out.encoder.params.zero_grad();
    out.aux_head.params.zero_grad();
    entry.losses = {{"total", loss.item()}, {"task", loss.item()}};
    out.record.steps.push_back(std::move(entry));
  }
  out.encoder.params.set_trainable(false);
  out.aux_head.params.set_trainable(false);

  if (!val.empty()) {
    eval::ConfusionMatrix cm(data::kNumClasses);
    for (std::size_t off = 0; off < val.size(); off += 32) {
      const std::vector<const data::Sample*> chunk(val.begin() + off, val.begin() + std::min(val.size(), off + 32));
      const auto pred = models::argmax_labels(
          models::decode(out.aux_head, models::encode(out.encoder, data::stack_images(chunk)).tokens));
      const std::size_t px = manifest.image_size * manifest.image_size;
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        cm.update(std::span(pred).subspan(i * px, px), *chunk[i]->labels);
      }
    }
    out.val_miou = eval::miou(cm);
  }

  boundary.after = {{"encoder", out.encoder.params.hash()}, {"aux_head", out.aux_head.params.hash()}};
  boundary.teacher_before = boundary.teacher_after = out.encoder.params.hash();
  boundary.checkpoint_hash = fnv1a64(teacher_checkpoint(out));
  boundary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.record.boundaries.push_back(std::move(boundary));
  return out;
}

std::string teacher_checkpoint(const TeacherResult& t) {
  std::vector<NamedTensor> tensors;
  io::append_encoder(tensors, "teacher.", t.encoder);
  io::append_decoder(tensors, "aux_head.", t.aux_head);
  tensors.emplace_back("val_miou", Tensor({1}, std::vector<double>{t.val_miou}));
  return io::serialize_tensors(tensors);
}

TeacherResult load_teacher_checkpoint(const std::string& bytes) {
  const auto tensors = io::deserialize_tensors(bytes);
  if (!io::has_prefix(tensors, "teacher.")) throw IoError("not a teacher checkpoint");
  TeacherResult t;
  t.encoder = io::extract_encoder(tensors, "teacher.");
  t.aux_head = io::extract_decoder(tensors, "aux_head.");
  for (const auto& [name, v] : tensors) {
    if (name == "val_miou") t.val_miou = v.values()[0];
  }
  t.encoder.params.set_trainable(false);
  t.aux_head.params.set_trainable(false);
  return t;
}

}  // namespace gkd::pipeline
