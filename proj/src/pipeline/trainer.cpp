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
#include <numeric>

#include <json.hpp>

#include "gkd/checkpoint.hpp"
#include "gkd/errors.hpp"
#include "gkd/ops.hpp"
#include "gkd/pipeline.hpp"
#include "gkd/random.hpp"

namespace gkd::pipeline {

using ad::Tensor;
using data::Sample;
using nlohmann::ordered_json;

// ---------------------------------------------------------------- bundle

ParamSet& StudentBundle::group(const std::string& name) {
  return const_cast<ParamSet&>(std::as_const(*this).group(name));
}

const ParamSet& StudentBundle::group(const std::string& name) const {
  if (name == "encoder") return encoder.params;
  if (name == "decoder") return decoder.params;
  if (name == "qsd_head") return head.params;
  if (name == "adapter") return adapter;
  throw ValidationError("unknown parameter group '" + name + "'");
}

std::map<std::string, std::uint64_t> StudentBundle::hashes() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& g : group_names()) out[g] = group(g).hash();
  return out;
}

StudentBundle StudentBundle::clone() const {
  StudentBundle b{encoder, decoder, head, {}};
  b.encoder.params = encoder.params.clone();
  b.decoder.params = decoder.params.clone();
  b.head.params = head.params.clone();
  b.adapter = adapter.clone();
  return b;
}

StudentBundle init_student(const models::EncoderConfig& cfg, std::size_t teacher_dim, std::size_t classes,
                           std::uint64_t seed) {
  StudentBundle b;
  b.encoder = models::init_encoder(cfg, derive_seed({seed, 1}));
  b.decoder = models::init_decoder(cfg.dim, classes, cfg.grid(), cfg.image_size, derive_seed({seed, 2}));
  b.head = qsd::init_qsd_head(cfg.dim, teacher_dim, derive_seed({seed, 3}));
  Rng rng(derive_seed({seed, 4}));
  std::vector<double> w(cfg.dim * teacher_dim);
  for (auto& v : w) v = rng.truncated_normal(0.02);
  b.adapter.add("adapter.weight", Tensor({cfg.dim, teacher_dim}, std::move(w)));
  b.adapter.add("adapter.bias", Tensor({teacher_dim}));
  return b;
}

// ---------------------------------------------------------------- teacher

Teacher::Teacher(models::Encoder encoder, models::Decoder aux_head)
    : encoder_(std::move(encoder)), aux_(std::move(aux_head)) {
  encoder_.params.set_trainable(false);
  aux_.params.set_trainable(false);
}

double Teacher::grad_norm() const {
  double total = 0.0;
  for (const auto& [name, t] : encoder_.params.items()) {
    if (!t.node()->grad.empty()) {
      for (double g : t.node()->grad) total += std::abs(g);
    }
  }
  return total;
}

qsd::TeacherFeatures Teacher::features(const std::vector<const Sample*>& batch) {
  std::vector<const Sample*> missing;
  for (const auto* s : batch) {
    if (!cache_.count(s->id) &&
        std::none_of(missing.begin(), missing.end(), [&](const Sample* m) { return m->id == s->id; })) {
      missing.push_back(s);
    }
  }
  const std::size_t c = encoder_.config.dim, n = encoder_.config.num_patches();
  for (std::size_t off = 0; off < missing.size(); off += 32) {
    const std::vector<const Sample*> chunk(missing.begin() + off,
                                           missing.begin() + std::min(missing.size(), off + 32));
    const auto out = models::encode(encoder_, data::stack_images(chunk));
    const auto cls = out.cls.values();
    const auto tok = out.tokens.values();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      cache_[chunk[i]->id] = {std::vector<double>(cls.begin() + i * c, cls.begin() + (i + 1) * c),
                              std::vector<double>(tok.begin() + i * n * c, tok.begin() + (i + 1) * n * c)};
    }
  }
  std::vector<double> cls, tok;
  cls.reserve(batch.size() * c);
  tok.reserve(batch.size() * n * c);
  for (const auto* s : batch) {
    const auto& [fc, ft] = cache_.at(s->id);
    cls.insert(cls.end(), fc.begin(), fc.end());
    tok.insert(tok.end(), ft.begin(), ft.end());
  }
  return {Tensor({batch.size(), 1, c}, std::move(cls)), Tensor({batch.size(), n, c}, std::move(tok))};
}

// ---------------------------------------------------------------- plans

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kQsd: return "qsd";
    case Objective::kPointwise: return "pointwise";
    case Objective::kTask: return "task";
    case Objective::kJoint: return "joint";
    case Objective::kJointQsd: return "joint_qsd";
    case Objective::kTeacher: return "teacher";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  for (auto o : {Objective::kQsd, Objective::kPointwise, Objective::kTask, Objective::kJoint, Objective::kJointQsd,
                 Objective::kTeacher}) {
    if (name == objective_name(o)) return o;
  }
  throw ValidationError("unknown objective '" + name + "'");
}

void TrainConfig::validate() const {
  student.validate();
  weights.validate();
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ValidationError("mask_ratio must lie in (0, 1)");
  if (!(qsd_options.temperature > 0.0)) throw ValidationError("qsd temperature must be positive");
  if (batch == 0) throw ValidationError("batch must be positive");
  for (double lr : {distill_lr, decoder_lr, backbone_lr}) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("learning rates must be finite and nonnegative");
  }
  if (!(distill_weight >= 0.0) || !std::isfinite(distill_weight)) {
    throw ValidationError("distill_weight must be finite and nonnegative");
  }
  data::labeled_count(1, label_fraction);
}

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {"gkd", "pointwise_kd", "single_stage", "single_stage_qsd",
                                                 "no_distill"};
  return names;
}

StagePlan make_plan(const std::string& method, const TrainConfig& c) {
  c.validate();
  StagePlan plan{method, {}};
  const auto multi_stage = [&](Objective distill, const char* head) {
    const std::map<std::string, double> lrs = {{"encoder", c.distill_lr}, {head, c.distill_lr}};
    if (!c.skip_task_agnostic) {
      plan.stages.push_back({"task_agnostic", distill, data::Split::kProxy, c.stage1_steps, c.batch, lrs, 1.0});
    }
    if (!c.skip_domain_agnostic) {
      plan.stages.push_back({"domain_agnostic", distill, data::Split::kSource, c.stage2_steps, c.batch, lrs, 1.0});
    }
    plan.stages.push_back({"task_learning", Objective::kTask, data::Split::kSource, c.stage3_steps, c.batch,
                           {{"decoder", c.decoder_lr}}, 1.0});
  };
  if (method == "gkd") {
    multi_stage(Objective::kQsd, "qsd_head");
  } else if (method == "pointwise_kd") {
    multi_stage(Objective::kPointwise, "adapter");
  } else if (method == "single_stage") {
    plan.stages.push_back({"joint", Objective::kJoint, data::Split::kSource, c.joint_steps, c.batch,
                           {{"encoder", c.backbone_lr}, {"decoder", c.decoder_lr}, {"adapter", c.decoder_lr}},
                           c.distill_weight});
  } else if (method == "single_stage_qsd") {
    plan.stages.push_back({"joint", Objective::kJointQsd, data::Split::kSource, c.joint_steps, c.batch,
                           {{"encoder", c.backbone_lr}, {"decoder", c.decoder_lr}, {"qsd_head", c.decoder_lr}},
                           c.distill_weight});
  } else if (method == "no_distill") {
    plan.stages.push_back({"supervised", Objective::kTask, data::Split::kSource, c.joint_steps, c.batch,
                           {{"encoder", c.backbone_lr}, {"decoder", c.decoder_lr}}, 1.0});
  } else {
    throw ValidationError("unknown method '" + method +
                          "' (expected gkd, pointwise_kd, single_stage, single_stage_qsd or no_distill)");
  }
  return plan;
}

std::string plan_json(const StagePlan& plan, const TrainConfig& c, std::uint64_t seed) {
  ordered_json stages = ordered_json::array();
  for (const auto& s : plan.stages) {
    ordered_json lrs = ordered_json::object();
    for (const auto& [g, lr] : s.lrs) lrs[g] = lr;
    stages.push_back({{"name", s.name},
                      {"objective", objective_name(s.objective)},
                      {"split", data::split_name(s.split)},
                      {"steps", s.steps},
                      {"batch", s.batch},
                      {"lrs", lrs},
                      {"distill_weight", s.distill_weight}});
  }
  const auto& e = c.student;
  ordered_json j = {
      {"method", plan.method},
      {"seed", seed},
      {"student", {{"image_size", e.image_size}, {"patch_size", e.patch_size}, {"depth", e.depth},
                   {"dim", e.dim}, {"heads", e.heads}, {"mlp_ratio", e.mlp_ratio}}},
      {"mask_ratio", c.mask_ratio},
      {"weights", {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}, {"gamma", c.weights.gamma}}},
      {"temperature", c.qsd_options.temperature},
      {"cls_attend_all", c.qsd_options.cls_attend_all},
      {"label_fraction", c.label_fraction},
      {"adamw", {{"beta1", c.adamw.beta1}, {"beta2", c.adamw.beta2}, {"eps", c.adamw.eps},
                 {"weight_decay", c.adamw.weight_decay}}},
      {"stages", stages}};
  return j.dump();
}

// ---------------------------------------------------------------- data

std::vector<const Sample*> labeled_subset(const data::Corpus& corpus, double fraction) {
  const auto keep = data::labeled_count(corpus.manifest.source_count, fraction);
  const auto ranks = data::source_label_ranks(corpus.manifest);
  std::vector<const Sample*> out;
  for (std::size_t i = 0; i < corpus.source.size(); ++i) {
    if (ranks[i] >= keep) continue;
    if (!corpus.source[i].labels) {
      throw ValidationError("label fraction " + std::to_string(fraction) +
                            " exceeds the corpus label fraction " + std::to_string(corpus.manifest.label_fraction));
    }
    out.push_back(&corpus.source[i]);
  }
  return out;
}

namespace {

// Epoch-wise shuffled stream over a fixed pool; batches may straddle epochs.
class Loader {
 public:
  Loader(std::vector<const Sample*> pool, std::size_t batch, std::uint64_t seed)
      : pool_(std::move(pool)), batch_(std::min(batch, pool_.size())), seed_(seed) {
    if (pool_.empty()) throw ValidationError("loader: empty sample pool");
    for (const auto* s : pool_) {
      if (s->split == data::Split::kTarget) {
        throw ContractError("loader: target sample " + std::to_string(s->id) + " offered to a training stage");
      }
    }
  }

  std::vector<const Sample*> next() {
    std::vector<const Sample*> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(pool_[order_[pos_++]]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(pool_.size());
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(derive_seed({seed_, epoch_++}));
    std::shuffle(order_.begin(), order_.end(), rng.engine());
    pos_ = 0;
  }

  std::vector<const Sample*> pool_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::vector<std::int32_t> batch_labels(const std::vector<const Sample*>& batch) {
  std::vector<std::int32_t> out;
  for (const auto* s : batch) {
    if (!s->labels) throw ContractError("supervised stage received unlabeled sample " + std::to_string(s->id));
    out.insert(out.end(), s->labels->begin(), s->labels->end());
  }
  return out;
}

// [B, K, H, W] logits against per-pixel labels.
Tensor pixel_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  const std::size_t k = logits.dim(1);
  const Tensor rows = ad::reshape(ad::permute(logits, {0, 2, 3, 1}), {labels.size(), k});
  return ad::cross_entropy(rows, labels, data::kIgnoreIndex);
}

Tensor pointwise_loss(const ParamSet& adapter, const Tensor& v_s, const Tensor& v_t) {
  return ad::mse(ad::linear(v_s, adapter.get("adapter.weight"), adapter.get("adapter.bias")), v_t);
}

std::vector<models::MaskSpec> batch_masks(std::size_t n, std::size_t count, double ratio, std::uint64_t seed) {
  std::vector<models::MaskSpec> masks;
  for (std::size_t b = 0; b < count; ++b) masks.push_back(models::sample_mask(n, ratio, derive_seed({seed, b})));
  return masks;
}

// Encoder tokens for a frozen encoder, computed once per sample.
class TokenCache {
 public:
  explicit TokenCache(const models::Encoder& enc) : enc_(enc) {}

  Tensor tokens(const std::vector<const Sample*>& batch) {
    std::vector<const Sample*> missing;
    for (const auto* s : batch) {
      if (!cache_.count(s->id) &&
          std::none_of(missing.begin(), missing.end(), [&](const Sample* m) { return m->id == s->id; })) {
        missing.push_back(s);
      }
    }
    const std::size_t c = enc_.config.dim, n = enc_.config.num_patches();
    if (!missing.empty()) {
      const Tensor encoded = models::encode(enc_, data::stack_images(missing)).tokens;
      const auto tok = encoded.values();
      for (std::size_t i = 0; i < missing.size(); ++i) {
        cache_[missing[i]->id].assign(tok.begin() + i * n * c, tok.begin() + (i + 1) * n * c);
      }
    }
    std::vector<double> out;
    out.reserve(batch.size() * n * c);
    for (const auto* s : batch) out.insert(out.end(), cache_.at(s->id).begin(), cache_.at(s->id).end());
    return Tensor({batch.size(), n, c}, std::move(out));
  }

 private:
  const models::Encoder& enc_;
  std::unordered_map<std::uint64_t, std::vector<double>> cache_;
};

}  // namespace

// ---------------------------------------------------------------- stages

void run_stage(const StageSpec& stage, StudentBundle& student, const RunContext& ctx, RunRecord& record) {
  tune_allocator();
  if (!ctx.corpus || !ctx.teacher) throw ValidationError("run_stage: corpus and teacher are required");
  const auto& cfg = ctx.config;
  const std::size_t stage_index = record.boundaries.size();
  const auto start = std::chrono::steady_clock::now();

  StageBoundary boundary;
  boundary.stage = stage.name;
  boundary.before = student.hashes();
  boundary.teacher_before = ctx.teacher->hash();

  // Pool selection and the task-agnostic guard.
  std::vector<const Sample*> pool;
  const bool supervised = stage.objective == Objective::kTask || stage.objective == Objective::kJoint ||
                          stage.objective == Objective::kJointQsd;
  if (stage.split == data::Split::kTarget) {
    throw ContractError("stage '" + stage.name + "': the target split is evaluation-only");
  }
  if (supervised) {
    if (stage.split != data::Split::kSource) throw ContractError("supervised stages train on the source split");
    pool = labeled_subset(*ctx.corpus, cfg.label_fraction);
  } else {
    for (const auto& s : ctx.corpus->split(stage.split)) {
      if (stage.split == data::Split::kProxy && s.labels) {
        throw ContractError("stage '" + stage.name + "': labeled sample " + std::to_string(s.id) +
                            " in the task-agnostic proxy split");
      }
      pool.push_back(&s);
    }
  }

  for (const auto& g : group_names()) student.group(g).set_trainable(false);
  AdamW opt(cfg.adamw);
  for (const auto& [g, lr] : stage.lrs) {
    student.group(g).set_trainable(true);
    student.group(g).zero_grad();
    opt.add_group(g, student.group(g), lr);
  }
  const bool encoder_frozen = !stage.lrs.count("encoder");

  Loader loader(pool, stage.batch, derive_seed({ctx.seed, 0x4c4f4144ULL, stage_index}));
  TokenCache frozen_tokens(student.encoder);
  const std::size_t n = cfg.student.num_patches();

  for (std::size_t step = 0; step < stage.steps; ++step) {
    const auto batch = loader.next();
    StepEntry entry{stage.name, step, {}, {}};
    for (const auto* s : batch) entry.sample_ids.push_back(s->id);
    const auto mask_seed = derive_seed({ctx.seed, 0x4d41534bULL, stage_index, step});

    Tensor total;
    switch (stage.objective) {
      case Objective::kQsd: {
        const Tensor images = data::stack_images(batch);
        const auto full = models::encode(student.encoder, images);
        qsd::StudentFeatures sf{full.cls, full.tokens, {}};
        if (cfg.weights.beta > 0.0) {
          const auto masks = batch_masks(n, batch.size(), cfg.mask_ratio, mask_seed);
          sf.tokens_masked = models::encode(student.encoder, images, masks).tokens;
        }
        const auto loss = qsd::loss_qsd(student.head, sf, ctx.teacher->features(batch), cfg.weights, cfg.qsd_options);
        total = loss.total;
        entry.losses = {{"total", total.item()}};
        if (loss.feat.defined()) entry.losses.emplace_back("feat", loss.feat.item());
        if (loss.mask.defined()) entry.losses.emplace_back("mask", loss.mask.item());
        if (loss.cls.defined()) entry.losses.emplace_back("cls", loss.cls.item());
        break;
      }
      case Objective::kPointwise: {
        const auto out = models::encode(student.encoder, data::stack_images(batch));
        total = pointwise_loss(student.adapter, out.tokens, ctx.teacher->features(batch).tokens);
        entry.losses = {{"total", total.item()}, {"distill", total.item()}};
        break;
      }
      case Objective::kTask: {
        const auto labels = batch_labels(batch);
        const Tensor tokens = encoder_frozen ? frozen_tokens.tokens(batch)
                                             : models::encode(student.encoder, data::stack_images(batch)).tokens;
        total = pixel_cross_entropy(models::decode(student.decoder, tokens), labels);
        entry.losses = {{"total", total.item()}, {"task", total.item()}};
        break;
      }
      case Objective::kJoint:
      case Objective::kJointQsd: {
        const auto labels = batch_labels(batch);
        const Tensor images = data::stack_images(batch);
        const auto full = models::encode(student.encoder, images);
        const Tensor task = pixel_cross_entropy(models::decode(student.decoder, full.tokens), labels);
        total = task;
        double distill_value = 0.0;
        if (stage.distill_weight > 0.0) {
          const auto teacher = ctx.teacher->features(batch);
          Tensor distill;
          if (stage.objective == Objective::kJoint) {
            distill = pointwise_loss(student.adapter, full.tokens, teacher.tokens);
          } else {
            qsd::StudentFeatures sf{full.cls, full.tokens, {}};
            if (cfg.weights.beta > 0.0) {
              const auto masks = batch_masks(n, batch.size(), cfg.mask_ratio, mask_seed);
              sf.tokens_masked = models::encode(student.encoder, images, masks).tokens;
            }
            distill = qsd::loss_qsd(student.head, sf, teacher, cfg.weights, cfg.qsd_options).total;
          }
          distill_value = distill.item();
          total = ad::add(task, stage.distill_weight == 1.0 ? distill : ad::scale(distill, stage.distill_weight));
        }
        entry.losses = {{"total", total.item()}, {"task", task.item()}, {"distill", distill_value}};
        break;
      }
      case Objective::kTeacher:
        throw ValidationError("teacher objective runs through pretrain_teacher");
    }

    if (!std::isfinite(total.item())) {
      throw RunError("stage '" + stage.name + "' step " + std::to_string(step) + ": loss is not finite");
    }
    if (total.requires_grad()) {
      ad::backward(total);
      opt.step();
    }
    for (const auto& [g, lr] : stage.lrs) student.group(g).zero_grad();
    entry.losses.emplace_back("teacher_grad_norm", ctx.teacher->grad_norm());
    record.steps.push_back(std::move(entry));
  }

  for (const auto& g : group_names()) student.group(g).set_trainable(false);
  boundary.after = student.hashes();
  boundary.teacher_after = ctx.teacher->hash();
  if (boundary.teacher_after != boundary.teacher_before) {
    throw ContractError("stage '" + stage.name + "': teacher parameters changed");
  }
  for (const auto& g : group_names()) {
    if (!stage.lrs.count(g) && boundary.before.at(g) != boundary.after.at(g)) {
      throw ContractError("stage '" + stage.name + "': frozen group '" + g + "' was updated");
    }
  }
  const auto bytes = student_checkpoint(student);
  boundary.checkpoint_hash = fnv1a64(bytes);
  boundary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  record.boundaries.push_back(std::move(boundary));
}

std::pair<StudentBundle, RunRecord> run_plan(const StagePlan& plan, const RunContext& ctx) {
  ctx.config.validate();
  if (!ctx.corpus || !ctx.teacher) throw ValidationError("run_plan: corpus and teacher are required");
  if (ctx.config.student.image_size != ctx.corpus->manifest.image_size) {
    throw ValidationError("student image_size does not match the corpus");
  }
  StudentBundle student = init_student(ctx.config.student, ctx.teacher->encoder().config.dim, data::kNumClasses,
                                       ctx.seed);
  RunRecord record;
  record.header_json = plan_json(plan, ctx.config, ctx.seed);
  for (const auto& stage : plan.stages) run_stage(stage, student, ctx, record);
  return {std::move(student), std::move(record)};
}

// ---------------------------------------------------------------- checkpoints

std::string student_checkpoint(const StudentBundle& s) {
  std::vector<NamedTensor> t;
  io::append_encoder(t, "encoder.", s.encoder);
  io::append_decoder(t, "decoder.", s.decoder);
  io::append_params(t, "qsd_head.", s.head.params);
  io::append_params(t, "adapter.", s.adapter);
  return io::serialize_tensors(t);
}

StudentBundle load_student_checkpoint(const std::string& bytes) {
  const auto t = io::deserialize_tensors(bytes);
  StudentBundle s;
  s.encoder = io::extract_encoder(t, "encoder.");
  s.decoder = io::extract_decoder(t, "decoder.");
  s.head.params = io::extract_params(t, "qsd_head.");
  if (!s.head.params.contains("phi.weight")) throw IoError("student checkpoint lacks the qsd head");
  s.head.student_dim = s.head.params.get("phi.weight").dim(0);
  s.head.teacher_dim = s.head.params.get("phi.weight").dim(1);
  s.adapter = io::extract_params(t, "adapter.");
  return s;
}

}  // namespace gkd::pipeline
