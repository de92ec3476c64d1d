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

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gkd/datagen.hpp"
#include "gkd/models.hpp"
#include "gkd/params.hpp"
#include "gkd/qsd.hpp"

namespace gkd::pipeline {

// Raises glibc malloc thresholds once per process; no-op elsewhere.
void tune_allocator();

// ---------------------------------------------------------------- optimizer

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// One decoupled-decay AdamW step on a flat buffer; t is the 1-based step.
//   p <- p * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g ;  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
void adamw_update(std::span<double> p, std::span<const double> g, std::span<double> m,
                  std::span<double> v, std::uint64_t t, double lr, const AdamWConfig& cfg);

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  // Registers every tensor of `params` under "<group>/<name>".
  void add_group(const std::string& group, ParamSet& params, double lr);
  // Applies one update from the accumulated gradients. Throws NumericError
  // naming the first parameter whose gradient is not finite; no parameter is
  // modified in that case.
  void step();
  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  struct Slot {
    std::string name;
    ad::Tensor param;
    double lr;
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------- models

// Everything a student run may train. Group names: encoder, decoder,
// qsd_head, adapter.
struct StudentBundle {
  models::Encoder encoder;
  models::Decoder decoder;
  qsd::QsdHead head;
  ParamSet adapter;  // adapter.weight [C_s, C_t], adapter.bias [C_t]

  ParamSet& group(const std::string& name);
  const ParamSet& group(const std::string& name) const;
  std::map<std::string, std::uint64_t> hashes() const;
  StudentBundle clone() const;
};

inline const std::vector<std::string>& group_names() {
  static const std::vector<std::string> names = {"encoder", "decoder", "qsd_head", "adapter"};
  return names;
}

StudentBundle init_student(const models::EncoderConfig& student, std::size_t teacher_dim,
                           std::size_t classes, std::uint64_t seed);

// Frozen teacher plus a cache of its per-sample features. The teacher is
// deterministic and never trained after pretraining, so each sample is
// encoded once.
class Teacher {
 public:
  Teacher(models::Encoder encoder, models::Decoder aux_head);

  const models::Encoder& encoder() const { return encoder_; }
  const models::Decoder& aux_head() const { return aux_; }
  std::uint64_t hash() const { return encoder_.params.hash(); }
  // Sum of |grad| over teacher parameters; zero unless something leaked a
  // gradient into the teacher.
  double grad_norm() const;

  qsd::TeacherFeatures features(const std::vector<const data::Sample*>& batch);

 private:
  models::Encoder encoder_;
  models::Decoder aux_;
  std::unordered_map<std::uint64_t, std::pair<std::vector<double>, std::vector<double>>> cache_;
};

// ---------------------------------------------------------------- plans

enum class Objective {
  kQsd,        // alpha L_feat + beta L_mask + gamma L_cls
  kPointwise,  // || v_t - adapter(v_s) ||^2 over patch tokens
  kTask,       // pixel cross-entropy through the decoder
  kJoint,      // task + distill_weight * pointwise
  kJointQsd,   // task + distill_weight * QSD
  kTeacher,    // teacher pretraining with its auxiliary head
};
const char* objective_name(Objective o);
Objective parse_objective(const std::string& name);

struct StageSpec {
  std::string name;
  Objective objective = Objective::kQsd;
  data::Split split = data::Split::kProxy;
  std::size_t steps = 0;
  std::size_t batch = 16;
  // Learning rate per trainable group; every other group is frozen.
  std::map<std::string, double> lrs;
  double distill_weight = 1.0;
};

struct StagePlan {
  std::string method;
  std::vector<StageSpec> stages;
};

struct TrainConfig {
  models::EncoderConfig student = models::EncoderConfig::student_default();
  double mask_ratio = 0.4;
  qsd::QsdWeights weights;
  qsd::QsdOptions qsd_options;
  std::size_t stage1_steps = 2000;
  std::size_t stage2_steps = 2000;
  std::size_t stage3_steps = 1500;
  std::size_t joint_steps = 1500;
  std::size_t batch = 16;
  double distill_lr = 5e-4;
  double decoder_lr = 1e-4;
  double backbone_lr = 1e-5;
  double distill_weight = 1.0;  // single-stage baselines
  double label_fraction = 1.0;
  bool skip_task_agnostic = false;
  bool skip_domain_agnostic = false;
  AdamWConfig adamw;

  void validate() const;
};

// Methods: gkd, pointwise_kd, single_stage, single_stage_qsd, no_distill.
StagePlan make_plan(const std::string& method, const TrainConfig& config);
const std::vector<std::string>& method_names();

// ---------------------------------------------------------------- records

struct StepEntry {
  std::string stage;
  std::size_t step = 0;
  std::vector<std::pair<std::string, double>> losses;  // "total" first
  std::vector<std::uint64_t> sample_ids;

  double loss(const std::string& name) const;
};

struct StageBoundary {
  std::string stage;
  std::map<std::string, std::uint64_t> before;  // group -> parameter hash
  std::map<std::string, std::uint64_t> after;
  std::uint64_t teacher_before = 0;
  std::uint64_t teacher_after = 0;
  std::uint64_t checkpoint_hash = 0;  // FNV-1a of the stage-end checkpoint bytes
  double wall_seconds = 0.0;
};

struct RunRecord {
  std::string header_json = "{}";  // effective config and plan
  std::vector<StepEntry> steps;
  std::vector<StageBoundary> boundaries;

  std::string to_jsonl() const;
  static RunRecord from_jsonl(const std::string& text);
  std::vector<double> curve(const std::string& stage, const std::string& term) const;
  const StageBoundary& boundary(const std::string& stage) const;
};

// ---------------------------------------------------------------- training

struct RunContext {
  const data::Corpus* corpus = nullptr;
  Teacher* teacher = nullptr;
  TrainConfig config;
  std::uint64_t seed = 0;
};

// Source samples used for supervised stages at `fraction`: the labeled
// prefix of the deterministic label order, in corpus order.
std::vector<const data::Sample*> labeled_subset(const data::Corpus& corpus, double fraction);

// Runs one stage in place, appending to `record`. Enforces the frozen-group
// and target-quarantine contracts (ContractError) and fails with RunError on a
// non-finite loss.
void run_stage(const StageSpec& stage, StudentBundle& student, const RunContext& ctx, RunRecord& record);

// Runs every stage of `plan` on a freshly initialised student.
std::pair<StudentBundle, RunRecord> run_plan(const StagePlan& plan, const RunContext& ctx);

std::string plan_json(const StagePlan& plan, const TrainConfig& config, std::uint64_t seed);

// Checkpoint bytes for a student bundle (encoder, decoder, qsd head, adapter).
std::string student_checkpoint(const StudentBundle& student);
StudentBundle load_student_checkpoint(const std::string& bytes);

// ---------------------------------------------------------------- teacher

struct TeacherConfig {
  models::EncoderConfig encoder = models::EncoderConfig::teacher_default();
  std::size_t pool_per_style = 256;
  std::size_t val_per_style = 16;
  std::size_t steps = 1500;
  std::size_t batch = 16;
  double lr = 5e-4;
  AdamWConfig adamw;
};

struct TeacherResult {
  models::Encoder encoder;
  models::Decoder aux_head;
  double val_miou = 0.0;
  RunRecord record;
};

// Trains the teacher and its auxiliary head on a labeled pool drawn from the
// proxy and source styles of `manifest`. Target styles are never rendered.
TeacherResult pretrain_teacher(const data::SplitManifest& manifest, const TeacherConfig& config,
                               std::uint64_t seed);

std::string teacher_checkpoint(const TeacherResult& teacher);
TeacherResult load_teacher_checkpoint(const std::string& bytes);

}  // namespace gkd::pipeline
