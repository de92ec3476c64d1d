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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "gkd/errors.hpp"
#include "gkd/models.hpp"
#include "gkd/pipeline.hpp"
#include "test_helpers.hpp"

namespace gkd::pipeline {
namespace {

using ad::Tensor;

// 16px images, 4 tokens, one-block encoders: every stage runs in milliseconds.
struct Tiny {
  data::Corpus corpus;
  Teacher teacher;
  TrainConfig config;

  static data::SplitManifest manifest() {
    data::SplitManifest m;
    m.image_size = 16;
    m.proxy_count = 12;
    m.source_count = 32;
    m.target_count_per_domain = 2;
    return m;
  }
  static Teacher make_teacher() {
    return Teacher(models::init_encoder({16, 8, 1, 8, 2, 2.0}, 77), models::init_decoder(8, 5, 2, 16, 78));
  }
  Tiny() : teacher(make_teacher()) {
    corpus.manifest = manifest();
    corpus.proxy = data::generate_split(corpus.manifest, data::Split::kProxy);
    corpus.source = data::generate_split(corpus.manifest, data::Split::kSource);
    corpus.target = data::generate_split(corpus.manifest, data::Split::kTarget);
    config.student = {16, 8, 1, 8, 2, 2.0};
    config.stage1_steps = 4;
    config.stage2_steps = 3;
    config.stage3_steps = 3;
    config.joint_steps = 4;
    config.batch = 4;
  }
  RunContext ctx(std::uint64_t seed = 1) { return {&corpus, &teacher, config, seed}; }
};

TEST(AdamW, SingleScalarClosedForm) {
  std::vector<double> p = {1.0}, g = {0.5}, m = {0.0}, v = {0.0};
  const AdamWConfig cfg;
  adamw_update(p, g, m, v, 1, 0.1, cfg);
  const double mhat = 0.1 * 0.5 / 0.1, vhat = 0.001 * 0.25 / 0.001;
  EXPECT_NEAR(p[0], 1.0 * (1.0 - 0.1 * 0.05) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8), 1e-15);
  EXPECT_NEAR(m[0], 0.05, 1e-15);
  EXPECT_NEAR(v[0], 0.00025, 1e-15);
}

TEST(AdamW, ZeroGradientsAndDecayIsolation) {
  std::vector<double> p = {1.5, -2.0}, g = {0.0, 0.0}, m = {0.0, 0.0}, v = {0.0, 0.0};
  AdamWConfig no_decay;
  no_decay.weight_decay = 0.0;
  adamw_update(p, g, m, v, 1, 0.1, no_decay);
  EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
  adamw_update(p, g, m, v, 2, 5e-4, AdamWConfig{});
  EXPECT_EQ(p[0], 1.5 * (1.0 - 5e-4 * 0.05));
  EXPECT_EQ(p[1], -2.0 * (1.0 - 5e-4 * 0.05));
}

TEST(AdamW, NonFiniteGradientNamesParameterAndLeavesStateUntouched) {
  ParamSet ps;
  ps.add("good", Tensor({2}, {1.0, 2.0}, true));
  ps.add("bad", Tensor({1}, {3.0}, true));
  AdamW opt;
  opt.add_group("encoder", ps, 0.1);
  ps.get("good").mutable_grad()[0] = 1.0;
  ps.get("bad").mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step();
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder/bad"), std::string::npos) << e.what();
  }
  EXPECT_EQ(ps.get("good").values()[0], 1.0);
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(Plans, MethodsAndStageLayout) {
  const TrainConfig cfg;
  const auto gkd = make_plan("gkd", cfg);
  ASSERT_EQ(gkd.stages.size(), 3u);
  EXPECT_EQ(gkd.stages[0].split, data::Split::kProxy);
  EXPECT_EQ(gkd.stages[1].split, data::Split::kSource);
  EXPECT_EQ(gkd.stages[2].objective, Objective::kTask);
  EXPECT_EQ(gkd.stages[2].lrs, (std::map<std::string, double>{{"decoder", 1e-4}}));
  EXPECT_EQ(gkd.stages[0].lrs.at("encoder"), 5e-4);
  EXPECT_EQ(make_plan("pointwise_kd", cfg).stages[0].objective, Objective::kPointwise);
  EXPECT_EQ(make_plan("single_stage", cfg).stages.at(0).lrs.at("encoder"), 1e-5);
  EXPECT_EQ(make_plan("no_distill", cfg).stages.size(), 1u);
  EXPECT_THROW(make_plan("bogus", cfg), ValidationError);
  TrainConfig skip = cfg;
  skip.skip_task_agnostic = true;
  EXPECT_EQ(make_plan("gkd", skip).stages.front().name, "domain_agnostic");
  for (const auto& m : method_names()) EXPECT_NO_THROW(make_plan(m, cfg));
  EXPECT_EQ(parse_objective(objective_name(Objective::kJointQsd)), Objective::kJointQsd);
}

TEST(RunPlan, GkdHonoursStageContracts) {
  Tiny t;
  const auto [student, record] = run_plan(make_plan("gkd", t.config), t.ctx());
  ASSERT_EQ(record.boundaries.size(), 3u);
  for (const auto& b : record.boundaries) EXPECT_EQ(b.teacher_before, b.teacher_after);
  const auto& s3 = record.boundary("task_learning");
  EXPECT_EQ(s3.before.at("encoder"), s3.after.at("encoder"));
  EXPECT_NE(s3.before.at("decoder"), s3.after.at("decoder"));
  for (const char* stage : {"task_agnostic", "domain_agnostic"}) {
    const auto& b = record.boundary(stage);
    EXPECT_EQ(b.before.at("decoder"), b.after.at("decoder")) << stage;
    EXPECT_EQ(b.before.at("adapter"), b.after.at("adapter")) << stage;
    EXPECT_NE(b.before.at("encoder"), b.after.at("encoder")) << stage;
    EXPECT_NE(b.before.at("qsd_head"), b.after.at("qsd_head")) << stage;
  }
  EXPECT_EQ(s3.before.at("qsd_head"), s3.after.at("qsd_head"));

  std::set<std::uint64_t> target_ids;
  for (const auto& s : t.corpus.target) target_ids.insert(s.id);
  std::size_t proxy_steps = 0;
  for (const auto& step : record.steps) {
    EXPECT_EQ(step.loss("teacher_grad_norm"), 0.0);
    EXPECT_TRUE(std::isfinite(step.loss("total")));
    for (auto id : step.sample_ids) EXPECT_EQ(target_ids.count(id), 0u);
    if (step.stage == "task_agnostic") {
      ++proxy_steps;
      EXPECT_EQ(step.sample_ids.size(), 4u);
    }
  }
  EXPECT_EQ(proxy_steps, 4u);
  EXPECT_EQ(record.steps.size(), 10u);
  EXPECT_EQ(student.hashes(), student.clone().hashes());
}

TEST(RunStage, RejectsTargetSplitAndLabeledProxy) {
  Tiny t;
  auto student = init_student(t.config.student, 8, 5, 3);
  RunRecord record;
  StageSpec bad{"leak", Objective::kQsd, data::Split::kTarget, 2, 2, {{"encoder", 1e-3}}, 1.0};
  EXPECT_THROW(run_stage(bad, student, t.ctx(), record), ContractError);

  t.corpus.proxy[0].labels = t.corpus.source[0].labels;
  StageSpec stage1{"task_agnostic", Objective::kQsd, data::Split::kProxy, 2, 2, {{"encoder", 1e-3}}, 1.0};
  EXPECT_THROW(run_stage(stage1, student, t.ctx(), record), ContractError);
}

TEST(RunStage, SupervisedStageUsesOnlyLabeledSubset) {
  Tiny t;
  t.config.label_fraction = 1.0 / 16;
  const auto subset = labeled_subset(t.corpus, t.config.label_fraction);
  ASSERT_EQ(subset.size(), 2u);
  std::set<std::uint64_t> allowed;
  for (const auto* s : subset) allowed.insert(s->id);
  const auto [student, record] = run_plan(make_plan("no_distill", t.config), t.ctx());
  for (const auto& step : record.steps) {
    for (auto id : step.sample_ids) EXPECT_EQ(allowed.count(id), 1u);
  }
}

TEST(RunPlan, ZeroDistillWeightMatchesSupervisedBitForBit) {
  Tiny t;
  t.config.distill_weight = 0.0;
  const auto joint = run_plan(make_plan("single_stage", t.config), t.ctx(5)).second;
  const auto sup = run_plan(make_plan("no_distill", t.config), t.ctx(5)).second;
  ASSERT_EQ(joint.steps.size(), sup.steps.size());
  for (std::size_t i = 0; i < sup.steps.size(); ++i) {
    EXPECT_EQ(joint.steps[i].loss("task"), sup.steps[i].loss("total"));
    EXPECT_EQ(joint.steps[i].loss("total"), sup.steps[i].loss("total"));
    EXPECT_EQ(joint.steps[i].sample_ids, sup.steps[i].sample_ids);
  }
  for (const auto& step : joint.steps) EXPECT_EQ(step.loss("distill"), 0.0);
}

TEST(RunPlan, JointRecordsBothTerms) {
  Tiny t;
  for (const char* method : {"single_stage", "single_stage_qsd"}) {
    const auto rec = run_plan(make_plan(method, t.config), t.ctx()).second;
    for (const auto& step : rec.steps) {
      EXPECT_NEAR(step.loss("total"), step.loss("task") + step.loss("distill"), 1e-12) << method;
    }
  }
}

TEST(RunPlan, DeterministicAcrossReruns) {
  Tiny t;
  for (const char* method : {"gkd", "pointwise_kd"}) {
    const auto a = run_plan(make_plan(method, t.config), t.ctx(9));
    const auto b = run_plan(make_plan(method, t.config), t.ctx(9));
    ASSERT_EQ(a.second.steps.size(), b.second.steps.size());
    for (std::size_t i = 0; i < a.second.steps.size(); ++i) {
      EXPECT_EQ(a.second.steps[i].losses, b.second.steps[i].losses);
      EXPECT_EQ(a.second.steps[i].sample_ids, b.second.steps[i].sample_ids);
    }
    EXPECT_EQ(a.first.hashes(), b.first.hashes());
    const auto c = run_plan(make_plan(method, t.config), t.ctx(10));
    EXPECT_NE(a.second.steps[0].losses, c.second.steps[0].losses);
  }
}

TEST(RunRecord, JsonlRoundTrip) {
  Tiny t;
  const auto rec = run_plan(make_plan("gkd", t.config), t.ctx()).second;
  const auto text = rec.to_jsonl();
  const auto back = RunRecord::from_jsonl(text);
  EXPECT_EQ(back.to_jsonl(), text);
  EXPECT_EQ(back.curve("task_agnostic", "total"), rec.curve("task_agnostic", "total"));
  EXPECT_EQ(back.boundary("task_learning").checkpoint_hash, rec.boundary("task_learning").checkpoint_hash);
  const auto cut = text.substr(0, text.rfind("{\"type\":\"footer\""));
  EXPECT_THROW(RunRecord::from_jsonl(cut), IoError);
  EXPECT_THROW(rec.boundary("nope"), ValidationError);
}

TEST(StudentCheckpoint, RoundTripGivesIdenticalForward) {
  Tiny t;
  const auto student = run_plan(make_plan("pointwise_kd", t.config), t.ctx()).first;
  const auto bytes = student_checkpoint(student);
  const auto back = load_student_checkpoint(bytes);
  EXPECT_EQ(back.hashes(), student.hashes());
  EXPECT_EQ(student_checkpoint(back), bytes);
  std::vector<const data::Sample*> probe = {&t.corpus.target[0], &t.corpus.target[1]};
  const auto img = data::stack_images(probe);
  const auto a = models::decode(student.decoder, models::encode(student.encoder, img).tokens);
  const auto b = models::decode(back.decoder, models::encode(back.encoder, img).tokens);
  EXPECT_EQ(testing::copy_values(a), testing::copy_values(b));
}

TEST(Teacher, FeaturesAreCachedAndConstant) {
  Tiny t;
  std::vector<const data::Sample*> batch = {&t.corpus.proxy[0], &t.corpus.proxy[1]};
  const auto a = t.teacher.features(batch);
  const auto b = t.teacher.features(batch);
  EXPECT_EQ(testing::copy_values(a.tokens), testing::copy_values(b.tokens));
  EXPECT_FALSE(a.tokens.requires_grad());
  const auto direct = models::encode(t.teacher.encoder(), data::stack_images(batch));
  EXPECT_EQ(testing::copy_values(a.tokens), testing::copy_values(direct.tokens));
  EXPECT_EQ(t.teacher.grad_norm(), 0.0);
}

TEST(PretrainTeacher, DeterministicAndCheckpointable) {
  auto m = Tiny::manifest();
  TeacherConfig cfg;
  cfg.encoder = {16, 8, 1, 8, 2, 2.0};
  cfg.pool_per_style = 4;
  cfg.val_per_style = 1;
  cfg.steps = 3;
  cfg.batch = 4;
  const auto a = pretrain_teacher(m, cfg, 11), b = pretrain_teacher(m, cfg, 11);
  EXPECT_EQ(a.encoder.params.hash(), b.encoder.params.hash());
  EXPECT_EQ(a.val_miou, b.val_miou);
  EXPECT_GE(a.val_miou, 0.0);
  EXPECT_LE(a.val_miou, 1.0);
  const auto back = load_teacher_checkpoint(teacher_checkpoint(a));
  EXPECT_EQ(back.encoder.params.hash(), a.encoder.params.hash());
  EXPECT_EQ(back.val_miou, a.val_miou);
  for (const auto& [name, p] : back.encoder.params.items()) EXPECT_FALSE(p.requires_grad()) << name;
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.mask_ratio = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.batch = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.weights.beta = -1.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

}  // namespace
}  // namespace gkd::pipeline
