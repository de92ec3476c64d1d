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

#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include "gkd/app.hpp"
#include "gkd/checkpoint.hpp"
#include "gkd/errors.hpp"
#include "json.hpp"
#include "test_helpers.hpp"

namespace gkd::app {
namespace {

const Logger quiet = [](const std::string&) {};

ExperimentConfig tiny_config(const std::filesystem::path& out) {
  ExperimentConfig c;
  c.manifest.image_size = 16;
  c.manifest.proxy_count = 24;
  c.manifest.source_count = 16;
  c.manifest.target_count_per_domain = 4;
  c.out = out;
  c.teacher.encoder = {16, 8, 1, 8, 2, 2.0};
  c.teacher.pool_per_style = 4;
  c.teacher.val_per_style = 2;
  c.teacher.steps = 6;
  c.teacher.batch = 4;
  c.train.student = {16, 8, 1, 8, 2, 2.0};
  c.train.stage1_steps = 3;
  c.train.stage2_steps = 3;
  c.train.stage3_steps = 3;
  c.train.joint_steps = 4;
  c.train.batch = 4;
  c.seeds = {0, 1};
  return c;
}

// Corpus and teacher shared by the run tests.
class Tiny : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("app");
    const auto c = tiny_config(dir_->path());
    cmd_build_corpus(c, false, quiet);
    cmd_pretrain_teacher(c, false, quiet);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  ExperimentConfig config(const std::string& sub) const {
    auto c = tiny_config(dir_->path());
    c.corpus_dir = dir_->path() / "corpus";
    c.teacher_path = dir_->path() / "teacher.gkdc";
    c.out = dir_->path() / sub;
    return c;
  }
  static testing::TempDir* dir_;
};

testing::TempDir* Tiny::dir_ = nullptr;

TEST(ExperimentConfig, JsonRoundTripAndValidation) {
  auto c = tiny_config("out");
  c.methods = {"gkd", "no_distill"};
  c.label_fractions = {0.25, 1.0};
  c.train.weights = {0.5, 2.0, 0.0};
  const auto back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.train.weights.beta, 2.0);

  EXPECT_THROW(ExperimentConfig::from_json(R"({"sedes": [1]})"), ValidationError);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"seeds": []})"), ValidationError);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"qsd": {"alpha": -1}})"), ValidationError);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"methods": ["magic"]})"), ValidationError);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"train": {"batch": "x"}})"), ValidationError);
  EXPECT_THROW(ExperimentConfig::from_json("{"), ValidationError);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"manifest": "nowhere.json"})", "/nonexistent"), MissingInputError);
  EXPECT_THROW(ExperimentConfig::load("/nonexistent/config.json"), MissingInputError);
  // Label fractions above the corpus label fraction cannot be honoured.
  EXPECT_THROW(ExperimentConfig::from_json(R"({"manifest": {"label_fraction": 0.25}, "label_fractions": [0.5]})"),
               ValidationError);
}

TEST(ExperimentConfig, ManifestPathResolvesAgainstConfigDir) {
  testing::TempDir dir("cfg");
  data::SplitManifest m;
  m.proxy_count = 12;
  io::write_file(dir.path() / "m.json", m.to_json());
  io::write_file(dir.path() / "c.json", R"({"manifest": "m.json", "seeds": [4, 5]})");
  const auto c = ExperimentConfig::load(dir.path() / "c.json");
  EXPECT_EQ(c.manifest.proxy_count, 12u);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 5}));
}

TEST(Overrides, ReplaceListsAndRevalidate) {
  auto c = tiny_config("out");
  c.seeds = {0, 1, 2};
  Overrides o;
  o.seed = 9;
  o.method = "pointwise_kd";
  o.label_fraction = 0.5;
  o.out = "elsewhere";
  o.apply(c);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{9}));
  EXPECT_EQ(c.methods, (std::vector<std::string>{"pointwise_kd"}));
  EXPECT_EQ(c.label_fractions, (std::vector<double>{0.5}));
  EXPECT_EQ(c.out, "elsewhere");
  Overrides bad;
  bad.label_fraction = 2.0;
  EXPECT_THROW(bad.apply(c), ValidationError);
}

TEST(Paths, FractionTagsAndRunDirs) {
  EXPECT_EQ(fraction_tag(1.0), "1");
  EXPECT_EQ(fraction_tag(1.0 / 16), "1-16");
  EXPECT_EQ(fraction_tag(0.25), "1-4");
  EXPECT_EQ(fraction_tag(0.3), "0.3");
  auto c = tiny_config("root");
  EXPECT_EQ(run_dir(c, "gkd", 0.125, 2), std::filesystem::path("root/runs/gkd/lf1-8/seed2"));
  EXPECT_EQ(c.corpus(), std::filesystem::path("root/corpus"));
  EXPECT_EQ(c.teacher_file(), std::filesystem::path("root/teacher.gkdc"));
}

TEST(BuildCorpus, DefaultCountsAndStableHash) {
  testing::TempDir dir("build");
  ExperimentConfig c;
  c.out = dir.path();
  std::vector<std::string> lines;
  const auto a = cmd_build_corpus(c, false, [&](const std::string& l) { lines.push_back(l); });
  EXPECT_EQ(a.proxy, 2048u);
  EXPECT_EQ(a.source, 512u);
  EXPECT_EQ(a.target, 384u);
  bool counts = false;
  for (const auto& l : lines) counts = counts || l.find("proxy 2048 / source 512") != std::string::npos;
  EXPECT_TRUE(counts);
  EXPECT_THROW(cmd_build_corpus(c, false, quiet), ExistsError);
  EXPECT_EQ(cmd_build_corpus(c, true, quiet).hash, a.hash);
}

TEST(Gradcheck, AllRulesPassAndNegativeControlFails) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = cmd_gradcheck({}, quiet);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
  EXPECT_GE(rows.size(), 25u);
  bool composite = false;
  for (const auto& r : rows) {
    EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error << " " << r.error;
    EXPECT_LE(r.max_rel_error, 1e-6) << r.name;
    composite = composite || r.name == "qsd composite";
  }
  EXPECT_TRUE(composite);
  GradcheckOptions corrupt;
  corrupt.corrupt = true;
  std::size_t failed = 0;
  for (const auto& r : cmd_gradcheck(corrupt, quiet)) {
    if (!r.passed) {
      EXPECT_EQ(r.name, "gelu");
      EXPECT_GT(r.max_rel_error, 1e-3);
      ++failed;
    }
  }
  EXPECT_EQ(failed, 1u);
}

TEST_F(Tiny, MissingTeacherNamesPretrainCommand) {
  auto c = config("noteacher");
  c.teacher_path = c.out / "absent.gkdc";
  try {
    cmd_run(c, "gkd", false, quiet);
    FAIL() << "expected MissingInputError";
  } catch (const MissingInputError& e) {
    EXPECT_NE(std::string(e.what()).find("pretrain-teacher"), std::string::npos);
  }
  c = config("nocorpus");
  c.corpus_dir = c.out / "absent";
  EXPECT_THROW(cmd_run(c, "gkd", false, quiet), MissingInputError);
}

TEST_F(Tiny, GkdWritesStageCheckpointsAndReproduces) {
  auto c = config("gkd");
  c.seeds = {3};
  const auto a = cmd_run(c, "gkd", false, quiet);
  ASSERT_EQ(a.size(), 1u);
  const auto dir = a[0].dir;
  for (const char* f : {"stage1_task_agnostic.gkdc", "stage2_domain_agnostic.gkdc", "stage3_task_learning.gkdc",
                        "student.gkdc", "record.jsonl", "eval.csv", "eval.json", "distance.json", "run.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  // Each stage checkpoint hashes to the value recorded at its boundary.
  const auto record = pipeline::RunRecord::from_jsonl(io::read_file(dir / "record.jsonl"));
  ASSERT_EQ(record.boundaries.size(), 3u);
  EXPECT_EQ(fnv1a64(io::read_file(dir / "stage2_domain_agnostic.gkdc")), record.boundaries[1].checkpoint_hash);
  EXPECT_EQ(io::read_file(dir / "stage3_task_learning.gkdc"), io::read_file(dir / "student.gkdc"));
  // Effective config echoed into the record header.
  const auto header = nlohmann::json::parse(record.header_json);
  EXPECT_EQ(header.at("method"), "gkd");
  EXPECT_EQ(header.at("experiment").at("seeds").size(), 1u);

  EXPECT_THROW(cmd_run(c, "gkd", false, quiet), ExistsError);
  const auto b = cmd_run(c, "gkd", true, quiet);
  ASSERT_EQ(b[0].record.steps.size(), a[0].record.steps.size());
  for (std::size_t i = 0; i < a[0].record.steps.size(); ++i) {
    EXPECT_EQ(b[0].record.steps[i].losses, a[0].record.steps[i].losses) << "step " << i;
  }
  EXPECT_EQ(io::read_file(dir / "student.gkdc"), pipeline::student_checkpoint(pipeline::load_student_checkpoint(
                                                     io::read_file(dir / "student.gkdc"))));
}

TEST_F(Tiny, NoDistillRunsOnlySupervisedStage) {
  auto c = config("plain");
  c.seeds = {0};
  const auto r = cmd_run(c, "no_distill", false, quiet);
  ASSERT_EQ(r[0].record.boundaries.size(), 1u);
  EXPECT_EQ(r[0].record.boundaries[0].stage, "supervised");
  EXPECT_TRUE(app::distill_curve(r[0].record).empty());
}

TEST_F(Tiny, SharedDistillationStagesMatchFreshRuns) {
  auto c = config("sweep");
  c.seeds = {5};
  c.label_fractions = {0.5, 1.0};
  const auto runs = cmd_run(c, "gkd", false, quiet);
  ASSERT_EQ(runs.size(), 2u);
  const auto corpus = data::load_corpus(c.corpus());
  const auto tr = pipeline::load_teacher_checkpoint(io::read_file(c.teacher_file()));
  pipeline::Teacher teacher(tr.encoder, tr.aux_head);
  for (const auto& r : runs) {
    auto train = c.train;
    train.label_fraction = r.label_fraction;
    pipeline::RunContext ctx{&corpus, &teacher, train, 5};
    const auto [student, record] = pipeline::run_plan(pipeline::make_plan("gkd", train), ctx);
    ASSERT_EQ(record.steps.size(), r.record.steps.size());
    for (std::size_t i = 0; i < record.steps.size(); ++i) {
      EXPECT_EQ(record.steps[i].losses, r.record.steps[i].losses);
      EXPECT_EQ(record.steps[i].sample_ids, r.record.steps[i].sample_ids);
    }
    EXPECT_EQ(pipeline::student_checkpoint(student), io::read_file(r.dir / "student.gkdc"));
  }
  // Half the labels: the supervised stage only sees the labeled prefix.
  std::set<std::uint64_t> seen;
  for (const auto& s : runs[0].record.steps) {
    if (s.stage == "task_learning") seen.insert(s.sample_ids.begin(), s.sample_ids.end());
  }
  EXPECT_LE(seen.size(), 8u);
}

TEST_F(Tiny, EvalRecomputesStoredReport) {
  auto c = config("eval");
  c.seeds = {1};
  const auto r = cmd_run(c, "single_stage", false, quiet);
  const auto stored = io::read_file(r[0].dir / "eval.json");
  const auto again = cmd_eval(c, r[0].dir, quiet);
  EXPECT_EQ(io::read_file(r[0].dir / "eval.json"), stored);
  EXPECT_EQ(again.distance.median, r[0].distance.median);
  EXPECT_THROW(cmd_eval(c, c.out / "nowhere", quiet), MissingInputError);
}

TEST_F(Tiny, ReportTablesAndSkipsIncompleteRuns) {
  auto c = config("report");
  const auto runs = cmd_run(c, "pointwise_kd", false, quiet);
  ASSERT_EQ(runs.size(), 2u);

  // Single run: one data row, empty stddev columns.
  const auto one = cmd_report({runs[0].dir}, c.out / "rep1", false, quiet);
  std::istringstream lines(one.comparison_csv);
  std::string header, row, extra;
  std::getline(lines, header);
  std::getline(lines, row);
  EXPECT_FALSE(std::getline(lines, extra));
  EXPECT_NE(row.find("pointwise_kd,1.000000,1,"), std::string::npos);
  EXPECT_NE(row.find(",,"), std::string::npos);

  // Two seeds plus one incomplete directory.
  std::filesystem::create_directories(c.out / "runs/pointwise_kd/lf1/seed9");
  const auto dirs = find_runs(c.out);
  EXPECT_EQ(dirs.size(), 3u);
  std::vector<std::string> warnings;
  const auto two = cmd_report(dirs, c.out / "rep2", false, [&](const std::string& l) { warnings.push_back(l); });
  EXPECT_EQ(two.runs, 2u);
  EXPECT_EQ(two.skipped, 1u);
  EXPECT_NE(warnings.front().find("skipping"), std::string::npos);
  std::istringstream l2(two.comparison_csv);
  std::getline(l2, header);
  std::getline(l2, row);
  // Columns: method, fraction, seeds, 4 domains x (mean, std), seen, unseen.
  std::vector<std::string> cells;
  std::stringstream ss(row);
  for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
  ASSERT_GE(cells.size(), 15u);
  EXPECT_EQ(cells[2], "2");
  EXPECT_FALSE(cells[4].empty());
  const double expect = (eval::unseen_average(runs[0].reports) + eval::unseen_average(runs[1].reports)) / 2.0;
  EXPECT_NEAR(std::stod(cells[13]), expect, 1e-6);
  EXPECT_FALSE(two.smoothness_csv.empty());
  EXPECT_THROW(cmd_report(dirs, c.out / "rep2", false, quiet), ExistsError);
  EXPECT_THROW(cmd_report({c.out / "runs/pointwise_kd/lf1/seed9"}, c.out / "rep3", false, quiet), MissingInputError);
}

TEST(DistillCurve, PicksDistillationTermsOnly) {
  pipeline::RunRecord r;
  r.steps.push_back({"task_agnostic", 0, {{"total", 3.0}, {"feat", 1.0}, {"mask", 2.0}}, {}});
  r.steps.push_back({"task_learning", 0, {{"total", 9.0}, {"task", 9.0}}, {}});
  r.steps.push_back({"joint", 0, {{"total", 5.0}, {"task", 4.0}, {"distill", 1.0}}, {}});
  EXPECT_EQ(distill_curve(r), (std::vector<double>{3.0, 1.0}));
}

}  // namespace
}  // namespace gkd::app
