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
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gkd/datagen.hpp"
#include "gkd/eval.hpp"
#include "gkd/pipeline.hpp"

// Config-driven commands shared by the C API, the CLI and the acceptance
// harness.
namespace gkd::app {

using Logger = std::function<void(const std::string&)>;

struct ExperimentConfig {
  // Manifest file; relative paths resolve against the config file directory.
  // Empty means the built-in default manifest.
  std::filesystem::path manifest_path;
  data::SplitManifest manifest;
  std::filesystem::path out = "gkd_out";
  // Default to <out>/corpus and <out>/teacher.gkdc.
  std::filesystem::path corpus_dir;
  std::filesystem::path teacher_path;
  pipeline::TeacherConfig teacher;
  std::uint64_t teacher_seed = 7;
  pipeline::TrainConfig train;
  std::vector<std::string> methods = {"gkd"};
  std::vector<std::uint64_t> seeds = {0};
  std::vector<double> label_fractions = {1.0};
  // Runs seeds on separate threads; each seed writes its own directory.
  bool parallel = false;

  std::filesystem::path corpus() const { return corpus_dir.empty() ? out / "corpus" : corpus_dir; }
  std::filesystem::path teacher_file() const {
    return teacher_path.empty() ? out / "teacher.gkdc" : teacher_path;
  }
  // Throws ValidationError.
  void validate() const;
  std::string to_json() const;
  // `base` anchors relative manifest paths.
  static ExperimentConfig from_json(const std::string& text, const std::filesystem::path& base = {});
  // Throws MissingInputError when the file is absent.
  static ExperimentConfig load(const std::filesystem::path& path);
};

// Command-line overrides applied on top of a loaded config.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<double> label_fraction;
  std::optional<std::filesystem::path> out;
  bool overwrite = false;

  void apply(ExperimentConfig& config) const;
};

// "1", "1-2", "1-16" for unit fractions, otherwise the decimal value.
std::string fraction_tag(double fraction);
std::filesystem::path run_dir(const ExperimentConfig& config, const std::string& method, double fraction,
                              std::uint64_t seed);

data::BuildSummary cmd_build_corpus(const ExperimentConfig& config, bool overwrite, const Logger& log);

// Trains the teacher on the proxy/source style pool and writes its checkpoint.
pipeline::TeacherResult cmd_pretrain_teacher(const ExperimentConfig& config, bool overwrite, const Logger& log);

struct RunResult {
  std::string method;
  double label_fraction = 1.0;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  pipeline::RunRecord record;
  std::vector<eval::DomainReport> reports;
  eval::DistanceSummary distance;
};

// Runs `method` for every seed and label fraction of the config. Each run
// directory holds run.json, record.jsonl, one checkpoint per stage,
// student.gkdc, eval.csv, eval.json and distance.json. Multi-stage methods
// train their distillation stages once per seed and reuse them across label
// fractions.
std::vector<RunResult> cmd_run(const ExperimentConfig& config, const std::string& method, bool overwrite,
                               const Logger& log);

struct EvalResult {
  std::vector<eval::DomainReport> reports;
  eval::DistanceSummary distance;
};

// Re-evaluates the student checkpoint of a run directory on the source and
// target splits and rewrites its eval and distance files.
EvalResult cmd_eval(const ExperimentConfig& config, const std::filesystem::path& run, const Logger& log);

struct GradcheckRow {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string error;
};

struct GradcheckOptions {
  double tolerance = 1e-6;
  // Routes the gelu case through an identity node whose backward rule scales
  // the incoming gradient by 1.01; that row must fail.
  bool corrupt = false;
};

std::vector<GradcheckRow> cmd_gradcheck(const GradcheckOptions& options, const Logger& log);

struct ReportSummary {
  std::size_t runs = 0;
  std::size_t skipped = 0;
  std::string comparison_csv;
  std::string sweep_csv;
  std::string smoothness_csv;
  std::string text;
};

// Reads completed run directories (incomplete ones are skipped with a
// warning) and writes comparison.csv, sweep.csv, smoothness.csv and
// summary.txt into `out`.
ReportSummary cmd_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out,
                         bool overwrite, const Logger& log);

// Every run directory below <out>/runs that holds a run.json.
std::vector<std::filesystem::path> find_runs(const std::filesystem::path& out);

// Distillation-loss curve of a run: the concatenated per-step distillation
// terms of every distillation stage, in stage order.
std::vector<double> distill_curve(const pipeline::RunRecord& record);

}  // namespace gkd::app
