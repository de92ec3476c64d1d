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

#include <cinttypes>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gkd/gkd.h"

namespace {

struct SessionDeleter {
  void operator()(gkd_session* s) const { gkd_session_destroy(s); }
};
using Session = std::unique_ptr<gkd_session, SessionDeleter>;

int fail(gkd_session* s, gkd_status st) {
  std::fprintf(stderr, "error (%s): %s\n", gkd_status_name(st), gkd_session_last_error(s));
  return gkd_exit_code(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalizable knowledge distillation on a synthetic segmentation benchmark"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", gkd_version());

  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::string> label_fraction;
  std::optional<std::string> out;
  bool overwrite = false;
  app.add_option("--config", config, "Experiment config (JSON)");
  app.add_option("--seed", seed, "Run a single seed instead of the config's seed list");
  app.add_option("--method", method, "gkd, pointwise_kd, single_stage, single_stage_qsd or no_distill");
  app.add_option("--label-fraction", label_fraction, "Fraction of labeled source samples");
  app.add_option("--out", out, "Output directory");
  app.add_flag("--overwrite", overwrite, "Replace existing outputs");

  auto* build = app.add_subcommand("build-corpus", "Render the synthetic corpus");
  auto* teacher = app.add_subcommand("pretrain-teacher", "Pretrain the frozen teacher");
  auto* run = app.add_subcommand("run", "Train the selected method for every seed and label fraction");
  auto* evaluate = app.add_subcommand("eval", "Re-evaluate run directories");
  std::string eval_run;
  evaluate->add_option("run_dir", eval_run, "Run directory (default: every run under --out)");
  auto* gradcheck = app.add_subcommand("gradcheck", "Check every backward rule against central differences");
  bool corrupt = false;
  gradcheck->add_flag("--corrupt", corrupt, "Negative control: corrupt one gradient rule");
  auto* report = app.add_subcommand("report", "Ablation tables and loss-curve statistics");
  std::vector<std::string> report_runs;
  std::string report_dir;
  report->add_option("runs", report_runs, "Run directories (default: every run under --out)");
  report->add_option("--report-dir", report_dir, "Where to write the tables (default: <out>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  gkd_session* raw = nullptr;
  if (gkd_session_create(&raw) != GKD_OK) {
    std::fprintf(stderr, "error: cannot create session\n");
    return 1;
  }
  Session session(raw);
  gkd_session* s = session.get();
  gkd_status st = GKD_OK;
  if (!config.empty() && (st = gkd_session_load_config(s, config.c_str())) != GKD_OK) return fail(s, st);
  auto set = [&](const char* key, const std::string& value) {
    if (st == GKD_OK) st = gkd_session_set(s, key, value.c_str());
  };
  if (seed) set("seed", std::to_string(*seed));
  if (method) set("method", *method);
  if (label_fraction) set("label_fraction", *label_fraction);
  if (out) set("out", *out);
  set("overwrite", overwrite ? "1" : "0");
  if (st != GKD_OK) return fail(s, st);

  if (*build) {
    std::uint64_t hash = 0;
    st = gkd_build_corpus(s, &hash);
  } else if (*teacher) {
    st = gkd_pretrain_teacher(s, nullptr);
  } else if (*run) {
    st = gkd_run(s, nullptr, nullptr);
  } else if (*evaluate) {
    st = gkd_eval(s, eval_run.empty() ? nullptr : eval_run.c_str());
  } else if (*gradcheck) {
    st = gkd_gradcheck(s, corrupt ? 1 : 0, nullptr, nullptr);
  } else if (*report) {
    std::vector<const char*> dirs;
    for (const auto& r : report_runs) dirs.push_back(r.c_str());
    st = gkd_report(s, dirs.empty() ? nullptr : dirs.data(), dirs.size(),
                    report_dir.empty() ? nullptr : report_dir.c_str());
  }
  return st == GKD_OK ? 0 : fail(s, st);
}
