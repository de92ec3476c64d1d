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
#include <cinttypes>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "gkd/app.hpp"
#include "gkd/checkpoint.hpp"
#include "gkd/errors.hpp"
#include "json.hpp"

namespace gkd::app {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

data::Corpus load_checked_corpus(const ExperimentConfig& config) {
  const auto dir = config.corpus();
  if (!fs::exists(dir / "manifest.json")) {
    throw MissingInputError("corpus not found at " + dir.string() + "; run build-corpus with this config first");
  }
  auto corpus = data::load_corpus(dir);
  if (corpus.manifest.to_json() != config.manifest.to_json()) {
    throw ValidationError("corpus at " + dir.string() +
                          " was built from a different manifest; rebuild it with build-corpus --overwrite");
  }
  return corpus;
}

pipeline::TeacherResult load_checked_teacher(const ExperimentConfig& config) {
  const auto path = config.teacher_file();
  if (!fs::is_regular_file(path)) {
    throw MissingInputError("teacher checkpoint not found at " + path.string() +
                            "; run pretrain-teacher with this config first");
  }
  auto teacher = pipeline::load_teacher_checkpoint(io::read_file(path));
  if (teacher.encoder.config.image_size != config.manifest.image_size) {
    throw ValidationError("teacher checkpoint image size does not match the manifest");
  }
  return teacher;
}

EvalResult evaluate_student(const pipeline::StudentBundle& student, const models::Encoder& teacher,
                            const data::Corpus& corpus, const std::string& run_id, std::uint64_t seed) {
  EvalResult out;
  const data::Split splits[] = {data::Split::kSource, data::Split::kTarget};
  out.reports = eval::evaluate_domains(student.encoder, student.decoder, corpus, splits, run_id, seed);
  // Affine student -> teacher map fit on source tokens, measured on targets.
  std::vector<const data::Sample*> fit, probe;
  for (const auto& s : corpus.source) fit.push_back(&s);
  for (const auto& s : corpus.target) probe.push_back(&s);
  const std::size_t cs = student.encoder.config.dim, ct = teacher.config.dim;
  const auto proj = eval::fit_projection(eval::collect_tokens(student.encoder, fit),
                                         eval::collect_tokens(teacher, fit), cs, ct);
  out.distance = eval::feature_distance_stats(eval::collect_tokens(student.encoder, probe),
                                              eval::collect_tokens(teacher, probe), proj);
  return out;
}

ordered_json distance_json(const eval::DistanceSummary& d) {
  return {{"count", d.count}, {"mean", d.mean}, {"median", d.median}, {"p10", d.p10}, {"p25", d.p25},
          {"p75", d.p75},     {"p90", d.p90},   {"max", d.max}};
}

void write_eval(const fs::path& dir, const EvalResult& r) {
  io::write_file(dir / "eval.csv", eval::reports_csv(r.reports));
  io::write_file(dir / "eval.json", eval::reports_json(r.reports));
  io::write_file(dir / "distance.json", distance_json(r.distance).dump(2) + "\n");
}

std::string eval_line(const std::vector<eval::DomainReport>& reports) {
  std::string line;
  for (const auto& r : reports) line += " " + r.domain + "=" + fixed(r.miou);
  return line + " seen=" + fixed(eval::seen_average(reports)) + " unseen=" + fixed(eval::unseen_average(reports));
}

bool label_free(pipeline::Objective o) { return o == pipeline::Objective::kQsd || o == pipeline::Objective::kPointwise; }

struct StageOutput {
  std::string file;
  std::string bytes;
};

// One seed of one method across every label fraction.
std::vector<RunResult> run_seed(const ExperimentConfig& config, const std::string& method, std::uint64_t seed,
                                const data::Corpus& corpus, const pipeline::TeacherResult& teacher_ckpt,
                                const std::string& provenance, const Logger& log) {
  pipeline::Teacher teacher(teacher_ckpt.encoder, teacher_ckpt.aux_head);
  pipeline::RunContext ctx{&corpus, &teacher, config.train, seed};
  const auto base_plan = pipeline::make_plan(method, config.train);
  std::size_t shared = 0;
  while (shared < base_plan.stages.size() && label_free(base_plan.stages[shared].objective)) ++shared;

  auto student = pipeline::init_student(config.train.student, teacher.encoder().config.dim, data::kNumClasses, seed);
  pipeline::RunRecord prefix;
  std::vector<StageOutput> prefix_ckpts;
  for (std::size_t i = 0; i < shared; ++i) {
    const auto& stage = base_plan.stages[i];
    pipeline::run_stage(stage, student, ctx, prefix);
    prefix_ckpts.push_back({"stage" + std::to_string(i + 1) + "_" + stage.name + ".gkdc",
                            pipeline::student_checkpoint(student)});
    log(method + " seed " + std::to_string(seed) + ": " + stage.name + " done in " +
        fixed(prefix.boundaries.back().wall_seconds, 1) + "s");
  }

  std::vector<RunResult> results;
  for (double fraction : config.label_fractions) {
    RunResult res{method, fraction, seed, run_dir(config, method, fraction, seed), prefix, {}, {}};
    auto ctx_f = ctx;
    ctx_f.config.label_fraction = fraction;
    const auto plan = pipeline::make_plan(method, ctx_f.config);
    auto st = student.clone();
    auto ckpts = prefix_ckpts;
    for (std::size_t i = shared; i < plan.stages.size(); ++i) {
      pipeline::run_stage(plan.stages[i], st, ctx_f, res.record);
      ckpts.push_back({"stage" + std::to_string(i + 1) + "_" + plan.stages[i].name + ".gkdc",
                       pipeline::student_checkpoint(st)});
      log(method + " seed " + std::to_string(seed) + " lf " + fraction_tag(fraction) + ": " + plan.stages[i].name +
          " done in " + fixed(res.record.boundaries.back().wall_seconds, 1) + "s");
    }
    auto header = ordered_json::parse(pipeline::plan_json(plan, ctx_f.config, seed));
    header["method"] = method;
    header["label_fraction"] = fraction;
    header["teacher_hash"] = hex64(teacher.hash());
    header["experiment"] = ordered_json::parse(provenance);
    res.record.header_json = header.dump();

    const std::string run_id = method + "/lf" + fraction_tag(fraction) + "/seed" + std::to_string(seed);
    const auto ev = evaluate_student(st, teacher.encoder(), corpus, run_id, seed);
    res.reports = ev.reports;
    res.distance = ev.distance;

    fs::create_directories(res.dir);
    for (const auto& c : ckpts) io::write_file(res.dir / c.file, c.bytes);
    io::write_file(res.dir / "student.gkdc", pipeline::student_checkpoint(st));
    io::write_file(res.dir / "record.jsonl", res.record.to_jsonl());
    write_eval(res.dir, ev);
    ordered_json final_losses = ordered_json::object();
    if (!res.record.steps.empty()) {
      for (const auto& [k, v] : res.record.steps.back().losses) final_losses[k] = v;
    }
    const ordered_json meta = {{"method", method},
                               {"seed", seed},
                               {"label_fraction", fraction},
                               {"stages", plan.stages.size()},
                               {"seen_miou", eval::seen_average(ev.reports)},
                               {"unseen_miou", eval::unseen_average(ev.reports)},
                               {"median_distance", ev.distance.median},
                               {"final_losses", final_losses},
                               {"complete", true}};
    io::write_file(res.dir / "run.json", meta.dump(2) + "\n");
    log(run_id + ":" + eval_line(ev.reports) + " median_dist=" + fixed(ev.distance.median));
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace

data::BuildSummary cmd_build_corpus(const ExperimentConfig& config, bool overwrite, const Logger& log) {
  config.validate();
  const auto dir = config.corpus();
  log("building corpus at " + dir.string());
  const auto s = data::build_corpus(config.manifest, dir, overwrite);
  log("proxy " + std::to_string(s.proxy) + " / source " + std::to_string(s.source) + " (labeled " +
      std::to_string(s.source_labeled) + ") / target " + std::to_string(s.target));
  log("corpus hash " + hex64(s.hash));
  return s;
}

pipeline::TeacherResult cmd_pretrain_teacher(const ExperimentConfig& config, bool overwrite, const Logger& log) {
  config.validate();
  const auto path = config.teacher_file();
  if (fs::exists(path) && !overwrite) {
    throw ExistsError("teacher checkpoint exists at " + path.string() + " (pass --overwrite to replace it)");
  }
  log("pretraining teacher: " + std::to_string(config.teacher.steps) + " steps, batch " +
      std::to_string(config.teacher.batch));
  auto teacher = pipeline::pretrain_teacher(config.manifest, config.teacher, config.teacher_seed);
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const auto bytes = pipeline::teacher_checkpoint(teacher);
  io::write_file(path, bytes);
  auto record_path = path;
  record_path.replace_extension(".jsonl");
  io::write_file(record_path, teacher.record.to_jsonl());
  log("teacher val mIoU " + fixed(teacher.val_miou) + ", hash " + hex64(teacher.encoder.params.hash()) +
      ", written to " + path.string());
  return teacher;
}

std::vector<RunResult> cmd_run(const ExperimentConfig& config, const std::string& method, bool overwrite,
                               const Logger& log) {
  config.validate();
  pipeline::make_plan(method, config.train);
  for (auto seed : config.seeds) {
    for (double f : config.label_fractions) {
      const auto dir = run_dir(config, method, f, seed);
      if (fs::exists(dir)) {
        if (!overwrite) throw ExistsError("run directory exists: " + dir.string() + " (pass --overwrite)");
        fs::remove_all(dir);
      }
    }
  }
  const auto corpus = load_checked_corpus(config);
  const auto teacher = load_checked_teacher(config);
  const auto provenance = config.to_json();

  std::vector<std::vector<RunResult>> per_seed(config.seeds.size());
  if (config.parallel && config.seeds.size() > 1) {
    std::mutex mu;
    const Logger locked = [&](const std::string& line) {
      std::lock_guard<std::mutex> lock(mu);
      log(line);
    };
    std::vector<std::exception_ptr> errors(config.seeds.size());
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
      threads.emplace_back([&, i] {
        try {
          per_seed[i] = run_seed(config, method, config.seeds[i], corpus, teacher, provenance, locked);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
      per_seed[i] = run_seed(config, method, config.seeds[i], corpus, teacher, provenance, log);
    }
  }
  std::vector<RunResult> out;
  for (auto& v : per_seed) {
    for (auto& r : v) out.push_back(std::move(r));
  }
  return out;
}

EvalResult cmd_eval(const ExperimentConfig& config, const fs::path& run, const Logger& log) {
  config.validate();
  if (!fs::is_regular_file(run / "student.gkdc")) {
    throw MissingInputError("no student checkpoint in " + run.string() + "; run the method first");
  }
  const auto corpus = load_checked_corpus(config);
  const auto teacher = load_checked_teacher(config);
  const auto student = pipeline::load_student_checkpoint(io::read_file(run / "student.gkdc"));
  std::uint64_t seed = 0;
  std::string run_id = run.string();
  if (fs::exists(run / "run.json")) {
    const auto meta = ordered_json::parse(io::read_file(run / "run.json"));
    seed = meta.value("seed", std::uint64_t{0});
    if (meta.contains("method") && meta.contains("label_fraction")) {
      run_id = meta.at("method").get<std::string>() + "/lf" + fraction_tag(meta.at("label_fraction").get<double>()) +
               "/seed" + std::to_string(seed);
    }
  }
  const auto ev = evaluate_student(student, teacher.encoder, corpus, run_id, seed);
  write_eval(run, ev);
  log(run.string() + ":" + eval_line(ev.reports) + " median_dist=" + fixed(ev.distance.median));
  return ev;
}

std::vector<fs::path> find_runs(const fs::path& out) {
  // <out>/runs/<method>/lf<fraction>/seed<k>
  std::vector<fs::path> runs;
  const auto root = out / "runs";
  if (!fs::is_directory(root)) return runs;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("seed", 0) == 0) runs.push_back(e.path());
  }
  std::sort(runs.begin(), runs.end());
  return runs;
}

}  // namespace gkd::app
