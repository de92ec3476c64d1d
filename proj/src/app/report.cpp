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
#include <cstdio>
#include <map>
#include <sstream>

#include "gkd/app.hpp"
#include "gkd/checkpoint.hpp"
#include "gkd/errors.hpp"
#include "json.hpp"

namespace gkd::app {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

struct LoadedRun {
  std::string method;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::vector<eval::DomainReport> reports;
  double median_distance = 0.0;
  eval::CurveStats curve;
};

double json_double(const ordered_json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

LoadedRun load_run(const fs::path& dir) {
  for (const char* f : {"run.json", "eval.json", "distance.json", "record.jsonl"}) {
    if (!fs::is_regular_file(dir / f)) throw MissingInputError(std::string("missing ") + f);
  }
  const auto meta = ordered_json::parse(io::read_file(dir / "run.json"));
  if (!meta.value("complete", false)) throw RunError("run is not marked complete");
  LoadedRun r;
  r.method = meta.at("method").get<std::string>();
  r.fraction = meta.at("label_fraction").get<double>();
  r.seed = meta.at("seed").get<std::uint64_t>();
  const auto ev = ordered_json::parse(io::read_file(dir / "eval.json"));
  for (const auto& d : ev.at("domains")) {
    eval::DomainReport rep;
    rep.run_id = d.at("run_id").get<std::string>();
    rep.seed = d.at("seed").get<std::uint64_t>();
    rep.domain = d.at("domain").get<std::string>();
    rep.seen = d.at("seen").get<bool>();
    rep.samples = d.at("samples").get<std::size_t>();
    rep.miou = json_double(d.at("miou"));
    for (const auto& v : d.at("class_iou")) {
      rep.class_iou.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
    r.reports.push_back(std::move(rep));
  }
  r.median_distance = ordered_json::parse(io::read_file(dir / "distance.json")).at("median").get<double>();
  const auto record = pipeline::RunRecord::from_jsonl(io::read_file(dir / "record.jsonl"));
  r.curve = eval::curve_stats(distill_curve(record));
  return r;
}

struct MeanStd {
  double mean = 0.0, std = 0.0;
  std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string ms_csv(const MeanStd& m) { return num(m.mean) + "," + (m.n > 1 ? num(m.std) : ""); }

std::string ms_text(const MeanStd& m) {
  char buf[48];
  if (m.n > 1) {
    std::snprintf(buf, sizeof buf, "%.4f +- %.4f", m.mean, m.std);
  } else {
    std::snprintf(buf, sizeof buf, "%.4f", m.mean);
  }
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace

std::vector<double> distill_curve(const pipeline::RunRecord& record) {
  std::vector<double> out;
  for (const auto& e : record.steps) {
    bool has_distill = false, is_qsd = false;
    for (const auto& [k, v] : e.losses) {
      has_distill = has_distill || k == "distill";
      is_qsd = is_qsd || k == "feat" || k == "mask" || k == "cls";
    }
    if (has_distill) {
      out.push_back(e.loss("distill"));
    } else if (is_qsd) {
      out.push_back(e.loss("total"));
    }
  }
  return out;
}

ReportSummary cmd_report(const std::vector<fs::path>& runs, const fs::path& out, bool overwrite, const Logger& log) {
  ReportSummary s;
  std::vector<LoadedRun> loaded;
  for (const auto& dir : runs) {
    try {
      loaded.push_back(load_run(dir));
    } catch (const std::exception& e) {
      ++s.skipped;
      log("warning: skipping incomplete run " + dir.string() + ": " + e.what());
    }
  }
  s.runs = loaded.size();
  if (loaded.empty()) throw MissingInputError("no completed runs to report");
  for (const char* f : {"comparison.csv", "sweep.csv", "smoothness.csv", "summary.txt"}) {
    if (fs::exists(out / f) && !overwrite) {
      throw ExistsError("report output exists: " + (out / f).string() + " (pass --overwrite)");
    }
  }

  // Domain columns in first-appearance order.
  std::vector<std::string> domains;
  for (const auto& r : loaded) {
    for (const auto& d : r.reports) {
      if (std::find(domains.begin(), domains.end(), d.domain) == domains.end()) domains.push_back(d.domain);
    }
  }
  // (method, fraction) groups in first-appearance order.
  std::vector<std::pair<std::string, double>> keys;
  std::map<std::pair<std::string, double>, std::vector<const LoadedRun*>> groups;
  for (const auto& r : loaded) {
    const auto k = std::make_pair(r.method, r.fraction);
    if (!groups.count(k)) keys.push_back(k);
    groups[k].push_back(&r);
  }

  std::ostringstream cmp, text;
  cmp << "method,label_fraction,seeds";
  for (const auto& d : domains) cmp << ',' << d << "_mean," << d << "_std";
  cmp << ",seen_mean,seen_std,unseen_mean,unseen_std,median_distance_mean,median_distance_std\n";
  text << "method x domain mIoU (mean +- std over seeds)\n";
  text << pad("method", 18) << pad("labels", 8) << pad("seeds", 6);
  for (const auto& d : domains) text << pad(d, 18);
  text << pad("seen", 18) << pad("unseen", 18) << "median dist\n";
  for (const auto& k : keys) {
    const auto& g = groups[k];
    cmp << k.first << ',' << num(k.second) << ',' << g.size();
    text << pad(k.first, 18) << pad(fraction_tag(k.second), 8) << pad(std::to_string(g.size()), 6);
    for (const auto& d : domains) {
      std::vector<double> v;
      for (const auto* r : g) {
        for (const auto& rep : r->reports) {
          if (rep.domain == d) v.push_back(rep.miou);
        }
      }
      const auto m = mean_std(v);
      cmp << ',' << ms_csv(m);
      text << pad(v.empty() ? "-" : ms_text(m), 18);
    }
    std::vector<double> seen, unseen, dist;
    for (const auto* r : g) {
      seen.push_back(eval::seen_average(r->reports));
      unseen.push_back(eval::unseen_average(r->reports));
      dist.push_back(r->median_distance);
    }
    cmp << ',' << ms_csv(mean_std(seen)) << ',' << ms_csv(mean_std(unseen)) << ',' << ms_csv(mean_std(dist)) << '\n';
    text << pad(ms_text(mean_std(seen)), 18) << pad(ms_text(mean_std(unseen)), 18) << ms_text(mean_std(dist))
         << '\n';
  }

  // Label-fraction sweep: unseen mean per method and fraction.
  std::vector<double> fractions;
  std::vector<std::string> methods;
  for (const auto& [m, f] : keys) {
    if (std::find(fractions.begin(), fractions.end(), f) == fractions.end()) fractions.push_back(f);
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
  }
  std::sort(fractions.begin(), fractions.end());
  std::ostringstream sweep;
  sweep << "method";
  for (double f : fractions) sweep << ",unseen_lf" << fraction_tag(f);
  sweep << ",drop_full_to_min\n";
  text << "\nunseen mIoU by label fraction\n" << pad("method", 18);
  for (double f : fractions) text << pad(fraction_tag(f), 10);
  text << "drop\n";
  for (const auto& m : methods) {
    sweep << m;
    text << pad(m, 18);
    std::map<double, double> means;
    for (double f : fractions) {
      const auto it = groups.find({m, f});
      if (it == groups.end()) {
        sweep << ',';
        text << pad("-", 10);
        continue;
      }
      std::vector<double> v;
      for (const auto* r : it->second) v.push_back(eval::unseen_average(r->reports));
      means[f] = mean_std(v).mean;
      sweep << ',' << num(means[f]);
      text << pad(num(means[f]).substr(0, 6), 10);
    }
    const bool has_drop = means.count(1.0) && means.size() > 1;
    const double drop = has_drop ? means.at(1.0) - means.begin()->second : std::nan("");
    sweep << ',' << num(drop) << '\n';
    text << (has_drop ? num(drop).substr(0, 7) : "-") << '\n';
  }

  // Loss smoothness of the distillation curves.
  std::ostringstream smooth;
  smooth << "method,label_fraction,seed,length,spikes,spike_rate,diff_variance\n";
  text << "\ndistillation loss smoothness (steps with loss > 1.05 x previous)\n";
  for (const auto& r : loaded) {
    if (r.curve.length == 0) continue;
    const double rate = static_cast<double>(r.curve.spikes) / static_cast<double>(r.curve.length);
    smooth << r.method << ',' << num(r.fraction) << ',' << r.seed << ',' << r.curve.length << ',' << r.curve.spikes
           << ',' << num(rate) << ',' << r.curve.diff_variance << '\n';
    text << pad(r.method, 18) << pad(fraction_tag(r.fraction), 8) << pad("seed " + std::to_string(r.seed), 10)
         << r.curve.spikes << " spikes / " << r.curve.length << " steps, diff variance " << r.curve.diff_variance
         << '\n';
  }

  s.comparison_csv = cmp.str();
  s.sweep_csv = sweep.str();
  s.smoothness_csv = smooth.str();
  s.text = text.str();
  fs::create_directories(out);
  io::write_file(out / "comparison.csv", s.comparison_csv);
  io::write_file(out / "sweep.csv", s.sweep_csv);
  io::write_file(out / "smoothness.csv", s.smoothness_csv);
  io::write_file(out / "summary.txt", s.text);
  log(s.text);
  log("report: " + std::to_string(s.runs) + " runs, " + std::to_string(s.skipped) + " skipped, written to " +
      out.string());
  return s;
}

}  // namespace gkd::app
