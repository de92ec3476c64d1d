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
#include <limits>
#include <sstream>

#include <json.hpp>

#include "gkd/errors.hpp"
#include "gkd/pipeline.hpp"

namespace gkd::pipeline {

using nlohmann::ordered_json;

double StepEntry::loss(const std::string& name) const {
  for (const auto& [k, v] : losses) {
    if (k == name) return v;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

namespace {

ordered_json hashes_json(const std::map<std::string, std::uint64_t>& h) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : h) j[k] = v;
  return j;
}

}  // namespace

std::string RunRecord::to_jsonl() const {
  std::ostringstream out;
  ordered_json header = ordered_json::parse(header_json);
  out << ordered_json{{"type", "header"}, {"run", header}}.dump() << "\n";
  for (const auto& s : steps) {
    ordered_json losses = ordered_json::object();
    for (const auto& [k, v] : s.losses) losses[k] = v;
    out << ordered_json{{"type", "step"}, {"stage", s.stage}, {"step", s.step}, {"losses", losses},
                        {"sample_ids", s.sample_ids}}
               .dump()
        << "\n";
  }
  ordered_json stages = ordered_json::array();
  for (const auto& b : boundaries) {
    stages.push_back({{"stage", b.stage},
                      {"before", hashes_json(b.before)},
                      {"after", hashes_json(b.after)},
                      {"teacher_before", b.teacher_before},
                      {"teacher_after", b.teacher_after},
                      {"checkpoint_hash", b.checkpoint_hash},
                      {"wall_seconds", b.wall_seconds}});
  }
  out << ordered_json{{"type", "footer"}, {"stages", stages}}.dump() << "\n";
  return out.str();
}

RunRecord RunRecord::from_jsonl(const std::string& text) {
  RunRecord r;
  std::istringstream in(text);
  std::string line;
  bool footer = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = ordered_json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        r.header_json = j.at("run").dump();
      } else if (type == "step") {
        StepEntry s;
        s.stage = j.at("stage").get<std::string>();
        s.step = j.at("step").get<std::size_t>();
        for (const auto& [k, v] : j.at("losses").items()) s.losses.emplace_back(k, v.get<double>());
        s.sample_ids = j.at("sample_ids").get<std::vector<std::uint64_t>>();
        r.steps.push_back(std::move(s));
      } else if (type == "footer") {
        for (const auto& st : j.at("stages")) {
          StageBoundary b;
          b.stage = st.at("stage").get<std::string>();
          b.before = st.at("before").get<std::map<std::string, std::uint64_t>>();
          b.after = st.at("after").get<std::map<std::string, std::uint64_t>>();
          b.teacher_before = st.at("teacher_before").get<std::uint64_t>();
          b.teacher_after = st.at("teacher_after").get<std::uint64_t>();
          b.checkpoint_hash = st.at("checkpoint_hash").get<std::uint64_t>();
          b.wall_seconds = st.at("wall_seconds").get<double>();
          r.boundaries.push_back(std::move(b));
        }
        footer = true;
      } else {
        throw IoError("run record: unknown line type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("run record: ") + e.what());
  }
  if (!footer) throw IoError("run record: missing footer (incomplete run)");
  return r;
}

std::vector<double> RunRecord::curve(const std::string& stage, const std::string& term) const {
  std::vector<double> out;
  for (const auto& s : steps) {
    if (s.stage == stage) out.push_back(s.loss(term));
  }
  return out;
}

const StageBoundary& RunRecord::boundary(const std::string& stage) const {
  for (const auto& b : boundaries) {
    if (b.stage == stage) return b;
  }
  throw ValidationError("run record has no stage '" + stage + "'");
}

}  // namespace gkd::pipeline
