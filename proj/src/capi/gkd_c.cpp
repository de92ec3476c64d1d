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

#include "gkd/gkd.h"

#include <cstdio>
#include <new>
#include <string>

#include "gkd/app.hpp"
#include "gkd/errors.hpp"

struct gkd_session {
  gkd::app::ExperimentConfig config;
  gkd::app::Overrides overrides;
  gkd_log_fn log_fn = nullptr;
  void* log_user = nullptr;
  std::string last_error;
  std::string scratch;

  gkd::app::Logger logger() const {
    return [fn = log_fn, user = log_user](const std::string& line) {
      if (fn) {
        fn(line.c_str(), user);
      } else {
        std::fputs(line.c_str(), stdout);
        std::fputc('\n', stdout);
        std::fflush(stdout);
      }
    };
  }

  gkd::app::ExperimentConfig effective() const {
    auto c = config;
    overrides.apply(c);
    return c;
  }
};

namespace {

class ArgumentError : public gkd::Error {
 public:
  using gkd::Error::Error;
};

class CheckFailed : public gkd::Error {
 public:
  using gkd::Error::Error;
};

// Runs `body`, mapping every exception onto a status and recording its
// message on the session.
template <typename F>
gkd_status guarded(gkd_session* s, F&& body) {
  if (!s) return GKD_ERR_INVALID_ARGUMENT;
  s->last_error.clear();
  try {
    body();
    return GKD_OK;
  } catch (const ArgumentError& e) {
    s->last_error = e.what();
    return GKD_ERR_INVALID_ARGUMENT;
  } catch (const CheckFailed& e) {
    s->last_error = e.what();
    return GKD_ERR_CHECK_FAILED;
  } catch (const gkd::DimensionError& e) {
    s->last_error = e.what();
    return GKD_ERR_DIMENSION;
  } catch (const gkd::ValidationError& e) {
    s->last_error = e.what();
    return GKD_ERR_VALIDATION;
  } catch (const gkd::NumericError& e) {
    s->last_error = e.what();
    return GKD_ERR_NUMERIC;
  } catch (const gkd::ContractError& e) {
    s->last_error = e.what();
    return GKD_ERR_CONTRACT;
  } catch (const gkd::IoError& e) {
    s->last_error = e.what();
    return GKD_ERR_IO;
  } catch (const gkd::ExistsError& e) {
    s->last_error = e.what();
    return GKD_ERR_EXISTS;
  } catch (const gkd::MissingInputError& e) {
    s->last_error = e.what();
    return GKD_ERR_MISSING_INPUT;
  } catch (const gkd::RunError& e) {
    s->last_error = e.what();
    return GKD_ERR_RUN;
  } catch (const std::bad_alloc&) {
    s->last_error = "out of memory";
    return GKD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    s->last_error = e.what();
    return GKD_ERR_INTERNAL;
  } catch (...) {
    s->last_error = "unknown error";
    return GKD_ERR_INTERNAL;
  }
}

double parse_double(const char* key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw gkd::ValidationError(std::string(key) + ": not a number: '" + v + "'");
  return out;
}

}  // namespace

extern "C" {

const char* gkd_version(void) { return "1.0.0"; }

const char* gkd_status_name(gkd_status status) {
  switch (status) {
    case GKD_OK: return "ok";
    case GKD_ERR_INVALID_ARGUMENT: return "invalid argument";
    case GKD_ERR_VALIDATION: return "validation error";
    case GKD_ERR_DIMENSION: return "dimension error";
    case GKD_ERR_NUMERIC: return "numeric error";
    case GKD_ERR_CONTRACT: return "contract violation";
    case GKD_ERR_IO: return "i/o error";
    case GKD_ERR_EXISTS: return "output exists";
    case GKD_ERR_MISSING_INPUT: return "missing input";
    case GKD_ERR_RUN: return "run failed";
    case GKD_ERR_CHECK_FAILED: return "check failed";
    case GKD_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

int gkd_exit_code(gkd_status status) {
  switch (status) {
    case GKD_OK: return 0;
    case GKD_ERR_INVALID_ARGUMENT:
    case GKD_ERR_VALIDATION:
    case GKD_ERR_EXISTS:
    case GKD_ERR_MISSING_INPUT: return 2;
    default: return 1;
  }
}

gkd_status gkd_session_create(gkd_session** out) {
  if (!out) return GKD_ERR_INVALID_ARGUMENT;
  *out = new (std::nothrow) gkd_session;
  return *out ? GKD_OK : GKD_ERR_INTERNAL;
}

gkd_status gkd_session_load_config(gkd_session* session, const char* config_path) {
  return guarded(session, [&] {
    if (!config_path) throw ArgumentError("gkd_session_load_config: path is null");
    session->config = gkd::app::ExperimentConfig::load(config_path);
  });
}

void gkd_session_destroy(gkd_session* session) { delete session; }

const char* gkd_session_last_error(const gkd_session* session) {
  return session ? session->last_error.c_str() : "null session";
}

gkd_status gkd_session_set_log(gkd_session* session, gkd_log_fn fn, void* user) {
  return guarded(session, [&] {
    session->log_fn = fn;
    session->log_user = user;
  });
}

gkd_status gkd_session_set(gkd_session* session, const char* key, const char* value) {
  return guarded(session, [&] {
    if (!key || !value) throw ArgumentError("gkd_session_set: key and value are required");
    const std::string k = key, v = value;
    auto& o = session->overrides;
    if (k == "seed") {
      std::size_t used = 0;
      unsigned long long seed = 0;
      try {
        seed = std::stoull(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != v.size()) throw gkd::ValidationError("seed: not an unsigned integer: '" + v + "'");
      o.seed = seed;
    } else if (k == "method") {
      o.method = v;
    } else if (k == "label_fraction") {
      o.label_fraction = parse_double(key, v);
    } else if (k == "out") {
      o.out = v;
    } else if (k == "overwrite") {
      if (v != "0" && v != "1") throw gkd::ValidationError("overwrite: expected 0 or 1");
      o.overwrite = v == "1";
    } else {
      throw ArgumentError("unknown override key '" + k + "'");
    }
  });
}

gkd_status gkd_session_config_json(gkd_session* session, const char** out) {
  return guarded(session, [&] {
    if (!out) throw ArgumentError("gkd_session_config_json: out is null");
    session->scratch = session->effective().to_json();
    *out = session->scratch.c_str();
  });
}

gkd_status gkd_build_corpus(gkd_session* session, uint64_t* corpus_hash) {
  return guarded(session, [&] {
    const auto s = gkd::app::cmd_build_corpus(session->effective(), session->overrides.overwrite, session->logger());
    if (corpus_hash) *corpus_hash = s.hash;
  });
}

gkd_status gkd_pretrain_teacher(gkd_session* session, double* val_miou) {
  return guarded(session, [&] {
    const auto t = gkd::app::cmd_pretrain_teacher(session->effective(), session->overrides.overwrite,
                                                  session->logger());
    if (val_miou) *val_miou = t.val_miou;
  });
}

gkd_status gkd_run(gkd_session* session, const char* method, double* unseen_miou) {
  return guarded(session, [&] {
    const auto config = session->effective();
    std::vector<std::string> methods = config.methods;
    if (method) methods = {method};
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& m : methods) {
      for (const auto& r : gkd::app::cmd_run(config, m, session->overrides.overwrite, session->logger())) {
        sum += gkd::eval::unseen_average(r.reports);
        ++n;
      }
    }
    if (unseen_miou) *unseen_miou = n ? sum / static_cast<double>(n) : 0.0;
  });
}

gkd_status gkd_eval(gkd_session* session, const char* run_dir) {
  return guarded(session, [&] {
    const auto config = session->effective();
    std::vector<std::filesystem::path> runs;
    if (run_dir) {
      runs.emplace_back(run_dir);
    } else {
      runs = gkd::app::find_runs(config.out);
      if (runs.empty()) throw gkd::MissingInputError("no runs under " + (config.out / "runs").string());
    }
    for (const auto& r : runs) gkd::app::cmd_eval(config, r, session->logger());
  });
}

gkd_status gkd_gradcheck(gkd_session* session, int corrupt, size_t* rows, size_t* failed) {
  return guarded(session, [&] {
    gkd::app::GradcheckOptions opt;
    opt.corrupt = corrupt != 0;
    const auto table = gkd::app::cmd_gradcheck(opt, session->logger());
    std::size_t bad = 0;
    for (const auto& r : table) bad += !r.passed;
    if (rows) *rows = table.size();
    if (failed) *failed = bad;
    if (bad) throw CheckFailed(std::to_string(bad) + " gradient check(s) exceeded the tolerance");
  });
}

gkd_status gkd_report(gkd_session* session, const char* const* run_dirs, size_t count, const char* out_dir) {
  return guarded(session, [&] {
    if (count && !run_dirs) throw ArgumentError("gkd_report: run_dirs is null");
    const auto config = session->effective();
    std::vector<std::filesystem::path> runs;
    for (std::size_t i = 0; i < count; ++i) {
      if (!run_dirs[i]) throw ArgumentError("gkd_report: null run directory");
      runs.emplace_back(run_dirs[i]);
    }
    if (runs.empty()) runs = gkd::app::find_runs(config.out);
    const std::filesystem::path out = out_dir ? std::filesystem::path(out_dir) : config.out / "report";
    gkd::app::cmd_report(runs, out, session->overrides.overwrite, session->logger());
  });
}

}  // extern "C"
