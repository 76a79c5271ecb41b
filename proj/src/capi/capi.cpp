#include "skillplan/skillplan.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <new>
#include <sstream>
#include <string>

#include "skillplan/bench.hpp"

using namespace skillplan;
using json = nlohmann::json;

struct sp_config {
  bench::Config config;
};

struct sp_skills {
  planner::SkillSet skills;
};

struct sp_plan {
  std::string method;
  bench::PlannedScenario planned;
};

struct sp_trace {
  executor::ExecutionTrace trace;
};

struct sp_report {
  bench::BenchReport report;
};

namespace {

thread_local std::string last_error;

sp_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return SP_ERR_INVALID_ARGUMENT;
    case ErrorCode::Parse: return SP_ERR_PARSE;
    case ErrorCode::Io: return SP_ERR_IO;
    case ErrorCode::MissingCheckpoint: return SP_ERR_MISSING_CHECKPOINT;
    case ErrorCode::Unreachable: return SP_ERR_UNREACHABLE;
    case ErrorCode::OutOfRegion: return SP_ERR_OUT_OF_REGION;
    case ErrorCode::DimensionMismatch: return SP_ERR_DIMENSION_MISMATCH;
    case ErrorCode::PreconditionViolation: return SP_ERR_PRECONDITION;
    case ErrorCode::InvalidInitialState: return SP_ERR_INVALID_INITIAL_STATE;
    case ErrorCode::Diverged: return SP_ERR_DIVERGED;
    case ErrorCode::ExecutionFailed: return SP_ERR_EXECUTION_FAILED;
    case ErrorCode::UnknownScenario: return SP_ERR_UNKNOWN_SCENARIO;
    case ErrorCode::Internal: return SP_ERR_INTERNAL;
  }
  return SP_ERR_INTERNAL;
}

// Runs `fn`, translating exceptions into status codes.
template <typename Fn>
sp_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return SP_OK;
  } catch (const Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    last_error = e.what();
    return SP_ERR_PARSE;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return SP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return SP_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

bench::Log logger(sp_log_fn fn, void* user) {
  if (fn == nullptr) return {};
  return [fn, user](const std::string& m) { fn(m.c_str(), user); };
}

const bench::Config& config_or_empty(const sp_config* c) {
  static const bench::Config empty;
  return c != nullptr ? c->config : empty;
}

const planner::SkillSet& skills_or_empty(const sp_skills* s) {
  static const planner::SkillSet empty;
  return s != nullptr ? s->skills : empty;
}

std::string defaults_value(const std::string& key) {
  const bench::Config d = bench::Config::parse(bench::Config::defaults_text());
  if (!d.has(key)) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
  return d.get(key, std::string{});
}

}  // namespace

extern "C" {

const char* sp_version(void) { return "0.1.0"; }

const char* sp_status_name(sp_status status) {
  switch (status) {
    case SP_OK: return "ok";
    case SP_ERR_INVALID_ARGUMENT: return "invalid argument";
    case SP_ERR_PARSE: return "parse error";
    case SP_ERR_IO: return "i/o error";
    case SP_ERR_MISSING_CHECKPOINT: return "missing checkpoint";
    case SP_ERR_UNREACHABLE: return "unreachable";
    case SP_ERR_OUT_OF_REGION: return "out of region";
    case SP_ERR_DIMENSION_MISMATCH: return "dimension mismatch";
    case SP_ERR_PRECONDITION: return "precondition violation";
    case SP_ERR_INVALID_INITIAL_STATE: return "invalid initial state";
    case SP_ERR_DIVERGED: return "diverged";
    case SP_ERR_EXECUTION_FAILED: return "execution failed";
    case SP_ERR_UNKNOWN_SCENARIO: return "unknown scenario";
    case SP_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* sp_last_error(void) { return last_error.c_str(); }

void sp_string_free(char* text) { std::free(text); }

void sp_set_warning_handler(sp_log_fn fn, void* user) {
  if (fn == nullptr) {
    set_warning_handler({});
  } else {
    set_warning_handler([fn, user](const std::string& m) { fn(m.c_str(), user); });
  }
}

// ------------------------------------------------------------------ config

sp_status sp_config_new(sp_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new sp_config{};
  });
}

sp_status sp_config_load(const char* path, sp_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    bench::Config c = bench::Config::load(path);
    c.validate();
    *out = new sp_config{std::move(c)};
  });
}

sp_status sp_config_parse(const char* text, sp_config** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    bench::Config c = bench::Config::parse(text);
    c.validate();
    *out = new sp_config{std::move(c)};
  });
}

sp_status sp_config_set(sp_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    defaults_value(key);
    config->config.set(key, value);
  });
}

sp_status sp_config_get(const sp_config* config, const char* key, char** value) {
  return guarded([&] {
    require(key, "key");
    require(value, "value");
    const std::string fallback = defaults_value(key);
    *value = dup(config != nullptr ? config->config.get(key, fallback) : fallback);
  });
}

sp_status sp_config_defaults(char** text) {
  return guarded([&] {
    require(text, "text");
    *text = dup(bench::Config::defaults_text());
  });
}

void sp_config_free(sp_config* config) { delete config; }

// --------------------------------------------------------------- artifacts

sp_status sp_train_skill(const sp_config* config, const char* dir, const char* skill,
                         sp_log_fn log, void* user, char** summary) {
  return guarded([&] {
    require(dir, "dir");
    require(skill, "skill");
    const auto kind = rl::parse_skill(skill);
    const auto r = bench::train_skill(dir, kind, bench::artifact_config(config_or_empty(config)),
                                      logger(log, user));
    if (summary != nullptr) {
      *summary = dup(json{{"skill", rl::skill_name(kind)},
                          {"iterations", r.log.size()},
                          {"initial_success", r.initial.success_rate},
                          {"final_success", r.final.success_rate},
                          {"initial_return", r.initial.mean_return},
                          {"final_return", r.final.mean_return},
                          {"checkpoint", bench::policy_path(dir, kind)}}
                         .dump());
    }
  });
}

sp_status sp_generate_data(const sp_config* config, const char* dir, const char* skill,
                           sp_log_fn log, void* user, char** summary) {
  return guarded([&] {
    require(dir, "dir");
    require(skill, "skill");
    const auto kind = rl::parse_skill(skill);
    const auto ds = bench::generate_skill_data(
        dir, kind, bench::artifact_config(config_or_empty(config)), logger(log, user));
    if (summary != nullptr) {
      std::size_t positives = 0;
      for (const auto& r : ds.records) positives += r.success ? 1 : 0;
      *summary = dup(json{{"skill", rl::skill_name(kind)},
                          {"pairs", ds.records.size()},
                          {"positives", positives},
                          {"effects_per_pair", ds.n},
                          {"dataset", bench::dataset_path(dir, kind)}}
                         .dump());
    }
  });
}

sp_status sp_fit_discriminator(const sp_config* config, const char* dir, const char* skill,
                               sp_log_fn log, void* user, char** summary) {
  return guarded([&] {
    require(dir, "dir");
    require(skill, "skill");
    const auto kind = rl::parse_skill(skill);
    const auto fit = bench::fit_skill_discriminator(
        dir, kind, bench::artifact_config(config_or_empty(config)), logger(log, user));
    if (summary != nullptr) {
      *summary = dup(json{{"skill", rl::skill_name(kind)},
                          {"epochs", fit.epoch_loss.size()},
                          {"initial_loss", fit.initial_loss},
                          {"final_loss", fit.epoch_loss.empty() ? fit.initial_loss
                                                                : fit.epoch_loss.back()},
                          {"discriminator", bench::discriminator_path(dir, kind)}}
                         .dump());
    }
  });
}

sp_status sp_ensure_artifacts(const sp_config* config, const char* dir, sp_log_fn log,
                              void* user) {
  return guarded([&] {
    require(dir, "dir");
    bench::ensure_artifacts(dir, bench::artifact_config(config_or_empty(config)),
                            logger(log, user));
  });
}

sp_status sp_skills_load(const char* dir, sp_skills** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    *out = new sp_skills{bench::load_skills(dir, bench::method_domain("ours"))};
  });
}

void sp_skills_free(sp_skills* skills) { delete skills; }

// ---------------------------------------------------------------- planning

sp_status sp_plan_scenario(const sp_config* config, const sp_skills* skills, const char* method,
                           const char* scenario, uint64_t seed, sp_plan** out) {
  return guarded([&] {
    require(method, "method");
    require(scenario, "scenario");
    require(out, "out");
    const bench::BenchConfig bc = bench::bench_config(config_or_empty(config));
    auto p = std::make_unique<sp_plan>();
    p->method = method;
    p->planned = bench::plan_scenario(method, scenario, seed, bc, skills_or_empty(skills));
    *out = p.release();
  });
}

sp_status sp_plan_load(const char* jsonl, const char* method, const char* scenario,
                       uint64_t seed, const sp_config* config, sp_plan** out) {
  return guarded([&] {
    require(jsonl, "jsonl");
    require(method, "method");
    require(scenario, "scenario");
    require(out, "out");
    const bench::BenchConfig bc = bench::bench_config(config_or_empty(config));
    auto p = std::make_unique<sp_plan>();
    p->method = method;
    p->planned.scenario = bench::method_scenario(method, scenario, seed, bc);
    p->planned.timeout = p->planned.scenario.timeout * bc.timeout_scale;
    p->planned.result.status = planner::PlanStatus::Solved;
    p->planned.result.plan = planner::plan_from_jsonl(jsonl);
    *out = p.release();
  });
}

int sp_plan_solved(const sp_plan* plan) {
  return plan != nullptr && plan->planned.within_budget() ? 1 : 0;
}

const char* sp_plan_status(const sp_plan* plan) {
  if (plan == nullptr) return "";
  if (plan->planned.result.solved() && !plan->planned.within_budget()) {
    return planner::plan_status_name(planner::PlanStatus::Timeout);
  }
  return planner::plan_status_name(plan->planned.result.status);
}

const char* sp_plan_message(const sp_plan* plan) {
  return plan != nullptr ? plan->planned.result.message.c_str() : "";
}

size_t sp_plan_length(const sp_plan* plan) {
  if (plan == nullptr || !plan->planned.result.plan) return 0;
  return plan->planned.result.plan->steps.size();
}

sp_status sp_plan_step(const sp_plan* plan, size_t index, char** text) {
  return guarded([&] {
    require(plan, "plan");
    require(text, "text");
    if (index >= sp_plan_length(plan)) throw Error(ErrorCode::InvalidArgument, "step index out of range");
    const auto& step = plan->planned.result.plan->steps[index];
    std::string s = step.action;
    for (const auto& a : step.args) s += " " + a;
    *text = dup(s);
  });
}

sp_status sp_plan_to_jsonl(const sp_plan* plan, char** text) {
  return guarded([&] {
    require(plan, "plan");
    require(text, "text");
    if (!plan->planned.result.plan) throw Error(ErrorCode::Unreachable, "no plan was found");
    *text = dup(planner::plan_to_jsonl(*plan->planned.result.plan));
  });
}

sp_status sp_plan_stats(const sp_plan* plan, char** text) {
  return guarded([&] {
    require(plan, "plan");
    require(text, "text");
    json j = planner::stats_to_json(plan->planned.result.stats);
    j["status"] = sp_plan_status(plan);
    j["message"] = plan->planned.result.message;
    j["method"] = plan->method;
    j["scenario"] = plan->planned.scenario.id;
    j["timeout"] = plan->planned.timeout;
    *text = dup(j.dump());
  });
}

sp_status sp_plan_validate(const sp_plan* plan, int* valid, char** diagnostics) {
  return guarded([&] {
    require(plan, "plan");
    require(valid, "valid");
    if (!plan->planned.result.plan) throw Error(ErrorCode::Unreachable, "no plan was found");
    const auto v = planner::validate_plan(*plan->planned.result.plan, plan->planned.scenario.task.domain);
    *valid = v.valid ? 1 : 0;
    if (diagnostics != nullptr) {
      std::string d;
      for (const auto& line : v.diagnostics) d += line + "\n";
      *diagnostics = dup(d);
    }
  });
}

void sp_plan_free(sp_plan* plan) { delete plan; }

// --------------------------------------------------------------- execution

sp_status sp_execute(const sp_config* config, const sp_skills* skills, const sp_plan* plan,
                     uint64_t seed, sp_trace** out) {
  return guarded([&] {
    require(plan, "plan");
    require(out, "out");
    if (!plan->planned.result.plan) throw Error(ErrorCode::Unreachable, "no plan was found");
    const bench::BenchConfig bc = bench::bench_config(config_or_empty(config));
    *out = new sp_trace{executor::execute(*plan->planned.result.plan, plan->planned.scenario.task.world,
                                          skills_or_empty(skills), seed, bc.execution)};
  });
}

int sp_trace_success(const sp_trace* trace) { return trace != nullptr && trace->trace.success ? 1 : 0; }

const char* sp_trace_failure(const sp_trace* trace) {
  return trace != nullptr ? trace->trace.failure.c_str() : "";
}

sp_status sp_trace_to_jsonl(const sp_trace* trace, char** text) {
  return guarded([&] {
    require(trace, "trace");
    require(text, "text");
    *text = dup(executor::trace_to_jsonl(trace->trace));
  });
}

sp_status sp_trace_from_jsonl(const char* text, sp_trace** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = new sp_trace{executor::trace_from_jsonl(text)};
  });
}

sp_status sp_trace_final_world(const sp_trace* trace, char** text) {
  return guarded([&] {
    require(trace, "trace");
    require(text, "text");
    json j = trace->trace.final;
    *text = dup(j.dump());
  });
}

sp_status sp_trace_replay(const sp_trace* trace, int* identical, char** final_world) {
  return guarded([&] {
    require(trace, "trace");
    const sim::WorldState w = executor::replay(trace->trace);
    if (identical != nullptr) *identical = w == trace->trace.final ? 1 : 0;
    if (final_world != nullptr) {
      json j = w;
      *final_world = dup(j.dump());
    }
  });
}

void sp_trace_free(sp_trace* trace) { delete trace; }

// --------------------------------------------------------------- benchmark

sp_status sp_bench_run(const sp_config* config, const sp_skills* skills, sp_log_fn log,
                       void* user, sp_report** out) {
  return guarded([&] {
    require(out, "out");
    const bench::BenchConfig bc = bench::bench_config(config_or_empty(config));
    *out = new sp_report{bench::run_benchmark(bc, skills_or_empty(skills), logger(log, user))};
  });
}

sp_status sp_report_csv(const sp_report* report, char** text) {
  return guarded([&] {
    require(report, "report");
    require(text, "text");
    *text = dup(bench::report_csv(report->report));
  });
}

sp_status sp_report_svg(const sp_report* report, char** text) {
  return guarded([&] {
    require(report, "report");
    require(text, "text");
    *text = dup(bench::report_svg(report->report));
  });
}

sp_status sp_report_from_csv(const char* text, sp_report** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = new sp_report{bench::report_from_csv(text)};
  });
}

sp_status sp_report_emit(const sp_report* report, const char* dir, const char* formats) {
  return guarded([&] {
    require(report, "report");
    require(dir, "dir");
    require(formats, "formats");
    std::vector<std::string> list;
    std::stringstream ss(formats);
    for (std::string f; std::getline(ss, f, ',');) {
      if (!f.empty()) list.push_back(f);
    }
    if (list.empty()) throw Error(ErrorCode::InvalidArgument, "no report format given");
    bench::emit_report(report->report, dir, list);
  });
}

sp_status sp_report_value(const sp_report* report, const char* method, const char* scenario,
                          const char* metric, double* value) {
  return guarded([&] {
    require(report, "report");
    require(method, "method");
    require(scenario, "scenario");
    require(metric, "metric");
    require(value, "value");
    const bench::BenchRow* row = bench::find_row(report->report, method, scenario, metric);
    *value = row != nullptr ? row->value : std::numeric_limits<double>::quiet_NaN();
  });
}

void sp_report_free(sp_report* report) { delete report; }

}  // extern "C"
