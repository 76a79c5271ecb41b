// Command-line front end; talks to the library only through its C API.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "skillplan/skillplan.h"

namespace fs = std::filesystem;

namespace {

struct Failure {
  int code;
  std::string message;
};

// Owning wrappers over the C handles.
template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(ptr); }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};

using Config = Handle<sp_config, sp_config_free>;
using Skills = Handle<sp_skills, sp_skills_free>;
using Plan = Handle<sp_plan, sp_plan_free>;
using Trace = Handle<sp_trace, sp_trace_free>;
using Report = Handle<sp_report, sp_report_free>;

void check(sp_status s) {
  if (s == SP_OK) return;
  const std::string name = sp_status_name(s), what = sp_last_error();
  throw Failure{1, what.rfind(name, 0) == 0 ? what : name + ": " + what};
}

std::string take(char* text) {
  std::string s = text != nullptr ? text : "";
  sp_string_free(text);
  return s;
}

void log_line(const char* message, void*) { std::cerr << message << "\n"; }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{1, "cannot read '" + path + "'"};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text) || !out.flush()) {
    throw Failure{1, "cannot write '" + path.string() + "'"};
  }
}

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config_path;
  double timeout_scale = 0.0;
  std::string out = ".";
  std::string artifacts = "artifacts";
  int threads = -1;
};

// Output paths live under --out; inputs are taken as given, falling back
// to --out when they do not exist relative to the working directory.
fs::path output(const Globals& g, const std::string& name) { return fs::path(g.out) / name; }

std::string input(const Globals& g, const std::string& path) {
  const fs::path p(path);
  if (p.is_absolute() || fs::exists(p)) return path;
  const fs::path alt = fs::path(g.out) / p;
  return fs::exists(alt) ? alt.string() : path;
}

std::string artifacts_dir(const Globals& g) {
  const fs::path p(g.artifacts);
  return p.is_absolute() ? g.artifacts : (fs::path(g.out) / p).string();
}

void make_config(const Globals& g, Config& c, bool training) {
  if (!g.config_path.empty()) {
    check(sp_config_load(input(g, g.config_path).c_str(), c.out()));
  } else {
    check(sp_config_new(c.out()));
  }
  if (g.seed_given) {
    check(sp_config_set(c.get(), training ? "artifacts.seed" : "seed", std::to_string(g.seed).c_str()));
  }
  if (g.timeout_scale > 0.0) {
    std::ostringstream s;
    s.precision(17);
    s << g.timeout_scale;
    check(sp_config_set(c.get(), "bench.timeout_scale", s.str().c_str()));
  }
  if (g.threads >= 0) check(sp_config_set(c.get(), "threads", std::to_string(g.threads).c_str()));
}

std::uint64_t config_seed(const Config& c) {
  char* v = nullptr;
  check(sp_config_get(c.get(), "seed", &v));
  return std::stoull(take(v));
}

std::vector<std::string> skills_for(const std::string& skill) {
  if (skill == "all") return {"retrieve", "edgepush"};
  return {skill};
}

bool needs_skills(const std::string& method) { return method == "ours" || method == "srl"; }

void load_skills(const Globals& g, const std::string& method, Skills& skills) {
  if (needs_skills(method)) check(sp_skills_load(artifacts_dir(g).c_str(), skills.out()));
}

void print_plan(const Plan& plan) {
  const std::size_t n = sp_plan_length(plan.get());
  for (std::size_t i = 0; i < n; ++i) {
    char* text = nullptr;
    check(sp_plan_step(plan.get(), i, &text));
    std::cout << "  " << i << ": " << take(text) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task planning with learned probabilistic skills"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--seed", g.seed, "Master seed (scenario instance, benchmark, training)")
      ->each([&](const std::string&) { g.seed_given = true; });
  app.add_option("--config", g.config_path, "Key-value configuration file");
  app.add_option("--timeout-scale", g.timeout_scale, "Scale of the planning time budgets")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--artifacts", g.artifacts, "Checkpoint directory (relative to --out)");
  app.add_option("--threads", g.threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);

  std::string skill = "all";
  auto* train = app.add_subcommand("train-skill", "Train skill policies");
  auto* gen = app.add_subcommand("gen-data", "Generate sub-goal datasets from trained policies");
  auto* fit = app.add_subcommand("fit-discriminator", "Fit state discriminators");
  for (auto* sub : {train, gen, fit}) {
    sub->add_option("--skill", skill, "retrieve, edgepush or all")
        ->check(CLI::IsMember({"retrieve", "edgepush", "all"}));
  }

  std::string scenario, method = "ours", plan_file, trace_file = "trace.jsonl";
  auto* plan = app.add_subcommand("plan", "Plan one scenario instance");
  auto* execute = app.add_subcommand("execute", "Plan (or load a plan) and execute it");
  for (auto* sub : {plan, execute}) {
    sub->add_option("--scenario", scenario, "Scenario id")->required();
    sub->add_option("--method", method, "hb, sb, srl or ours")
        ->check(CLI::IsMember({"hb", "sb", "srl", "ours"}));
  }
  execute->add_option("--plan", plan_file, "Plan file written by 'plan'");
  execute->add_option("--trace", trace_file, "Trace file name under --out");

  std::string methods = "hb,sb,srl,ours", scenarios, formats = "csv,svg";
  int trials = 0;
  auto* bench = app.add_subcommand("bench", "Run the benchmark");
  bench->add_option("--methods", methods, "Comma-separated methods");
  bench->add_option("--scenarios", scenarios, "Comma-separated scenarios (default: all)");
  bench->add_option("--trials", trials, "Trials per method and scenario")->check(CLI::PositiveNumber);
  bench->add_option("--formats", formats, "Report formats: csv, svg");

  std::string replay_trace;
  auto* replay = app.add_subcommand("replay", "Re-run a recorded trace and compare final poses");
  replay->add_option("--trace", replay_trace, "Trace file")->required();

  std::string report_csv;
  auto* report = app.add_subcommand("report", "Render report files from a benchmark CSV");
  report->add_option("--csv", report_csv, "Benchmark CSV")->required();
  report->add_option("--formats", formats, "Report formats: csv, svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    sp_set_warning_handler(log_line, nullptr);
    if (train->parsed() || gen->parsed() || fit->parsed()) {
      Config config;
      make_config(g, config, true);
      const std::string dir = artifacts_dir(g);
      for (const auto& s : skills_for(skill)) {
        char* summary = nullptr;
        if (train->parsed()) {
          check(sp_train_skill(config.get(), dir.c_str(), s.c_str(), log_line, nullptr, &summary));
        } else if (gen->parsed()) {
          check(sp_generate_data(config.get(), dir.c_str(), s.c_str(), log_line, nullptr, &summary));
        } else {
          check(sp_fit_discriminator(config.get(), dir.c_str(), s.c_str(), log_line, nullptr, &summary));
        }
        std::cout << take(summary) << "\n";
      }
      return 0;
    }

    if (plan->parsed() || execute->parsed()) {
      Config config;
      make_config(g, config, false);
      const std::uint64_t seed = config_seed(config);
      Skills skills;
      load_skills(g, method, skills);
      Plan p;
      if (execute->parsed() && !plan_file.empty()) {
        const std::string text = read_file(input(g, plan_file));
        check(sp_plan_load(text.c_str(), method.c_str(), scenario.c_str(), seed, config.get(), p.out()));
      } else {
        check(sp_plan_scenario(config.get(), skills.get(), method.c_str(), scenario.c_str(), seed, p.out()));
      }
      char* stats = nullptr;
      check(sp_plan_stats(p.get(), &stats));
      std::cerr << take(stats) << "\n";
      if (!sp_plan_solved(p.get())) {
        throw Failure{1, std::string("no plan: ") + sp_plan_status(p.get()) + " " + sp_plan_message(p.get())};
      }
      print_plan(p);
      if (plan->parsed()) {
        char* text = nullptr;
        check(sp_plan_to_jsonl(p.get(), &text));
        const fs::path path = output(g, "plan.jsonl");
        write_file(path, take(text));
        std::cout << "plan written to " << path.string() << "\n";
        return 0;
      }
      Trace t;
      // The execution noise seed differs from the scenario seed.
      check(sp_execute(config.get(), skills.get(), p.get(), seed ^ 0x9e3779b97f4a7c15ull, t.out()));
      char* text = nullptr;
      check(sp_trace_to_jsonl(t.get(), &text));
      const fs::path path = output(g, trace_file);
      write_file(path, take(text));
      std::cout << "trace written to " << path.string() << "\n";
      if (!sp_trace_success(t.get())) throw Failure{1, std::string("execution failed: ") + sp_trace_failure(t.get())};
      std::cout << "execution succeeded\n";
      return 0;
    }

    if (bench->parsed()) {
      Config config;
      make_config(g, config, false);
      check(sp_config_set(config.get(), "bench.methods", methods.c_str()));
      if (!scenarios.empty()) check(sp_config_set(config.get(), "bench.scenarios", scenarios.c_str()));
      if (trials > 0) check(sp_config_set(config.get(), "bench.trials", std::to_string(trials).c_str()));
      bool learned = false;
      std::stringstream ms(methods);
      for (std::string m; std::getline(ms, m, ',');) learned = learned || needs_skills(m);
      Skills skills;
      if (learned) check(sp_skills_load(artifacts_dir(g).c_str(), skills.out()));
      Report r;
      check(sp_bench_run(config.get(), skills.get(), log_line, nullptr, r.out()));
      check(sp_report_emit(r.get(), g.out.c_str(), formats.c_str()));
      char* csv = nullptr;
      check(sp_report_csv(r.get(), &csv));
      std::cout << take(csv);
      return 0;
    }

    if (replay->parsed()) {
      const std::string text = read_file(input(g, replay_trace));
      Trace t;
      check(sp_trace_from_jsonl(text.c_str(), t.out()));
      int identical = 0;
      char* world = nullptr;
      check(sp_trace_replay(t.get(), &identical, &world));
      write_file(output(g, "replay_final.json"), take(world));
      if (!identical) throw Failure{1, "replayed final poses differ from the recorded ones"};
      std::cout << "replay reproduces the recorded final poses exactly\n";
      return 0;
    }

    if (report->parsed()) {
      const std::string text = read_file(input(g, report_csv));
      Report r;
      check(sp_report_from_csv(text.c_str(), r.out()));
      check(sp_report_emit(r.get(), g.out.c_str(), formats.c_str()));
      std::cout << "report written to " << g.out << "\n";
      return 0;
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  }
  return 0;
}
