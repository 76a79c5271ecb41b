#pragma once

// Scenarios, trained-artifact management, the multi-method benchmark and
// its CSV/SVG reports.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "skillplan/connectors.hpp"
#include "skillplan/executor.hpp"
#include "skillplan/planner.hpp"

namespace skillplan::bench {

// ------------------------------------------------------------------ config

/// `key = value` lines; `#` starts a comment. Unknown keys are rejected by
/// the typed getters' owner (see `known_keys`).
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  double get(const std::string& key, double fallback) const;
  int get(const std::string& key, int fallback) const;
  bool get(const std::string& key, bool fallback) const;
  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Throws InvalidArgument naming the first key not in `known_keys()`.
  void validate() const;
  static const std::vector<std::string>& known_keys();
  /// Every key with its default, in file syntax.
  static std::string defaults_text();

 private:
  std::map<std::string, std::string> values_;
};

// --------------------------------------------------------------- scenarios

inline constexpr const char* kScenarioIds[] = {"retrieval", "multi-retrieving", "edge-pushing",
                                               "serving"};

struct Scenario {
  std::string id;
  planner::PlanningTask task;
  double timeout = 150.0;  // seconds before scaling
  int trials = 50;
};

/// Object the skill connectors are generated for and the scenarios use.
sim::RigidObject skill_object(rl::SkillKind kind);

/// One of `kScenarioIds`; the seed jitters object poses and frictions.
/// Throws UnknownScenario otherwise.
Scenario build_scenario(const std::string& id, std::uint64_t seed);

/// Domain used by a method (the baselines plan with deterministic skills).
pddl::DomainDef method_domain(const std::string& method);

// --------------------------------------------------------------- artifacts

struct ArtifactConfig {
  std::uint64_t seed = 1;
  int retrieve_iterations = 100;
  int edgepush_iterations = 50;
  int eval_episodes = 100;
  connectors::DatasetConfig data;
  connectors::DiscriminatorTrainConfig discriminator;
  int threads = 0;
};

ArtifactConfig artifact_config(const Config& config);

std::string policy_path(const std::string& dir, rl::SkillKind kind);
std::string dataset_path(const std::string& dir, rl::SkillKind kind);
std::string discriminator_path(const std::string& dir, rl::SkillKind kind);

using Log = std::function<void(const std::string&)>;

/// Trains the policy of a skill and writes its checkpoint and training log.
rl::TrainingResult train_skill(const std::string& dir, rl::SkillKind kind,
                               const ArtifactConfig& config, const Log& log = {});
/// Generates the skill's dataset from its policy checkpoint.
connectors::SkillDataset generate_skill_data(const std::string& dir, rl::SkillKind kind,
                                             const ArtifactConfig& config, const Log& log = {});
/// Fits the skill's discriminator from its dataset.
connectors::DiscriminatorFit fit_skill_discriminator(const std::string& dir, rl::SkillKind kind,
                                                     const ArtifactConfig& config,
                                                     const Log& log = {});

/// Produces whatever artifacts are missing in `dir`.
void ensure_artifacts(const std::string& dir, const ArtifactConfig& config, const Log& log = {});

/// Loads both skills for `domain`; throws MissingCheckpoint naming the file.
planner::SkillSet load_skills(const std::string& dir, const pddl::DomainDef& domain);

// --------------------------------------------------------------- benchmark

inline constexpr const char* kMethods[] = {"hb", "sb", "srl", "ours"};

struct BenchConfig {
  std::vector<std::string> methods{"hb", "sb", "srl", "ours"};
  std::vector<std::string> scenarios{"retrieval", "multi-retrieving", "edge-pushing", "serving"};
  int trials = 50;
  double timeout_scale = 0.2;
  std::uint64_t seed = 0;
  int threads = 0;
  planner::PlannerConfig planner;
  executor::ExecutionConfig execution;
  sim::SimParams sim;  // noise parameters applied to every scenario world
};

BenchConfig bench_config(const Config& config);

struct TrialResult {
  std::string method;
  std::string scenario;
  int trial = 0;
  bool planned = false;
  bool executed = false;
  bool valid = false;       // plan passed validation
  double planning_seconds = 0.0;
  std::string status;       // planner status or execution failure
  int solver_invocations = 0;
};

struct BenchRow {
  std::string method;
  std::string scenario;
  std::string metric;  // planning_time | planning_success | execution_success
  double value = 0.0;  // NaN when no trial produced a plan
  double stddev = 0.0;
  int trials = 0;
};

struct BenchReport {
  double timeout_scale = 0.2;
  std::uint64_t seed = 0;
  std::vector<BenchRow> rows;
  std::vector<TrialResult> trials;
};

/// Runs every (method, scenario, trial). `skills` may be empty when only
/// HB and SB are requested.
BenchReport run_benchmark(const BenchConfig& config, const planner::SkillSet& skills,
                          const Log& log = {});

/// Scenario as a method sees it: its domain, the configured noise.
Scenario method_scenario(const std::string& method, const std::string& scenario,
                         std::uint64_t seed, const BenchConfig& config);

struct PlannedScenario {
  Scenario scenario;
  planner::PlanResult result;
  double timeout = 0.0;  // scaled budget the plan had to meet
  bool within_budget() const { return result.solved() && result.stats.total_seconds <= timeout; }
};

/// Plans one scenario instance with `method` under the scaled timeout.
PlannedScenario plan_scenario(const std::string& method, const std::string& scenario,
                              std::uint64_t seed, const BenchConfig& config,
                              const planner::SkillSet& skills);

/// Seed of a benchmark trial's scenario instance, and of its execution noise.
std::uint64_t trial_seed(std::uint64_t master, const std::string& scenario, int trial);
std::uint64_t execution_seed(std::uint64_t scenario_seed);

/// Runs one trial (exposed for tests and the CLI).
TrialResult run_trial(const std::string& method, const std::string& scenario, int trial,
                      const BenchConfig& config, const planner::SkillSet& skills,
                      executor::ExecutionTrace* trace = nullptr,
                      planner::PlanResult* plan = nullptr);

const BenchRow* find_row(const BenchReport& report, const std::string& method,
                         const std::string& scenario, const std::string& metric);

/// Equality of everything except wall-clock measurements.
bool same_outcomes(const BenchReport& a, const BenchReport& b);

std::string report_csv(const BenchReport& report);
std::vector<BenchRow> rows_from_csv(const std::string& text);
/// Rows plus the timeout scale and seed recorded in the header comment.
BenchReport report_from_csv(const std::string& text);
std::string report_svg(const BenchReport& report);

/// Writes report.csv and/or report.svg (and trials.csv) under `dir`.
void emit_report(const BenchReport& report, const std::string& dir,
                 const std::vector<std::string>& formats);

}  // namespace skillplan::bench
