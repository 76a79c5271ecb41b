#include "skillplan/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>

#include "skillplan/data.hpp"

namespace skillplan::bench {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i != 0) out += sep;
    out += v[i];
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::InvalidArgument, "invalid value '" + value + "' for config key '" + key + "'");
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw Error(ErrorCode::Parse, "not a number: '" + s + "'");
  return v;
}

// Default values of every config key, in file order.
const std::vector<std::pair<std::string, std::string>>& default_entries() {
  static const std::vector<std::pair<std::string, std::string>> entries = [] {
    const BenchConfig b;
    const ArtifactConfig a;
    const planner::PlannerConfig& p = b.planner;
    const executor::ExecutionConfig& e = b.execution;
    const sim::SimParams s;
    const rl::SearchConfig r = rl::SearchConfig::defaults(rl::SkillKind::Retrieve);
    const rl::SearchConfig ep = rl::SearchConfig::defaults(rl::SkillKind::EdgePush);
    std::vector<std::string> hidden;
    for (int h : a.discriminator.hidden) hidden.push_back(std::to_string(h));
    return std::vector<std::pair<std::string, std::string>>{
        {"seed", std::to_string(b.seed)},
        {"threads", std::to_string(b.threads)},
        {"bench.methods", join(b.methods, ",")},
        {"bench.scenarios", join(b.scenarios, ",")},
        {"bench.trials", std::to_string(b.trials)},
        {"bench.timeout_scale", format_double(b.timeout_scale)},
        {"planner.k", std::to_string(p.k)},
        {"planner.k_max", std::to_string(p.k_max)},
        {"planner.substitution_budget", std::to_string(p.substitution_budget)},
        {"planner.grasp_samples", std::to_string(p.grasp_samples)},
        {"planner.max_expansions", std::to_string(p.max_expansions)},
        {"planner.goal_tolerance", format_double(p.goal_tolerance)},
        {"planner.hb_push", format_double(p.hb_push)},
        {"planner.hb_edge_margin", format_double(p.hb_edge_margin)},
        {"planner.hb_max_pushes", std::to_string(p.hb_max_pushes)},
        {"planner.sb_sequences", std::to_string(p.sb_sequences)},
        {"planner.sb_rounds", std::to_string(p.sb_rounds)},
        {"planner.srl_rounds", std::to_string(p.srl_rounds)},
        {"execution.refine", e.refine ? "true" : "false"},
        {"execution.goal_tolerance", format_double(e.goal_tolerance)},
        {"execution.grasp_samples", std::to_string(e.grasp_samples)},
        {"sim.slip_coeff", format_double(s.slip_coeff)},
        {"sim.contact_noise", format_double(s.contact_noise)},
        {"sim.noise_scale", format_double(s.noise_scale)},
        {"artifacts.seed", std::to_string(a.seed)},
        {"artifacts.retrieve_iterations", std::to_string(r.iterations)},
        {"artifacts.edgepush_iterations", std::to_string(ep.iterations)},
        {"artifacts.eval_episodes", std::to_string(a.eval_episodes)},
        {"data.num_pairs", std::to_string(a.data.num_pairs)},
        {"data.n", std::to_string(a.data.n)},
        {"discriminator.learning_rate", format_double(a.discriminator.learning_rate)},
        {"discriminator.epochs", std::to_string(a.discriminator.epochs)},
        {"discriminator.batch_size", std::to_string(a.discriminator.batch_size)},
        {"discriminator.hidden", join(hidden, ",")},
        {"discriminator.resolution", std::to_string(a.discriminator.resolution)},
    };
  }();
  return entries;
}

}  // namespace

// ------------------------------------------------------------------ config

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(number, 1, "expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(number, 1, "empty config key");
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::string& path) { return parse(read_text_file(path)); }

std::string Config::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return parse_double(it->second);
  } catch (const Error&) {
    bad_value(key, it->second);
  }
}

int Config::get(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(it->second, &used);
  } catch (const std::exception&) {
    bad_value(key, it->second);
  }
  if (used != it->second.size()) bad_value(key, it->second);
  return v;
}

bool Config::get(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
  if (it->second == "false" || it->second == "0" || it->second == "no") return false;
  bad_value(key, it->second);
}

std::uint64_t Config::get_seed(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(it->second, &used);
  } catch (const std::exception&) {
    bad_value(key, it->second);
  }
  if (used != it->second.size() || it->second.front() == '-') bad_value(key, it->second);
  return v;
}

const std::vector<std::string>& Config::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, value] : default_entries()) k.push_back(key);
    return k;
  }();
  return keys;
}

void Config::validate() const {
  const auto& keys = known_keys();
  for (const auto& [key, value] : values_) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
    }
  }
}

std::string Config::defaults_text() {
  std::string out;
  for (const auto& [key, value] : default_entries()) out += key + " = " + value + "\n";
  return out;
}

// --------------------------------------------------------------- scenarios

sim::RigidObject skill_object(rl::SkillKind kind) {
  sim::RigidObject o;
  o.shape = sim::Shape::Cylinder;
  if (kind == rl::SkillKind::Retrieve) {
    o.id = "cup";
    o.half_extent = 0.035;
  } else {
    o.id = "plate";
    o.half_extent = 0.07;
  }
  return o;
}

namespace {

struct Placement {
  std::string object;
  rl::SkillKind kind;  // which skill object it is
  Vec2 start;
  Vec2 goal;
};

struct ScenarioSpec {
  const char* file;
  double timeout;
  std::vector<Placement> objects;
};

const ScenarioSpec& scenario_spec(const std::string& id) {
  using K = rl::SkillKind;
  static const std::map<std::string, ScenarioSpec> specs = {
      {"retrieval", {"retrieval.pddl", 150.0, {{"cup", K::Retrieve, {1.0, 0.1}, {-0.1, 0.65}}}}},
      {"multi-retrieving",
       {"multi_retrieving.pddl",
        150.0,
        {{"cup_1", K::Retrieve, {0.95, -0.22}, {-0.2, 0.55}},
         {"cup_2", K::Retrieve, {0.98, 0.0}, {0.05, 0.6}},
         {"cup_3", K::Retrieve, {0.92, 0.2}, {-0.1, 0.7}}}}},
      {"edge-pushing",
       {"edge_pushing.pddl", 150.0, {{"plate", K::EdgePush, {0.5, -0.12}, {-0.05, 0.62}}}}},
      {"serving",
       {"serving.pddl",
        350.0,
        {{"cup", K::Retrieve, {1.0, 0.15}, {-0.2, 0.58}},
         {"plate", K::EdgePush, {0.45, -0.2}, {0.02, 0.68}}}}},
  };
  auto it = specs.find(id);
  if (it == specs.end()) throw Error(ErrorCode::UnknownScenario, "unknown scenario '" + id + "'");
  return it->second;
}

const pddl::DomainDef& cached_domain(const char* file) {
  static std::mutex mutex;
  static std::map<std::string, pddl::DomainDef> domains;
  std::lock_guard lock(mutex);
  auto it = domains.find(file);
  if (it == domains.end()) {
    it = domains.emplace(file, pddl::parse_domain(data::pddl_text(file))).first;
  }
  return it->second;
}

}  // namespace

Scenario build_scenario(const std::string& id, std::uint64_t seed) {
  const ScenarioSpec& spec = scenario_spec(id);
  Rng rng(derive_seed(seed, hash_string(id)));
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  std::uniform_real_distribution<double> friction(0.3, 0.7);

  Scenario s;
  s.id = id;
  s.timeout = spec.timeout;
  s.task.domain = cached_domain("tabletop.pddl");
  s.task.problem = pddl::parse_problem(data::pddl_text(spec.file), s.task.domain);
  s.task.world = sim::make_tabletop();
  for (const auto& p : spec.objects) {
    sim::RigidObject o = skill_object(p.kind);
    o.id = p.object;
    o.friction = friction(rng);
    o.pose.x = p.start.x + jitter(rng);
    o.pose.y = p.start.y + jitter(rng);
    const sim::Table* table = s.task.world.table_at(o.pose.position());
    o.table = table != nullptr ? table->id : std::string{};
    s.task.world.objects.push_back(std::move(o));
    s.task.poses["pg_" + p.object] = {p.goal.x, p.goal.y, 0.0};
  }
  return s;
}

pddl::DomainDef method_domain(const std::string& method) {
  if (method == "ours") return cached_domain("tabletop.pddl");
  if (method == "hb" || method == "sb" || method == "srl") {
    return cached_domain("tabletop_deterministic.pddl");
  }
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + method + "'");
}

// --------------------------------------------------------------- artifacts

ArtifactConfig artifact_config(const Config& config) {
  config.validate();
  ArtifactConfig a;
  a.seed = config.get_seed("artifacts.seed", a.seed);
  a.threads = config.get("threads", a.threads);
  a.retrieve_iterations = config.get(
      "artifacts.retrieve_iterations", rl::SearchConfig::defaults(rl::SkillKind::Retrieve).iterations);
  a.edgepush_iterations = config.get(
      "artifacts.edgepush_iterations", rl::SearchConfig::defaults(rl::SkillKind::EdgePush).iterations);
  a.eval_episodes = config.get("artifacts.eval_episodes", a.eval_episodes);
  a.data.num_pairs = config.get("data.num_pairs", a.data.num_pairs);
  a.data.n = config.get("data.n", a.data.n);
  a.data.threads = a.threads;
  a.discriminator.learning_rate = config.get("discriminator.learning_rate", a.discriminator.learning_rate);
  a.discriminator.epochs = config.get("discriminator.epochs", a.discriminator.epochs);
  a.discriminator.batch_size = config.get("discriminator.batch_size", a.discriminator.batch_size);
  a.discriminator.resolution = config.get("discriminator.resolution", a.discriminator.resolution);
  if (config.has("discriminator.hidden")) {
    a.discriminator.hidden.clear();
    for (const auto& h : split(config.get("discriminator.hidden", std::string{}), ',')) {
      try {
        a.discriminator.hidden.push_back(std::stoi(h));
      } catch (const std::exception&) {
        bad_value("discriminator.hidden", h);
      }
    }
  }
  return a;
}

std::string policy_path(const std::string& dir, rl::SkillKind kind) {
  return (fs::path(dir) / ("policy_" + std::string(rl::skill_name(kind)) + ".json")).string();
}

std::string dataset_path(const std::string& dir, rl::SkillKind kind) {
  return (fs::path(dir) / ("dataset_" + std::string(rl::skill_name(kind)) + ".jsonl")).string();
}

std::string discriminator_path(const std::string& dir, rl::SkillKind kind) {
  return (fs::path(dir) / ("discriminator_" + std::string(rl::skill_name(kind)) + ".json")).string();
}

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create directory '" + dir + "': " + ec.message());
}

std::string require(const std::string& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingCheckpoint, "missing checkpoint: " + path);
  return read_text_file(path);
}

json parse_json(const std::string& text, const std::string& path) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, "malformed JSON in '" + path + "': " + e.what());
  }
}

rl::GoalConditionedPolicy load_policy(const std::string& dir, rl::SkillKind kind,
                                      rl::SkillConfig& config) {
  const std::string path = policy_path(dir, kind);
  rl::GoalConditionedPolicy policy = rl::policy_from_json(parse_json(require(path), path), &config);
  if (policy.kind() != kind) {
    throw Error(ErrorCode::InvalidArgument, "checkpoint '" + path + "' holds another skill");
  }
  return policy;
}

void say(const Log& log, const std::string& message) {
  if (log) log(message);
}

std::uint64_t skill_seed(std::uint64_t seed, rl::SkillKind kind, std::uint64_t stage) {
  return derive_seed(seed, static_cast<std::uint64_t>(kind), stage);
}

}  // namespace

rl::TrainingResult train_skill(const std::string& dir, rl::SkillKind kind,
                               const ArtifactConfig& config, const Log& log) {
  ensure_dir(dir);
  const rl::SkillConfig sc = rl::SkillConfig::defaults(kind);
  rl::SearchConfig search = rl::SearchConfig::defaults(kind);
  search.iterations =
      kind == rl::SkillKind::Retrieve ? config.retrieve_iterations : config.edgepush_iterations;
  search.eval_episodes = config.eval_episodes;
  search.threads = config.threads;
  say(log, std::string("training ") + rl::skill_name(kind));
  rl::TrainingResult r = rl::train_policy(sc, search, config.seed);
  write_text_file(policy_path(dir, kind), rl::policy_to_json(r.policy, sc).dump());
  write_text_file((fs::path(dir) / ("training_" + std::string(rl::skill_name(kind)) + ".csv")).string(),
                  rl::training_log_csv(r.log));
  std::ostringstream msg;
  msg << rl::skill_name(kind) << ": success " << r.initial.success_rate << " -> "
      << r.final.success_rate << ", return " << r.initial.mean_return << " -> "
      << r.final.mean_return;
  say(log, msg.str());
  return r;
}

connectors::SkillDataset generate_skill_data(const std::string& dir, rl::SkillKind kind,
                                             const ArtifactConfig& config, const Log& log) {
  rl::SkillConfig sc;
  const rl::GoalConditionedPolicy policy = load_policy(dir, kind, sc);
  connectors::DatasetConfig data = config.data;
  data.threads = config.threads;
  say(log, std::string("generating ") + rl::skill_name(kind) + " data");
  connectors::SkillDataset ds =
      connectors::generate_dataset(policy, sc, skill_object(kind), data, skill_seed(config.seed, kind, 1));
  write_text_file(dataset_path(dir, kind), connectors::dataset_to_jsonl(ds));
  const auto positives = std::count_if(ds.records.begin(), ds.records.end(),
                                       [](const connectors::EpisodeRecord& r) { return r.success; });
  say(log, std::string(rl::skill_name(kind)) + ": " + std::to_string(positives) + "/" +
               std::to_string(ds.records.size()) + " successful pairs");
  return ds;
}

connectors::DiscriminatorFit fit_skill_discriminator(const std::string& dir, rl::SkillKind kind,
                                                     const ArtifactConfig& config, const Log& log) {
  const std::string path = dataset_path(dir, kind);
  const connectors::SkillDataset ds = connectors::dataset_from_jsonl(require(path));
  if (ds.skill != kind) throw Error(ErrorCode::InvalidArgument, "dataset '" + path + "' holds another skill");
  say(log, std::string("fitting ") + rl::skill_name(kind) + " discriminator");
  connectors::DiscriminatorFit fit =
      connectors::train_discriminator(ds, config.discriminator, skill_seed(config.seed, kind, 2));
  write_text_file(discriminator_path(dir, kind), connectors::discriminator_to_json(fit.model).dump());
  std::ostringstream msg;
  msg << rl::skill_name(kind) << ": loss " << fit.initial_loss << " -> "
      << (fit.epoch_loss.empty() ? fit.initial_loss : fit.epoch_loss.back());
  say(log, msg.str());
  return fit;
}

void ensure_artifacts(const std::string& dir, const ArtifactConfig& config, const Log& log) {
  for (auto kind : {rl::SkillKind::Retrieve, rl::SkillKind::EdgePush}) {
    bool stale = false;
    if (!fs::exists(policy_path(dir, kind))) {
      train_skill(dir, kind, config, log);
      stale = true;
    }
    if (stale || !fs::exists(dataset_path(dir, kind))) {
      generate_skill_data(dir, kind, config, log);
      stale = true;
    }
    if (stale || !fs::exists(discriminator_path(dir, kind))) {
      fit_skill_discriminator(dir, kind, config, log);
    }
  }
}

planner::SkillSet load_skills(const std::string& dir, const pddl::DomainDef& domain) {
  planner::SkillSet skills;
  for (auto kind : {rl::SkillKind::Retrieve, rl::SkillKind::EdgePush}) {
    rl::SkillConfig sc;
    auto policy = std::make_shared<const rl::GoalConditionedPolicy>(load_policy(dir, kind, sc));
    const std::string dpath = discriminator_path(dir, kind);
    auto disc = std::make_shared<const connectors::DiscriminatorModel>(
        connectors::discriminator_from_json(parse_json(require(dpath), dpath)));
    auto ds = std::make_shared<const connectors::SkillDataset>(
        connectors::dataset_from_jsonl(require(dataset_path(dir, kind))));
    auto index = std::make_shared<const connectors::SubgoalIndex>(ds);
    skills.push_back(planner::make_skill_spec(domain, sc, policy, disc, index));
  }
  return skills;
}

// --------------------------------------------------------------- benchmark

BenchConfig bench_config(const Config& config) {
  config.validate();
  BenchConfig b;
  b.seed = config.get_seed("seed", b.seed);
  b.threads = config.get("threads", b.threads);
  if (config.has("bench.methods")) b.methods = split(config.get("bench.methods", std::string{}), ',');
  if (config.has("bench.scenarios")) {
    b.scenarios = split(config.get("bench.scenarios", std::string{}), ',');
  }
  b.trials = config.get("bench.trials", b.trials);
  b.timeout_scale = config.get("bench.timeout_scale", b.timeout_scale);
  auto& p = b.planner;
  p.k = config.get("planner.k", p.k);
  p.k_max = config.get("planner.k_max", p.k_max);
  p.substitution_budget = config.get("planner.substitution_budget", p.substitution_budget);
  p.grasp_samples = config.get("planner.grasp_samples", p.grasp_samples);
  p.max_expansions = config.get("planner.max_expansions", p.max_expansions);
  p.goal_tolerance = config.get("planner.goal_tolerance", p.goal_tolerance);
  p.hb_push = config.get("planner.hb_push", p.hb_push);
  p.hb_edge_margin = config.get("planner.hb_edge_margin", p.hb_edge_margin);
  p.hb_max_pushes = config.get("planner.hb_max_pushes", p.hb_max_pushes);
  p.sb_sequences = config.get("planner.sb_sequences", p.sb_sequences);
  p.sb_rounds = config.get("planner.sb_rounds", p.sb_rounds);
  p.srl_rounds = config.get("planner.srl_rounds", p.srl_rounds);
  auto& e = b.execution;
  e.refine = config.get("execution.refine", e.refine);
  e.goal_tolerance = config.get("execution.goal_tolerance", e.goal_tolerance);
  e.grasp_samples = config.get("execution.grasp_samples", e.grasp_samples);
  b.sim.slip_coeff = config.get("sim.slip_coeff", b.sim.slip_coeff);
  b.sim.contact_noise = config.get("sim.contact_noise", b.sim.contact_noise);
  b.sim.noise_scale = config.get("sim.noise_scale", b.sim.noise_scale);
  return b;
}

namespace {

void check_method(const std::string& m) {
  if (std::find(std::begin(kMethods), std::end(kMethods), m) == std::end(kMethods)) {
    throw Error(ErrorCode::InvalidArgument, "unknown method '" + m + "'");
  }
}

bool needs_skills(const std::string& method) { return method == "ours" || method == "srl"; }

}  // namespace

std::uint64_t trial_seed(std::uint64_t master, const std::string& scenario, int trial) {
  return derive_seed(master, hash_string(scenario), static_cast<std::uint64_t>(trial));
}

std::uint64_t execution_seed(std::uint64_t scenario_seed) { return derive_seed(scenario_seed, 0xe8ec); }

Scenario method_scenario(const std::string& method, const std::string& scenario,
                         std::uint64_t seed, const BenchConfig& config) {
  check_method(method);
  Scenario s = build_scenario(scenario, seed);
  s.task.world.params.slip_coeff = config.sim.slip_coeff;
  s.task.world.params.contact_noise = config.sim.contact_noise;
  s.task.world.params.noise_scale = config.sim.noise_scale;
  s.task.domain = method_domain(method);
  return s;
}

PlannedScenario plan_scenario(const std::string& method, const std::string& scenario,
                              std::uint64_t seed, const BenchConfig& config,
                              const planner::SkillSet& skills) {
  check_method(method);
  if (needs_skills(method) && skills.empty()) {
    throw Error(ErrorCode::MissingCheckpoint,
                "missing checkpoint: method '" + method + "' needs trained skills");
  }
  PlannedScenario out;
  out.scenario = method_scenario(method, scenario, seed, config);
  out.timeout = out.scenario.timeout * config.timeout_scale;
  planner::PlannerConfig pc = config.planner;
  pc.timeout = out.timeout;
  pc.seed = derive_seed(seed, hash_string(method));
  const planner::PlanningTask& task = out.scenario.task;
  if (method == "ours") {
    out.result = planner::plan(task, skills, pc);
  } else if (method == "hb") {
    out.result = planner::plan_hb(task, pc);
  } else if (method == "sb") {
    out.result = planner::plan_sb(task, skills, pc);
  } else {
    out.result = planner::plan_srl(task, skills, pc);
  }
  return out;
}

TrialResult run_trial(const std::string& method, const std::string& scenario, int trial,
                      const BenchConfig& config, const planner::SkillSet& skills,
                      executor::ExecutionTrace* trace, planner::PlanResult* plan_out) {
  const std::uint64_t seed = trial_seed(config.seed, scenario, trial);
  PlannedScenario p = plan_scenario(method, scenario, seed, config, skills);
  const planner::PlanResult& result = p.result;

  TrialResult t;
  t.method = method;
  t.scenario = scenario;
  t.trial = trial;
  t.planning_seconds = result.stats.total_seconds;
  t.solver_invocations = result.stats.solver_invocations;
  t.status = planner::plan_status_name(result.status);
  // Over-budget plans are failures even when the search returned one.
  t.planned = p.within_budget();
  if (result.solved() && !t.planned) t.status = planner::plan_status_name(planner::PlanStatus::Timeout);
  if (t.planned) {
    t.valid = planner::validate_plan(*result.plan, p.scenario.task.domain).valid;
    executor::ExecutionTrace tr = executor::execute(*result.plan, p.scenario.task.world, skills,
                                                    execution_seed(seed), config.execution);
    t.executed = tr.success;
    if (!tr.success) t.status = tr.failure.empty() ? "goal not reached" : tr.failure;
    if (trace != nullptr) *trace = std::move(tr);
  }
  if (plan_out != nullptr) *plan_out = std::move(p.result);
  return t;
}

namespace {

struct Moments {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stddev = std::numeric_limits<double>::quiet_NaN();
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  double sum = 0.0;
  for (double x : v) sum += x;
  m.mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(sq / static_cast<double>(v.size()));
  return m;
}

}  // namespace

BenchReport run_benchmark(const BenchConfig& config, const planner::SkillSet& skills, const Log& log) {
  if (config.methods.empty()) throw Error(ErrorCode::InvalidArgument, "no methods selected");
  if (config.scenarios.empty()) throw Error(ErrorCode::InvalidArgument, "no scenarios selected");
  if (config.trials < 1) throw Error(ErrorCode::InvalidArgument, "trials must be at least 1");
  if (!(config.timeout_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "timeout scale must be positive");
  for (const auto& m : config.methods) {
    check_method(m);
    if (needs_skills(m) && skills.empty()) {
      throw Error(ErrorCode::MissingCheckpoint, "missing checkpoint: method '" + m + "' needs trained skills");
    }
  }
  for (const auto& s : config.scenarios) scenario_spec(s);

  struct Job {
    std::string method;
    std::string scenario;
    int trial;
  };
  std::vector<Job> jobs;
  for (const auto& m : config.methods) {
    for (const auto& s : config.scenarios) {
      for (int t = 0; t < config.trials; ++t) jobs.push_back({m, s, t});
    }
  }

  BenchReport report;
  report.timeout_scale = config.timeout_scale;
  report.seed = config.seed;
  report.trials.resize(jobs.size());
  std::mutex log_mutex;
  parallel_for(jobs.size(), config.threads, [&](std::size_t i) {
    report.trials[i] = run_trial(jobs[i].method, jobs[i].scenario, jobs[i].trial, config, skills);
    if (log) {
      const TrialResult& t = report.trials[i];
      std::ostringstream msg;
      msg << t.method << " " << t.scenario << " #" << t.trial << ": " << t.status << " ("
          << std::fixed << std::setprecision(2) << t.planning_seconds << " s)";
      std::lock_guard lock(log_mutex);
      log(msg.str());
    }
  });

  std::size_t i = 0;
  for (const auto& m : config.methods) {
    for (const auto& s : config.scenarios) {
      std::vector<double> times, planned, executed;
      for (int t = 0; t < config.trials; ++t, ++i) {
        const TrialResult& r = report.trials[i];
        if (r.planned) times.push_back(r.planning_seconds);
        planned.push_back(r.planned ? 1.0 : 0.0);
        executed.push_back(r.executed ? 1.0 : 0.0);
      }
      const Moments tm = moments(times), pm = moments(planned), em = moments(executed);
      report.rows.push_back({m, s, "planning_time", tm.mean, tm.stddev, config.trials});
      report.rows.push_back({m, s, "planning_success", pm.mean, pm.stddev, config.trials});
      report.rows.push_back({m, s, "execution_success", em.mean, em.stddev, config.trials});
    }
  }
  return report;
}

const BenchRow* find_row(const BenchReport& report, const std::string& method,
                         const std::string& scenario, const std::string& metric) {
  for (const auto& r : report.rows) {
    if (r.method == method && r.scenario == scenario && r.metric == metric) return &r;
  }
  return nullptr;
}

bool same_outcomes(const BenchReport& a, const BenchReport& b) {
  if (a.seed != b.seed || a.timeout_scale != b.timeout_scale || a.rows.size() != b.rows.size() ||
      a.trials.size() != b.trials.size()) {
    return false;
  }
  const auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const BenchRow& x = a.rows[i];
    const BenchRow& y = b.rows[i];
    if (x.method != y.method || x.scenario != y.scenario || x.metric != y.metric || x.trials != y.trials) {
      return false;
    }
    if (x.metric == "planning_time") {
      // Wall time differs run to run; only whether a value exists must match.
      if (std::isnan(x.value) != std::isnan(y.value)) return false;
    } else if (!same(x.value, y.value) || !same(x.stddev, y.stddev)) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    const TrialResult& x = a.trials[i];
    const TrialResult& y = b.trials[i];
    if (x.method != y.method || x.scenario != y.scenario || x.trial != y.trial ||
        x.planned != y.planned || x.executed != y.executed || x.valid != y.valid ||
        x.status != y.status || x.solver_invocations != y.solver_invocations) {
      return false;
    }
  }
  return true;
}

// ----------------------------------------------------------------- reports

std::string report_csv(const BenchReport& report) {
  std::ostringstream out;
  out << "# timeout_scale=" << format_double(report.timeout_scale) << " seed=" << report.seed << "\n";
  out << "method,scenario,metric,value,stddev,trials\n";
  for (const auto& r : report.rows) {
    out << r.method << ',' << r.scenario << ',' << r.metric << ',' << format_double(r.value) << ','
        << format_double(r.stddev) << ',' << r.trials << "\n";
  }
  return out.str();
}

std::vector<BenchRow> rows_from_csv(const std::string& text) {
  std::vector<BenchRow> rows;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "method,scenario,metric,value,stddev,trials") {
        throw ParseError(number, 1, "unexpected CSV header");
      }
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw ParseError(number, 1, "expected 6 fields");
    BenchRow r;
    r.method = f[0];
    r.scenario = f[1];
    r.metric = f[2];
    try {
      r.value = parse_double(f[3]);
      r.stddev = parse_double(f[4]);
      r.trials = std::stoi(f[5]);
    } catch (const std::exception& e) {
      throw ParseError(number, 1, e.what());
    }
    rows.push_back(std::move(r));
  }
  if (!header) throw ParseError(number, 1, "missing CSV header");
  return rows;
}

BenchReport report_from_csv(const std::string& text) {
  BenchReport report;
  report.rows = rows_from_csv(text);
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) != 0) continue;
    for (const auto& field : split(line.substr(2), ' ')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      try {
        if (key == "timeout_scale") report.timeout_scale = parse_double(value);
        if (key == "seed") report.seed = std::stoull(value);
      } catch (const std::exception&) {
        throw ParseError(1, 1, "malformed report header");
      }
    }
    break;
  }
  return report;
}

namespace {

std::string trials_csv(const BenchReport& report) {
  std::ostringstream out;
  out << "method,scenario,trial,planned,valid,executed,planning_seconds,solver_invocations,status\n";
  for (const auto& t : report.trials) {
    std::string status = t.status;
    std::replace(status.begin(), status.end(), ',', ';');
    out << t.method << ',' << t.scenario << ',' << t.trial << ',' << t.planned << ',' << t.valid
        << ',' << t.executed << ',' << format_double(t.planning_seconds) << ','
        << t.solver_invocations << ',' << status << "\n";
  }
  return out.str();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string report_svg(const BenchReport& report) {
  if (report.rows.empty()) throw Error(ErrorCode::InvalidArgument, "empty report");
  std::vector<std::string> methods, scenarios;
  for (const auto& r : report.rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario) == scenarios.end()) {
      scenarios.push_back(r.scenario);
    }
  }
  const std::vector<std::pair<std::string, std::string>> metrics = {
      {"planning_time", "planning time [s]"},
      {"planning_success", "planning success ratio"},
      {"execution_success", "execution success ratio"}};
  const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};

  const double panel_w = 120.0 * static_cast<double>(scenarios.size()) + 80.0;
  const double panel_h = 260.0, top = 40.0, plot_h = 170.0;
  const double width = panel_w * static_cast<double>(metrics.size()) + 20.0;
  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << panel_h + 40 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<text x=\"10\" y=\"16\">timeout scale " << format_double(report.timeout_scale)
      << ", seed " << report.seed << "</text>\n";

  for (std::size_t m = 0; m < metrics.size(); ++m) {
    const double x0 = 10.0 + panel_w * static_cast<double>(m) + 50.0;
    double ymax = 1.0;
    if (metrics[m].first == "planning_time") {
      ymax = 0.0;
      for (const auto& r : report.rows) {
        if (r.metric == "planning_time" && !std::isnan(r.value)) {
          ymax = std::max(ymax, r.value + (std::isnan(r.stddev) ? 0.0 : r.stddev));
        }
      }
      if (ymax <= 0.0) ymax = 1.0;
      ymax *= 1.1;
    }
    const double base = top + plot_h;
    const auto y_of = [&](double v) { return base - plot_h * std::clamp(v / ymax, 0.0, 1.0); };
    svg << "<g>\n<text x=\"" << x0 << "\" y=\"" << top - 8 << "\">" << metrics[m].second << "</text>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << top << "\" x2=\"" << x0 << "\" y2=\"" << base
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << base << "\" x2=\"" << x0 + panel_w - 70 << "\" y2=\""
        << base << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
      const double v = ymax * tick / 4.0;
      svg << "<text x=\"" << x0 - 4 << "\" y=\"" << y_of(v) + 4 << "\" text-anchor=\"end\">"
          << std::setprecision(metrics[m].first == "planning_time" ? 1 : 2) << v
          << std::setprecision(2) << "</text>\n";
    }
    const double group_w = 120.0, bar_w = 96.0 / static_cast<double>(methods.size());
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
      const double gx = x0 + 12.0 + group_w * static_cast<double>(s);
      for (std::size_t k = 0; k < methods.size(); ++k) {
        const BenchRow* r = find_row(report, methods[k], scenarios[s], metrics[m].first);
        if (r == nullptr || std::isnan(r->value)) continue;  // absent bar: unsolved
        const double bx = gx + bar_w * static_cast<double>(k);
        svg << "<rect x=\"" << bx << "\" y=\"" << y_of(r->value) << "\" width=\"" << bar_w - 2
            << "\" height=\"" << base - y_of(r->value) << "\" fill=\"" << colors[k % 6] << "\"/>\n";
        if (!std::isnan(r->stddev) && r->stddev > 0.0) {
          const double cx = bx + (bar_w - 2) / 2;
          svg << "<line x1=\"" << cx << "\" y1=\"" << y_of(r->value + r->stddev) << "\" x2=\"" << cx
              << "\" y2=\"" << y_of(std::max(0.0, r->value - r->stddev))
              << "\" stroke=\"#555\" stroke-width=\"1.5\"/>\n";
        }
      }
      svg << "<text x=\"" << gx + 48 << "\" y=\"" << base + 14 << "\" text-anchor=\"middle\">"
          << xml_escape(scenarios[s]) << "</text>\n";
    }
    svg << "</g>\n";
  }
  for (std::size_t k = 0; k < methods.size(); ++k) {
    const double lx = 60.0 + 90.0 * static_cast<double>(k);
    svg << "<rect x=\"" << lx << "\" y=\"" << panel_h + 10 << "\" width=\"12\" height=\"12\" fill=\""
        << colors[k % 6] << "\"/><text x=\"" << lx + 16 << "\" y=\"" << panel_h + 20 << "\">"
        << xml_escape(methods[k]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_report(const BenchReport& report, const std::string& dir,
                 const std::vector<std::string>& formats) {
  if (report.rows.empty()) throw Error(ErrorCode::InvalidArgument, "empty report");
  for (const auto& f : formats) {
    if (f != "csv" && f != "svg") throw Error(ErrorCode::InvalidArgument, "unknown report format '" + f + "'");
  }
  ensure_dir(dir);
  for (const auto& f : formats) {
    if (f == "csv") {
      write_text_file((fs::path(dir) / "report.csv").string(), report_csv(report));
      if (!report.trials.empty()) {
        write_text_file((fs::path(dir) / "trials.csv").string(), trials_csv(report));
      }
    } else {
      write_text_file((fs::path(dir) / "report.svg").string(), report_svg(report));
    }
  }
}

}  // namespace skillplan::bench
