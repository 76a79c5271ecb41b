#include "skillplan/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <queue>
#include <sstream>
#include <tuple>

namespace skillplan::planner {

using pddl::Atom;
using pddl::SymbolicState;
using nlohmann::json;

namespace {

// Vocabulary of the tabletop domains.
constexpr const char* kArm = "arm";
constexpr const char* kPose = "pose";
constexpr const char* kAtPose = "atpose";
constexpr const char* kHandEmpty = "handempty";
constexpr const char* kHolding = "holding";
constexpr const char* kCanGrasp = "cangrasp";
constexpr const char* kCanPlace = "canplace";
constexpr const char* kSkillState = "skillstate";
constexpr const char* kSubstitute = "substitute";
constexpr const char* kPick = "pick";
constexpr const char* kPlace = "place";
constexpr const char* kObserve = "observe";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct TimeoutReached {};

const char* motion_predicate(rl::SkillKind kind) {
  return kind == rl::SkillKind::Retrieve ? "retrievemotion" : "pushmotion";
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

std::string action_text(const std::string& name, const std::vector<std::string>& args) {
  return "(" + name + (args.empty() ? "" : " " + join(args, ' ')) + ")";
}

SymbolicState merged(const SymbolicState& a, const SymbolicState& b) {
  SymbolicState out = a;
  out.insert(b.begin(), b.end());
  return out;
}

// Precondition matcher over a schema with variables resolved to parameter slots.
struct CompiledSchema {
  const pddl::ActionSchema* schema = nullptr;
  std::vector<std::vector<int>> slots;  // per precondition atom, per argument; -1 for constants
};

CompiledSchema compile(const pddl::ActionSchema& s) {
  CompiledSchema c;
  c.schema = &s;
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < s.params.size(); ++i) index[s.params[i]] = static_cast<int>(i);
  for (const auto& a : s.precondition) {
    std::vector<int> row;
    for (const auto& arg : a.args) {
      auto it = index.find(arg);
      row.push_back(it == index.end() ? -1 : it->second);
    }
    c.slots.push_back(std::move(row));
  }
  return c;
}

void match(const CompiledSchema& c, std::size_t i, std::vector<std::string>& values,
           const SymbolicState& statics, const SymbolicState& fluents,
           std::vector<std::vector<std::string>>& out) {
  const auto& pre = c.schema->precondition;
  if (i == pre.size()) {
    if (std::none_of(values.begin(), values.end(), [](const std::string& v) { return v.empty(); })) {
      out.push_back(values);
    }
    return;
  }
  const Atom& pattern = pre[i];
  const auto& slots = c.slots[i];
  for (const SymbolicState* facts : {&statics, &fluents}) {
    for (auto it = facts->lower_bound(Atom{pattern.predicate, {}});
         it != facts->end() && it->predicate == pattern.predicate; ++it) {
      if (it->args.size() != pattern.args.size()) continue;
      std::vector<int> bound;
      bool ok = true;
      for (std::size_t k = 0; k < slots.size() && ok; ++k) {
        const int s = slots[k];
        if (s < 0) {
          ok = pattern.args[k] == it->args[k];
        } else if (values[s].empty()) {
          values[s] = it->args[k];
          bound.push_back(s);
        } else {
          ok = values[s] == it->args[k];
        }
      }
      if (ok) match(c, i + 1, values, statics, fluents, out);
      for (int s : bound) values[s].clear();
    }
  }
}

// Shared state of one planning call: static facts, pose values, memoized
// geometric tests and skill payloads keyed by the symbol the skill produces.
class Context {
 public:
  Context(const PlanningTask& task, const PlannerConfig& config, SolverStats& stats)
      : task_(task), config_(config), stats_(stats), start_(Clock::now()) {
    deadline_ = start_ + std::chrono::duration_cast<Clock::duration>(
                             std::chrono::duration<double>(std::max(0.0, config.timeout)));
    const auto fluent = task.domain.fluent_predicates();
    for (const auto& a : task.problem.init) {
      if (fluent.count(a.predicate) != 0) {
        init_fluents_.insert(a);
      } else {
        statics_.insert(a);
      }
      if (a.predicate == kArm && !a.args.empty()) arms_.push_back(a.args[0]);
      if (a.predicate == kAtPose && a.args.size() == 2 && task.world.has_object(a.args[0])) {
        poses_[a.args[1]] = task.world.object(a.args[0]).pose;
      }
    }
    for (const auto& [symbol, pose] : task.poses) poses_.emplace(symbol, pose);
    for (const auto& s : task.domain.actions) schemas_.push_back(compile(s));
  }

  const PlanningTask& task() const { return task_; }
  const PlannerConfig& config() const { return config_; }
  SolverStats& stats() { return stats_; }
  const sim::WorldState& world() const { return task_.world; }
  const SymbolicState& statics() const { return statics_; }
  const SymbolicState& init_fluents() const { return init_fluents_; }
  std::map<std::string, PlanStep>& payloads() { return payloads_; }
  std::map<std::string, sim::Pose2>& poses() { return poses_; }

  void check_time() const {
    if (Clock::now() > deadline_) throw TimeoutReached{};
  }
  double elapsed() const { return seconds_since(start_); }

  void add_fact(Atom a) { statics_.insert(std::move(a)); }

  bool has_pose(const std::string& symbol) const { return poses_.count(symbol) != 0; }
  const sim::Pose2& pose(const std::string& symbol) const {
    auto it = poses_.find(symbol);
    if (it == poses_.end()) {
      throw Error(ErrorCode::InvalidArgument, "pose symbol '" + symbol + "' has no value");
    }
    return it->second;
  }

  const std::optional<PickGrounding>& pick(const std::string& object, const std::string& pose) {
    const std::string key = object + '|' + pose;
    auto it = picks_.find(key);
    if (it != picks_.end()) return it->second;
    ++stats_.stream_evaluations;
    return picks_[key] = ground_pick(world(), object, this->pose(pose), config_.grasp_samples);
  }

  bool pick_feasible_at(const std::string& object, const sim::Pose2& pose) const {
    return ground_pick(world(), object, pose, config_.grasp_samples).has_value();
  }

  // Grasp and placement certificates for the facts of one state.
  void geometric_streams(const SymbolicState& fluents) {
    for (auto it = fluents.lower_bound(Atom{kAtPose, {}});
         it != fluents.end() && it->predicate == kAtPose; ++it) {
      const std::string& o = it->args[0];
      const std::string& p = it->args[1];
      if (!world().has_object(o) || !has_pose(p)) continue;
      if (pick(o, p)) {
        for (const auto& a : arms_) add_fact({kCanGrasp, {a, o, p}});
      }
    }
    for (auto it = fluents.lower_bound(Atom{kHolding, {}});
         it != fluents.end() && it->predicate == kHolding; ++it) {
      const std::string& a = it->args[0];
      const std::string& o = it->args[1];
      for (auto pit = statics_.lower_bound(Atom{kPose, {}});
           pit != statics_.end() && pit->predicate == kPose; ++pit) {
        if (pit->args[0] != o || !has_pose(pit->args[1])) continue;
        const std::string key = o + '|' + pit->args[1];
        auto found = places_.find(key);
        if (found == places_.end()) {
          ++stats_.stream_evaluations;
          found = places_.emplace(key, place_feasible(world(), pose(pit->args[1]))).first;
        }
        if (found->second) pending_.push_back({kCanPlace, {a, o, pit->args[1]}});
      }
    }
    for (auto& f : pending_) add_fact(std::move(f));
    pending_.clear();
  }

  using Hook = std::function<void(const SymbolicState&)>;

  // Greedy best-first search ordered by (unmet goals, -depth, insertion).
  std::optional<std::vector<pddl::GroundAction>> search(const Hook& hook) {
    struct Node {
      SymbolicState fluents;
      int parent = -1;
      pddl::GroundAction action;
      int depth = 0;
    };
    using Key = std::tuple<double, int, long>;
    std::vector<Node> nodes;
    std::priority_queue<std::pair<Key, int>, std::vector<std::pair<Key, int>>, std::greater<>> open;
    std::set<SymbolicState> seen;
    long seq = 0;
    const auto& goal = task_.problem.goal;

    nodes.push_back({init_fluents_, -1, {}, 0});
    seen.insert(init_fluents_);
    open.push({{unmet(init_fluents_, goal), 0, seq++}, 0});
    const auto search_start = Clock::now();
    double stream_time = 0.0;
    int expansions = 0;

    std::optional<std::vector<pddl::GroundAction>> result;
    while (!open.empty()) {
      check_time();
      if (expansions >= config_.max_expansions) break;
      const int id = open.top().second;
      open.pop();
      if (unmet(nodes[id].fluents, goal) == 0.0) {
        std::vector<pddl::GroundAction> path;
        for (int n = id; nodes[n].parent >= 0; n = nodes[n].parent) path.push_back(nodes[n].action);
        std::reverse(path.begin(), path.end());
        result = std::move(path);
        break;
      }
      ++expansions;
      const auto t = Clock::now();
      hook(nodes[id].fluents);
      stream_time += seconds_since(t);

      const SymbolicState fluents = nodes[id].fluents;
      const int depth = nodes[id].depth;
      for (const auto& c : schemas_) {
        std::vector<std::string> values(c.schema->params.size());
        std::vector<std::vector<std::string>> bindings;
        match(c, 0, values, statics_, fluents, bindings);
        for (const auto& args : bindings) {
          pddl::GroundAction g = pddl::ground(*c.schema, args);
          SymbolicState next = fluents;
          for (const auto& d : g.del) next.erase(d);
          for (const auto& a : g.add) next.insert(a);
          if (!seen.insert(next).second) continue;
          const double h = unmet(next, goal);
          nodes.push_back({std::move(next), id, std::move(g), depth + 1});
          open.push({{h, -(depth + 1), seq++}, static_cast<int>(nodes.size() - 1)});
        }
      }
    }
    stats_.expansions += expansions;
    stats_.stream_seconds += stream_time;
    stats_.search_seconds += seconds_since(search_start) - stream_time;
    return result;
  }

  // Grounds the motions of a symbolic path and records the state trace.
  Plan build_plan(const std::vector<pddl::GroundAction>& path) {
    Plan plan;
    plan.initial = merged(statics_, init_fluents_);
    plan.goal = task_.problem.goal;
    plan.poses = poses_;
    SymbolicState fluents = init_fluents_;
    std::map<std::string, Vec2> hand;  // grasp point of each held object
    const sim::ArmModel& arm = world().arm;
    for (const auto& g : path) {
      PlanStep step;
      step.action = g.name;
      step.args = g.args;
      step.probabilistic = g.probabilistic;
      for (const auto& a : g.args) {
        if (world().has_object(a)) {
          step.object = a;
          break;
        }
      }
      auto payload = g.args.empty() ? payloads_.end() : payloads_.find(g.args.back());
      if (payload != payloads_.end() && g.name != kPick && g.name != kPlace && g.name != kObserve) {
        PlanStep p = payload->second;
        p.action = step.action;
        p.args = step.args;
        p.probabilistic = step.probabilistic;
        p.object = step.object;
        step = std::move(p);
      } else if (g.name == kPick) {
        const auto& pick = this->pick(g.args[1], g.args[2]);
        if (!pick) throw Error(ErrorCode::Internal, "pick without a grasp certificate");
        step.grasp = pick->grasp;
        step.motion = pick->motion;
        hand[g.args[1]] = pick->grasp.point;
      } else if (g.name == kPlace) {
        step.target = pose(g.args[2]);
        auto from = hand.find(g.args[1]);
        const Vec2 start = from != hand.end() ? from->second : arm.home_point();
        auto motion = plan_motion(arm, start, step.target->position());
        if (!motion) throw Error(ErrorCode::Internal, "place without a feasible motion");
        step.motion = *motion;
      } else if (g.name == kObserve) {
        step.target = pose(g.args[2]);
      }
      for (const auto& d : g.del) fluents.erase(d);
      for (const auto& a : g.add) fluents.insert(a);
      plan.states.push_back(merged(statics_, fluents));
      plan.steps.push_back(std::move(step));
    }
    return plan;
  }

 private:
  static double unmet(const SymbolicState& fluents, const std::vector<Atom>& goal) {
    return static_cast<double>(
        std::count_if(goal.begin(), goal.end(), [&](const Atom& a) { return fluents.count(a) == 0; }));
  }

  const PlanningTask& task_;
  const PlannerConfig& config_;
  SolverStats& stats_;
  Clock::time_point start_;
  Clock::time_point deadline_;
  SymbolicState statics_;
  SymbolicState init_fluents_;
  std::vector<std::string> arms_;
  std::map<std::string, sim::Pose2> poses_;
  std::vector<CompiledSchema> schemas_;
  std::map<std::string, std::optional<PickGrounding>> picks_;
  std::map<std::string, bool> places_;
  std::map<std::string, PlanStep> payloads_;
  std::vector<Atom> pending_;
};

// AtPose facts of a state whose object is on a table and has a pose value.
std::vector<std::pair<std::string, std::string>> placed_objects(Context& ctx,
                                                                const SymbolicState& fluents) {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto it = fluents.lower_bound(Atom{kAtPose, {}});
       it != fluents.end() && it->predicate == kAtPose; ++it) {
    if (ctx.world().has_object(it->args[0]) && ctx.has_pose(it->args[1])) {
      out.emplace_back(it->args[0], it->args[1]);
    }
  }
  return out;
}

bool hand_empty(const SymbolicState& fluents) {
  auto it = fluents.lower_bound(Atom{kHandEmpty, {}});
  return it != fluents.end() && it->predicate == kHandEmpty;
}

PlanResult finish(Context& ctx, PlanResult r) {
  r.stats = ctx.stats();
  r.stats.total_seconds = ctx.elapsed();
  return r;
}

PlanResult solved(Context& ctx, const std::vector<pddl::GroundAction>& path) {
  PlanResult r;
  r.status = PlanStatus::Solved;
  r.plan = ctx.build_plan(path);
  return finish(ctx, std::move(r));
}

PlanResult failed(Context& ctx, PlanStatus status, std::string message) {
  PlanResult r;
  r.status = status;
  r.message = std::move(message);
  return finish(ctx, std::move(r));
}

sim::WorldState resting(const sim::WorldState& world) {
  sim::WorldState w = world;
  w.bar.pose = w.bar.home;
  return w;
}

rl::SkillConfig config_for(const SkillSet& skills, rl::SkillKind kind) {
  for (const auto& s : skills) {
    if (s.kind() == kind) return s.config;
  }
  return rl::SkillConfig::defaults(kind);
}

bool domain_has(const pddl::DomainDef& d, rl::SkillKind kind) {
  return d.find_action(rl::skill_name(kind)) != nullptr;
}

// Whether some goal object starts beyond reach, which only Retrieve can fix.
bool needs_retrieval(const PlanningTask& task) {
  for (const auto& a : task.problem.goal) {
    if (a.args.empty() || !task.world.has_object(a.args[0])) continue;
    if (!sim::in_workspace(task.world.arm, task.world.object(a.args[0]).pose)) return true;
  }
  return false;
}

}  // namespace

// ------------------------------------------------------------------ geometry

std::optional<std::vector<Vec2>> plan_motion(const sim::ArmModel& arm, Vec2 from, Vec2 to) {
  if (sim::motion_feasible(arm, from, to)) return std::vector<Vec2>{from, to};
  const Vec2 home = arm.home_point();
  if (sim::motion_feasible(arm, from, home) && sim::motion_feasible(arm, home, to)) {
    return std::vector<Vec2>{from, home, to};
  }
  return std::nullopt;
}

sim::WorldState with_object_at(const sim::WorldState& world, const std::string& object_id,
                               const sim::Pose2& pose) {
  sim::WorldState w = world;
  sim::RigidObject& o = w.object(object_id);
  o.pose = {pose.x, pose.y, normalize_angle(pose.yaw)};
  const sim::Table* t = w.table_at(pose.position());
  o.table = t != nullptr ? t->id : std::string();
  if (w.held == object_id) w.held.clear();
  return w;
}

std::optional<PickGrounding> ground_pick(const sim::WorldState& world,
                                         const std::string& object_id, const sim::Pose2& pose,
                                         int grasp_samples) {
  const sim::WorldState w = with_object_at(world, object_id, pose);
  const auto grasp = sim::find_grasp(w, object_id, grasp_samples);
  if (!grasp) return std::nullopt;
  auto motion = plan_motion(w.arm, w.arm.home_point(), grasp->point);
  if (!motion) return std::nullopt;
  return PickGrounding{*grasp, std::move(*motion)};
}

bool place_feasible(const sim::WorldState& world, const sim::Pose2& pose) {
  return sim::in_workspace(world.arm, pose) && world.table_at(pose.position()) != nullptr &&
         plan_motion(world.arm, world.arm.home_point(), pose.position()).has_value();
}

std::vector<double> skill_state(const rl::SkillConfig& config, const sim::WorldState& world,
                                const std::string& object_id, const sim::Pose2& pose) {
  const rl::SkillEnv env(config, resting(with_object_at(world, object_id, pose)), object_id,
                         pose.position());
  return env.state();
}

// -------------------------------------------------------------------- skills

bool SkillSpec::applies_to(const sim::RigidObject& o) const {
  const sim::RigidObject& ref = object();
  return o.shape == ref.shape && std::fabs(o.half_extent - ref.half_extent) <= 0.005;
}

SkillSpec make_skill_spec(const pddl::DomainDef& domain, rl::SkillConfig config,
                          std::shared_ptr<const rl::GoalConditionedPolicy> policy,
                          std::shared_ptr<const connectors::DiscriminatorModel> discriminator,
                          std::shared_ptr<const connectors::SubgoalIndex> subgoals) {
  const std::string name = rl::skill_name(config.kind);
  const pddl::ActionSchema* schema = domain.find_action(name);
  if (schema == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "domain has no operator for skill '" + name + "'");
  }
  if (!schema->probabilistic) {
    throw Error(ErrorCode::InvalidArgument, "operator '" + name + "' is not probabilistic");
  }
  if (!policy || !discriminator || !subgoals) {
    throw Error(ErrorCode::MissingCheckpoint, "skill '" + name + "' lacks a trained component");
  }
  if (policy->kind() != config.kind || subgoals->dataset().skill != config.kind) {
    throw Error(ErrorCode::DimensionMismatch, "skill '" + name + "' components disagree");
  }
  const auto around = std::count_if(schema->add.begin(), schema->add.end(), [](const Atom& a) {
    return a.predicate == pddl::kAroundPredicate;
  });
  if (around != 1) {
    throw Error(ErrorCode::InvalidArgument, "operator '" + name + "' needs exactly one around effect");
  }
  const Atom& effect = *std::find_if(schema->add.begin(), schema->add.end(), [](const Atom& a) {
    return a.predicate == pddl::kAroundPredicate;
  });
  const std::string& goal_var = effect.args.back();

  SkillSpec s;
  s.action = name;
  for (const auto& a : schema->precondition) {
    if (a.args.size() == 2 && a.args[1] == goal_var) s.to_predicate = a.predicate;
  }
  const Atom* to = nullptr;
  for (const auto& a : schema->precondition) {
    if (a.predicate == s.to_predicate) to = &a;
  }
  if (to == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "operator '" + name + "' has no sub-goal certificate");
  }
  for (const auto& a : schema->precondition) {
    if (a.args.size() == 1 && a.args[0] == to->args[0]) s.from_predicate = a.predicate;
  }
  if (s.from_predicate.empty()) {
    throw Error(ErrorCode::InvalidArgument, "operator '" + name + "' has no state certificate");
  }
  s.config = std::move(config);
  s.policy = std::move(policy);
  s.discriminator = std::move(discriminator);
  s.subgoals = std::move(subgoals);
  return s;
}

const char* plan_status_name(PlanStatus status) {
  switch (status) {
    case PlanStatus::Solved: return "solved";
    case PlanStatus::Timeout: return "timeout";
    case PlanStatus::NoCertifiableGrounding: return "no certifiable grounding";
    case PlanStatus::NoHeuristic: return "no heuristic for required skill";
    case PlanStatus::Unreachable: return "goal unreachable";
  }
  return "unknown";
}

double heuristic(const SymbolicState& state, const std::vector<Atom>& goal) {
  return static_cast<double>(
      std::count_if(goal.begin(), goal.end(), [&](const Atom& a) { return state.count(a) == 0; }));
}

// ----------------------------------------------------------- proposed method

namespace {

struct SkillStream {
  const SkillSpec* skill = nullptr;
  std::string object;
  std::string pose;
  std::string state_symbol;
  std::vector<double> x0;
  double certainty = 0.0;
  bool certified = false;
  std::vector<std::pair<connectors::Substitution, double>> ranked;
  std::size_t active = 0;
};

// Candidates ordered by optimism with the documented tie-break, keeping at
// most `budget` with positive optimism. The query widens while nothing is
// certifiable.
std::vector<std::pair<connectors::Substitution, double>> rank_substitutions(
    const SkillSpec& skill, std::span<const double> x0, Vec2 position,
    const connectors::EffectPredicate& predicate, const PlannerConfig& config) {
  const std::size_t size = skill.subgoals->size();
  const std::size_t cap = std::min<std::size_t>(std::max(config.k_max, config.k), size);
  std::size_t k = std::min<std::size_t>(std::max(config.k, 1), size);
  std::vector<std::pair<connectors::Substitution, double>> ranked;
  for (;;) {
    const auto candidates = skill.subgoals->query(x0, k);
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const auto& c : candidates) scores.push_back(connectors::optimism(c, predicate));
    std::vector<double> remaining = scores;
    while (ranked.size() < static_cast<std::size_t>(config.substitution_budget)) {
      const auto best = connectors::best_index(candidates, remaining, position);
      if (!best) break;
      ranked.emplace_back(candidates[*best], scores[*best]);
      remaining[*best] = 0.0;
    }
    if (!ranked.empty() || k >= cap) break;
    k = std::min(cap, 2 * k);
  }
  return ranked;
}

}  // namespace

PlanResult plan(const PlanningTask& task, const SkillSet& skills, const PlannerConfig& config) {
  SolverStats stats;
  Context ctx(task, config, stats);
  std::map<std::string, SkillStream> streams;

  const auto activate = [&](SkillStream& s) {
    const std::size_t i = s.active++;
    const auto& [kappa, eta] = s.ranked[i];
    const std::string tag = s.skill->action + "_" + s.object + "_" + s.pose + "_" + std::to_string(i);
    const std::string goal_symbol = "xg_" + tag;
    const std::string pose_symbol = "ps_" + tag;
    const double yaw = kappa.effects.front().size() > 2 ? kappa.effects.front()[2] : 0.0;
    ctx.poses()[pose_symbol] = {kappa.goal.at(0), kappa.goal.at(1), yaw};
    ctx.add_fact({s.skill->to_predicate, {s.state_symbol, goal_symbol}});
    ctx.add_fact({kSubstitute, {goal_symbol, pose_symbol}});
    ctx.add_fact({kPose, {s.object, pose_symbol}});
    PlanStep step;
    step.skill = s.skill->action;
    step.mode = SkillMode::Policy;
    step.x0 = s.x0;
    step.goal = kappa.goal;
    step.effects = kappa.effects;
    step.optimism = eta;
    step.certainty = s.certainty;
    ctx.payloads()[goal_symbol] = std::move(step);
    ++ctx.stats().substitutions;
  };

  const auto hook = [&](const SymbolicState& fluents) {
    ctx.check_time();
    ctx.geometric_streams(fluents);
    if (!hand_empty(fluents)) return;
    for (const auto& [o, p] : placed_objects(ctx, fluents)) {
      // Skills are only considered where a direct grasp is impossible.
      if (ctx.pick(o, p)) continue;
      const sim::RigidObject& obj = ctx.world().object(o);
      for (const auto& skill : skills) {
        if (!skill.applies_to(obj)) continue;
        const std::string key = skill.action + "|" + o + "|" + p;
        if (streams.count(key) != 0) continue;
        ++ctx.stats().stream_evaluations;
        SkillStream s;
        s.skill = &skill;
        s.object = o;
        s.pose = p;
        s.state_symbol = "x0_" + skill.action + "_" + o + "_" + p;
        const sim::Pose2 pose = ctx.pose(p);
        s.x0 = skill_state(skill.config, ctx.world(), o, pose);
        s.certainty = skill.discriminator->classify(s.x0);
        s.certified = s.certainty >= skill.discriminator->threshold;
        ctx.add_fact({kSkillState, {o, p, s.state_symbol}});
        if (s.certified) {
          ctx.add_fact({skill.from_predicate, {s.state_symbol}});
          const auto feasible = [&](const connectors::Vector& e) {
            return ctx.pick_feasible_at(o, {e.at(0), e.at(1), e.size() > 2 ? e[2] : 0.0});
          };
          s.ranked = rank_substitutions(skill, s.x0, pose.position(), feasible, config);
        }
        auto& stored = streams[key] = std::move(s);
        if (!stored.ranked.empty()) activate(stored);
      }
    }
  };

  try {
    for (;;) {
      ++stats.solver_invocations;
      if (auto path = ctx.search(hook)) return solved(ctx, *path);
      // Downstream infeasible: add the next-best substitution of every stream.
      bool added = false;
      for (auto& [key, s] : streams) {
        if (s.certified && s.active < s.ranked.size()) {
          activate(s);
          added = true;
        }
      }
      if (!added) break;
    }
  } catch (const TimeoutReached&) {
    return failed(ctx, PlanStatus::Timeout, "planning exceeded " + std::to_string(config.timeout) + " s");
  }
  for (const auto& [key, s] : streams) {
    if (s.certified && s.ranked.empty()) {
      return failed(ctx, PlanStatus::NoCertifiableGrounding,
                    "no sub-goal with positive optimism for " + s.skill->action + " of " + s.object);
    }
  }
  return failed(ctx, PlanStatus::Unreachable, "goal unreachable");
}

// ----------------------------------------------------------------- baselines

PlanResult plan_hb(const PlanningTask& task, const PlannerConfig& config) {
  SolverStats stats;
  Context ctx(task, config, stats);
  std::set<std::string> done;
  const rl::SkillConfig push = rl::SkillConfig::defaults(rl::SkillKind::EdgePush);
  const bool can_push = domain_has(task.domain, rl::SkillKind::EdgePush);

  const auto push_stream = [&](const std::string& o, const std::string& p) {
    ++ctx.stats().stream_evaluations;
    sim::WorldState w = resting(with_object_at(ctx.world(), o, ctx.pose(p)));
    w.params.noise_scale = 0.0;
    const sim::RigidObject& obj = w.object(o);
    if (!obj.on_table()) return;
    const sim::EdgeInfo edge = sim::nearest_edge(w.table(obj.table), obj.pose.position());
    const Vec2 goal = obj.pose.position() + edge.outward_normal;
    rl::SkillEnv env(push, w, o, goal);
    const sim::Table& table = w.table(obj.table);
    Rng rng(0);
    PlanStep step;
    step.skill = rl::skill_name(rl::SkillKind::EdgePush);
    step.mode = SkillMode::OpenLoop;
    step.goal = {goal.x, goal.y};
    for (int i = 0; i < config.hb_max_pushes; ++i) {
      const Vec2 before = env.object_position();
      // Full-length pushes, the last one shortened to stop just inside the edge.
      const double room = sim::nearest_edge(table, before).distance - config.hb_edge_margin;
      const double length = std::min(config.hb_push, room);
      if (length <= 1e-3) return;
      const std::vector<double> raw{0.0, std::atanh(std::min(length / push.push_max, 0.999))};
      env.step(raw, rng);
      step.actions.push_back(raw);
      const sim::RigidObject& now = env.world().object(o);
      if (!now.on_table() || env.object_position() == before) return;
      if (ctx.pick_feasible_at(o, now.pose)) {
        const std::string q = "ph_" + o + "_" + p;
        ctx.poses()[q] = now.pose;
        ctx.add_fact({motion_predicate(rl::SkillKind::EdgePush), {o, p, q}});
        ctx.add_fact({kPose, {o, q}});
        step.effects = {{now.pose.x, now.pose.y, now.pose.yaw}};
        ctx.payloads()[q] = std::move(step);
        return;
      }
    }
  };

  const auto hook = [&](const SymbolicState& fluents) {
    ctx.check_time();
    ctx.geometric_streams(fluents);
    if (!can_push) return;
    for (const auto& [o, p] : placed_objects(ctx, fluents)) {
      if (ctx.pick(o, p) || !done.insert(o + "|" + p).second) continue;
      push_stream(o, p);
    }
  };

  try {
    ++stats.solver_invocations;
    if (auto path = ctx.search(hook)) return solved(ctx, *path);
  } catch (const TimeoutReached&) {
    return failed(ctx, PlanStatus::Timeout, "planning exceeded the time budget");
  }
  if (needs_retrieval(task)) {
    return failed(ctx, PlanStatus::NoHeuristic, "no heuristic grounding for retrieve");
  }
  return failed(ctx, PlanStatus::Unreachable, "goal unreachable");
}

PlanResult plan_sb(const PlanningTask& task, const SkillSet& skills, const PlannerConfig& config) {
  SolverStats stats;
  Context ctx(task, config, stats);
  struct SampleStream {
    int tried = 0;
    int round = -1;
    bool found = false;
  };
  std::map<std::string, SampleStream> streams;
  int round = 0;
  std::vector<rl::SkillConfig> kinds;
  for (auto kind : {rl::SkillKind::Retrieve, rl::SkillKind::EdgePush}) {
    if (domain_has(task.domain, kind)) kinds.push_back(config_for(skills, kind));
  }

  const auto sample = [&](const rl::SkillConfig& sc, const std::string& o, const std::string& p,
                          SampleStream& s) {
    ++ctx.stats().stream_evaluations;
    sim::WorldState w = resting(with_object_at(ctx.world(), o, ctx.pose(p)));
    w.params.noise_scale = 0.0;
    const Vec2 frame_goal = w.arm.home_point();
    const std::string name = rl::skill_name(sc.kind);
    const int dims = rl::SkillEnv::action_size(sc.kind);
    const int stop = s.tried + config.sb_sequences;
    for (; s.tried < stop; ++s.tried) {
      ctx.check_time();
      Rng rng(derive_seed(config.seed, hash_string(name + "|" + o + "|" + p),
                          static_cast<std::uint64_t>(s.tried)));
      std::uniform_real_distribution<double> u(-0.995, 0.995);
      rl::SkillEnv env(sc, w, o, frame_goal);
      PlanStep step;
      step.skill = name;
      step.mode = SkillMode::OpenLoop;
      step.goal = {frame_goal.x, frame_goal.y};
      for (int t = 0; t < sc.max_steps; ++t) {
        std::vector<double> raw(static_cast<std::size_t>(dims));
        for (double& v : raw) v = std::atanh(u(rng));
        env.step(raw, rng);
        step.actions.push_back(std::move(raw));
        if (env.fell()) break;
        const sim::Pose2 now = env.world().object(o).pose;
        if (ctx.pick_feasible_at(o, now)) {
          const std::string q = "qs_" + name + "_" + o + "_" + p;
          ctx.poses()[q] = now;
          ctx.add_fact({motion_predicate(sc.kind), {o, p, q}});
          ctx.add_fact({kPose, {o, q}});
          step.effects = {{now.x, now.y, now.yaw}};
          ctx.payloads()[q] = std::move(step);
          s.found = true;
          return;
        }
      }
    }
  };

  const auto hook = [&](const SymbolicState& fluents) {
    ctx.check_time();
    ctx.geometric_streams(fluents);
    if (!hand_empty(fluents)) return;
    for (const auto& [o, p] : placed_objects(ctx, fluents)) {
      if (ctx.pick(o, p)) continue;
      for (const auto& sc : kinds) {
        SampleStream& s = streams[std::string(rl::skill_name(sc.kind)) + "|" + o + "|" + p];
        if (s.found || s.round == round) continue;
        s.round = round;
        sample(sc, o, p, s);
      }
    }
  };

  try {
    for (round = 0; round < std::max(1, config.sb_rounds); ++round) {
      ++stats.solver_invocations;
      if (auto path = ctx.search(hook)) return solved(ctx, *path);
    }
  } catch (const TimeoutReached&) {
    return failed(ctx, PlanStatus::Timeout, "planning exceeded the time budget");
  }
  return failed(ctx, PlanStatus::Unreachable, "sampling budget exhausted");
}

PlanResult plan_srl(const PlanningTask& task, const SkillSet& skills,
                    const PlannerConfig& config) {
  SolverStats stats;
  Context ctx(task, config, stats);
  const auto hook = [&](const SymbolicState& fluents) {
    ctx.check_time();
    ctx.geometric_streams(fluents);
  };

  // The simulated world the skills act on, and each object's current symbol.
  sim::WorldState world = task.world;
  std::map<std::string, std::string> current;
  for (const auto& a : task.problem.init) {
    if (a.predicate == kAtPose && a.args.size() == 2) current[a.args[0]] = a.args[1];
  }
  Rng rng(derive_seed(config.seed, 0x5e1));

  try {
    for (int round = 0;; ++round) {
      ++stats.solver_invocations;
      if (auto path = ctx.search(hook)) return solved(ctx, *path);
      if (round >= config.srl_rounds) break;
      bool triggered = false;
      for (const auto& skill : skills) {
        if (!domain_has(task.domain, skill.kind())) continue;
        for (const auto& o : task.problem.objects) {
          if (!world.has_object(o) || current.count(o) == 0) continue;
          const sim::RigidObject& obj = world.object(o);
          if (!obj.on_table() || world.held == o) continue;
          if (ctx.pick_feasible_at(o, obj.pose)) continue;
          ctx.check_time();
          const Vec2 goal = rl::sample_goal(skill.config, rng);
          rl::SkillEnv env(skill.config, world, o, goal);
          const rl::Episode ep = rl::rollout(*skill.policy, env, skill.config.max_steps, rng);
          world = env.world();
          ++ctx.stats().skill_rollouts;
          triggered = true;
          const sim::RigidObject& moved = world.object(o);
          if (!moved.on_table()) continue;
          const std::string q =
              "qr" + std::to_string(round) + "_" + skill.action + "_" + o;
          ctx.poses()[q] = moved.pose;
          ctx.add_fact({motion_predicate(skill.kind()), {o, current[o], q}});
          ctx.add_fact({kPose, {o, q}});
          PlanStep step;
          step.skill = skill.action;
          step.mode = SkillMode::Policy;
          step.goal = {goal.x, goal.y};
          step.actions = ep.actions;
          step.effects = {{moved.pose.x, moved.pose.y, moved.pose.yaw}};
          ctx.payloads()[q] = std::move(step);
          current[o] = q;
        }
      }
      if (!triggered) break;
    }
  } catch (const TimeoutReached&) {
    return failed(ctx, PlanStatus::Timeout, "planning exceeded the time budget");
  }
  return failed(ctx, PlanStatus::Unreachable, "skills did not make the goal reachable");
}

// ---------------------------------------------------------------- validation

Validation validate_plan(const Plan& plan, const pddl::DomainDef& domain) {
  Validation v;
  const auto fail = [&](std::string message) {
    v.valid = false;
    v.diagnostics.push_back(std::move(message));
  };
  if (plan.states.size() != plan.steps.size()) fail("state trace length differs from the plan");

  // Observation rule: the step after a skill must consume its around fact.
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const pddl::ActionSchema* s = domain.find_action(plan.steps[i].action);
    if (s == nullptr || !s->probabilistic) continue;
    bool observed = false;
    if (i + 1 < plan.steps.size()) {
      const pddl::ActionSchema* next = domain.find_action(plan.steps[i + 1].action);
      if (next != nullptr && !next->probabilistic &&
          plan.steps[i + 1].args.size() == next->params.size() &&
          plan.steps[i].args.size() == s->params.size()) {
        const auto skill = pddl::ground(*s, plan.steps[i].args);
        const auto obs = pddl::ground(*next, plan.steps[i + 1].args);
        for (const auto& a : skill.add) {
          if (a.predicate != pddl::kAroundPredicate) continue;
          observed = observed || std::find(obs.precondition.begin(), obs.precondition.end(), a) !=
                                     obs.precondition.end();
        }
      }
    }
    if (!observed) {
      fail("missing observation after step " + std::to_string(i) + " " +
           action_text(plan.steps[i].action, plan.steps[i].args));
    }
  }

  SymbolicState state = plan.initial;
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const PlanStep& step = plan.steps[i];
    const std::string text = action_text(step.action, step.args);
    const pddl::ActionSchema* s = domain.find_action(step.action);
    if (s == nullptr) {
      fail("invalid chain: step " + std::to_string(i) + " " + text + " is not in the domain");
      return v;
    }
    if (step.args.size() != s->params.size()) {
      fail("invalid chain: step " + std::to_string(i) + " " + text + " has the wrong arity");
      return v;
    }
    const auto g = pddl::ground(*s, step.args);
    for (const auto& a : g.precondition) {
      if (state.count(a) == 0) {
        fail("invalid chain: step " + std::to_string(i) + " " + text + " needs " +
             pddl::to_string(a));
        return v;
      }
    }
    state = pddl::apply(state, g);
    if (i < plan.states.size() && plan.states[i] != state) {
      fail("state trace differs after step " + std::to_string(i) + " " + text);
    }
  }
  for (const auto& a : plan.goal) {
    if (state.count(a) == 0) fail("goal not satisfied: " + pddl::to_string(a));
  }
  return v;
}

// ------------------------------------------------------------------ plan I/O

namespace {

json atom_json(const Atom& a) {
  json j = json::array({a.predicate});
  for (const auto& x : a.args) j.push_back(x);
  return j;
}

Atom atom_from(const json& j) {
  Atom a;
  a.predicate = j.at(0).get<std::string>();
  for (std::size_t i = 1; i < j.size(); ++i) a.args.push_back(j.at(i).get<std::string>());
  return a;
}

json atoms_json(const SymbolicState& s) {
  json j = json::array();
  for (const auto& a : s) j.push_back(atom_json(a));
  return j;
}

SymbolicState atoms_from(const json& j) {
  SymbolicState s;
  for (const auto& x : j) s.insert(atom_from(x));
  return s;
}

json vec2s_json(const std::vector<Vec2>& v) {
  json j = json::array();
  for (const auto& p : v) j.push_back({p.x, p.y});
  return j;
}

std::vector<Vec2> vec2s_from(const json& j) {
  std::vector<Vec2> v;
  for (const auto& p : j) v.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return v;
}

}  // namespace

json step_to_json(const PlanStep& s) {
  json j = {{"action", s.action}, {"args", s.args}, {"probabilistic", s.probabilistic},
            {"object", s.object}, {"motion", vec2s_json(s.motion)}};
  if (s.grasp) j["grasp"] = *s.grasp;
  if (s.target) j["target"] = *s.target;
  if (!s.skill.empty()) {
    j["skill"] = s.skill;
    j["mode"] = s.mode == SkillMode::Policy ? "policy" : "open-loop";
    j["x0"] = s.x0;
    j["goal"] = s.goal;
    j["effects"] = s.effects;
    j["actions"] = s.actions;
    j["optimism"] = s.optimism;
    j["certainty"] = s.certainty;
  }
  return j;
}

PlanStep step_from_json(const json& j) {
  PlanStep s;
  s.action = j.at("action").get<std::string>();
  s.args = j.at("args").get<std::vector<std::string>>();
  s.probabilistic = j.at("probabilistic").get<bool>();
  s.object = j.at("object").get<std::string>();
  s.motion = vec2s_from(j.at("motion"));
  if (j.contains("grasp")) s.grasp = j.at("grasp").get<sim::Grasp>();
  if (j.contains("target")) s.target = j.at("target").get<sim::Pose2>();
  if (j.contains("skill")) {
    s.skill = j.at("skill").get<std::string>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode != "policy" && mode != "open-loop") {
      throw Error(ErrorCode::Parse, "unknown skill mode '" + mode + "'");
    }
    s.mode = mode == "policy" ? SkillMode::Policy : SkillMode::OpenLoop;
    s.x0 = j.at("x0").get<std::vector<double>>();
    s.goal = j.at("goal").get<std::vector<double>>();
    s.effects = j.at("effects").get<std::vector<std::vector<double>>>();
    s.actions = j.at("actions").get<std::vector<std::vector<double>>>();
    s.optimism = j.at("optimism").get<double>();
    s.certainty = j.at("certainty").get<double>();
  }
  return s;
}

std::string plan_to_jsonl(const Plan& plan) {
  std::ostringstream out;
  json poses = json::object();
  for (const auto& [symbol, pose] : plan.poses) poses[symbol] = pose;
  json goal = json::array();
  for (const auto& a : plan.goal) goal.push_back(atom_json(a));
  const json header = {{"format", "skillplan-plan"}, {"version", 1},
                       {"steps", plan.steps.size()}, {"initial", atoms_json(plan.initial)},
                       {"goal", goal},               {"poses", poses}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    json line = step_to_json(plan.steps[i]);
    line["state"] = atoms_json(i < plan.states.size() ? plan.states[i] : SymbolicState{});
    out << line.dump() << '\n';
  }
  return out.str();
}

Plan plan_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Parse, "empty plan file");
  Plan plan;
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "skillplan-plan" || header.value("version", 0) != 1) {
      throw Error(ErrorCode::Parse, "not a plan file");
    }
    plan.initial = atoms_from(header.at("initial"));
    for (const auto& a : header.at("goal")) plan.goal.push_back(atom_from(a));
    for (const auto& [symbol, pose] : header.at("poses").items()) {
      plan.poses[symbol] = pose.get<sim::Pose2>();
    }
    const auto count = header.at("steps").get<std::size_t>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      plan.steps.push_back(step_from_json(j));
      plan.states.push_back(atoms_from(j.at("state")));
    }
    if (plan.steps.size() != count) {
      throw Error(ErrorCode::Parse, "plan file has " + std::to_string(plan.steps.size()) +
                                        " steps, header says " + std::to_string(count));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("malformed plan file: ") + e.what());
  }
  return plan;
}

json stats_to_json(const SolverStats& s) {
  return {{"solver_invocations", s.solver_invocations},
          {"expansions", s.expansions},
          {"stream_evaluations", s.stream_evaluations},
          {"substitutions", s.substitutions},
          {"skill_rollouts", s.skill_rollouts},
          {"search_seconds", s.search_seconds},
          {"stream_seconds", s.stream_seconds},
          {"total_seconds", s.total_seconds}};
}

}  // namespace skillplan::planner
