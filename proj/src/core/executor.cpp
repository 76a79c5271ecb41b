#include "skillplan/executor.hpp"

#include <chrono>
#include <sstream>

namespace skillplan::executor {

using nlohmann::json;
using planner::PlanStep;

namespace {

using Clock = std::chrono::steady_clock;

struct StepFailure {
  std::string message;
};

const planner::SkillSpec* find_skill(const planner::SkillSet& skills, const std::string& name) {
  for (const auto& s : skills) {
    if (s.action == name) return &s;
  }
  return nullptr;
}

rl::SkillConfig config_for(const std::map<std::string, rl::SkillConfig>& configs,
                           const std::string& name) {
  auto it = configs.find(name);
  return it != configs.end() ? it->second : rl::SkillConfig::defaults(rl::parse_skill(name));
}

Vec2 goal_point(const PlanStep& step) {
  if (step.goal.size() < 2) throw StepFailure{"skill step has no goal"};
  return {step.goal[0], step.goal[1]};
}

// Executes the plan. In replay mode skill actions and grasps come from
// `recorded` instead of policies and refinement.
class Runner {
 public:
  Runner(const planner::Plan& plan, const sim::WorldState& world, std::uint64_t seed,
         const ExecutionConfig& config, const planner::SkillSet* skills,
         const std::map<std::string, rl::SkillConfig>& configs,
         const std::vector<StepRecord>* recorded)
      : plan_(plan), world_(world), rng_(seed), config_(config), skills_(skills),
        configs_(configs), recorded_(recorded) {}

  const sim::WorldState& world() const { return world_; }

  StepRecord run_step(std::size_t i) {
    const PlanStep& step = plan_.steps[i];
    StepRecord r;
    r.index = static_cast<int>(i);
    r.action = step.action;
    r.args = step.args;
    r.object = step.object;
    const auto t = Clock::now();
    const bool has_object = !step.object.empty() && world_.has_object(step.object);
    if (has_object) r.before = world_.object(step.object).pose;
    try {
      if (!step.skill.empty()) {
        run_skill(step, r);
      } else if (step.action == "observe") {
        r.observed = sim::observe(world_, step.object);
        observed_[step.object] = *r.observed;
      } else if (step.action == "pick") {
        run_pick(step, i, r);
      } else if (step.action == "place") {
        run_place(step, r);
      } else {
        throw StepFailure{"no executor for action '" + step.action + "'"};
      }
    } catch (const StepFailure& f) {
      r.ok = false;
      r.message = f.message;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::MissingCheckpoint) throw;
      r.ok = false;
      r.message = e.what();
    }
    if (has_object) r.after = world_.object(step.object).pose;
    r.seconds = std::chrono::duration<double>(Clock::now() - t).count();
    return r;
  }

 private:
  void run_skill(const PlanStep& step, StepRecord& r) {
    const rl::SkillConfig sc = config_for(configs_, step.skill);
    const Vec2 goal = goal_point(step);
    rl::SkillEnv env(sc, world_, step.object, goal);
    if (env.fell()) throw StepFailure{"object '" + step.object + "' is not on a table"};
    if (recorded_ != nullptr) {
      for (const auto& a : (*recorded_)[static_cast<std::size_t>(r.index)].actions) {
        env.step(a, rng_);
        r.actions.push_back(a);
      }
      env.finish();
    } else if (step.mode == planner::SkillMode::OpenLoop) {
      for (const auto& a : step.actions) {
        env.step(a, rng_);
        r.actions.push_back(a);
        if (env.fell()) break;
      }
      env.finish();
    } else {
      const planner::SkillSpec* skill = find_skill(*skills_, step.skill);
      if (skill == nullptr || !skill->policy) {
        throw Error(ErrorCode::MissingCheckpoint, "missing checkpoint for skill '" + step.skill + "'");
      }
      // The skill state may differ from the planned one (an earlier skill or
      // observation moved things); it must still be certified.
      if (skill->discriminator) {
        const std::vector<double> x0 = env.state();
        r.certainty = skill->discriminator->classify(x0);
        if (r.certainty < skill->discriminator->threshold) {
          throw StepFailure{"observed state no longer certified for " + step.skill};
        }
      }
      const rl::Episode ep = rl::rollout(*skill->policy, env, sc.max_steps, rng_);
      r.actions = ep.actions;
    }
    r.skill_steps = static_cast<int>(r.actions.size());
    r.reached = env.reached();
    world_ = env.world();
  }

  void run_pick(const PlanStep& step, std::size_t i, StepRecord& r) {
    sim::Grasp grasp;
    std::vector<Vec2> motion;
    const bool after_observe = i > 0 && plan_.steps[i - 1].action == "observe" &&
                               plan_.steps[i - 1].object == step.object;
    if (recorded_ != nullptr) {
      const StepRecord& rec = (*recorded_)[i];
      if (!rec.grasp) throw StepFailure{"recorded pick has no grasp"};
      grasp = *rec.grasp;
      motion = rec.motion;
      r.replanned = rec.replanned;
    } else if (config_.refine && after_observe) {
      try {
        const auto g = replan_motion(step, observed_.at(step.object), world_, config_.grasp_samples);
        grasp = g.grasp;
        motion = g.motion;
        r.replanned = true;
      } catch (const Error& e) {
        throw StepFailure{e.what()};
      }
    } else {
      if (!step.grasp) throw StepFailure{"pick step has no planned grasp"};
      grasp = *step.grasp;
      motion = step.motion;
    }
    r.grasp = grasp;
    r.motion = motion;
    world_ = sim::apply_pick(world_, step.object, grasp);
    hand_[step.object] = grasp.point;
  }

  void run_place(const PlanStep& step, StepRecord& r) {
    if (!step.target) throw StepFailure{"place step has no target"};
    auto it = hand_.find(step.object);
    const Vec2 from = it != hand_.end() ? it->second : world_.arm.home_point();
    auto motion = planner::plan_motion(world_.arm, from, step.target->position());
    if (!motion) throw StepFailure{"no feasible motion to the place pose"};
    r.motion = *motion;
    world_ = sim::apply_place(world_, step.object, *step.target);
    hand_.erase(step.object);
  }

  const planner::Plan& plan_;
  sim::WorldState world_;
  Rng rng_;
  ExecutionConfig config_;
  const planner::SkillSet* skills_;
  std::map<std::string, rl::SkillConfig> configs_;
  const std::vector<StepRecord>* recorded_;
  std::map<std::string, sim::Pose2> observed_;
  std::map<std::string, Vec2> hand_;
};

}  // namespace

planner::PickGrounding replan_motion(const PlanStep& next, const sim::Pose2& observed,
                                     const sim::WorldState& world, int grasp_samples) {
  if (next.object.empty() || !world.has_object(next.object)) {
    throw Error(ErrorCode::InvalidArgument, "refined step has no object");
  }
  auto g = planner::ground_pick(world, next.object, observed, grasp_samples);
  if (!g) {
    throw Error(ErrorCode::ExecutionFailed,
                "uncertainty bound violated: no feasible grasp for '" + next.object +
                    "' at the observed pose");
  }
  return *g;
}

pddl::SymbolicState abstract_state(const sim::WorldState& world,
                                   const std::map<std::string, sim::Pose2>& poses,
                                   double tolerance) {
  pddl::SymbolicState s;
  for (const auto& o : world.objects) {
    if (!o.on_table() || world.held == o.id) continue;
    for (const auto& [symbol, pose] : poses) {
      if ((o.pose.position() - pose.position()).norm() <= tolerance) {
        s.insert({"atpose", {o.id, symbol}});
      }
    }
  }
  return s;
}

bool goal_satisfied(const sim::WorldState& world, const planner::Plan& plan, double tolerance) {
  const auto facts = abstract_state(world, plan.poses, tolerance);
  for (const auto& a : plan.goal) {
    if (a.predicate == "atpose") {
      if (facts.count(a) == 0) return false;
    } else if (a.predicate == "holding") {
      if (a.args.size() != 2 || world.held != a.args[1]) return false;
    } else if (a.predicate == "handempty") {
      if (!world.held.empty()) return false;
    } else if (plan.initial.count(a) == 0) {
      return false;
    }
  }
  return true;
}

ExecutionTrace execute(const planner::Plan& plan, const sim::WorldState& world,
                       const planner::SkillSet& skills, std::uint64_t seed,
                       const ExecutionConfig& config) {
  ExecutionTrace trace;
  trace.seed = seed;
  trace.refine = config.refine;
  trace.plan = plan;
  trace.initial = world;
  for (const auto& s : skills) trace.skill_configs[s.action] = s.config;
  Runner runner(plan, world, seed, config, &skills, trace.skill_configs, nullptr);
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    trace.steps.push_back(runner.run_step(i));
    if (!trace.steps.back().ok) {
      trace.failure = "step " + std::to_string(i) + " (" + plan.steps[i].action +
                      "): " + trace.steps.back().message;
      break;
    }
  }
  trace.final = runner.world();
  if (trace.failure.empty()) {
    trace.success = goal_satisfied(trace.final, plan, config.goal_tolerance);
    if (!trace.success) trace.failure = "goal not satisfied in the final world";
  }
  return trace;
}

sim::WorldState replay(const ExecutionTrace& trace) {
  ExecutionConfig config;
  config.refine = trace.refine;
  Runner runner(trace.plan, trace.initial, trace.seed, config, nullptr, trace.skill_configs,
                &trace.steps);
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    if (!trace.steps[i].ok) break;
    const StepRecord r = runner.run_step(i);
    if (!r.ok) throw Error(ErrorCode::ExecutionFailed, "replay diverged at step " + std::to_string(i) + ": " + r.message);
  }
  return runner.world();
}

bool equivalent(const ExecutionTrace& a, const ExecutionTrace& b) {
  if (a.seed != b.seed || a.refine != b.refine || !(a.plan == b.plan) ||
      a.initial != b.initial || a.final != b.final || a.success != b.success ||
      a.failure != b.failure || a.steps.size() != b.steps.size() ||
      a.skill_configs.size() != b.skill_configs.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    StepRecord x = a.steps[i];
    StepRecord y = b.steps[i];
    x.seconds = y.seconds = 0.0;
    if (!(x == y)) return false;
  }
  for (const auto& [name, c] : a.skill_configs) {
    auto it = b.skill_configs.find(name);
    if (it == b.skill_configs.end() ||
        rl::skill_config_to_json(c) != rl::skill_config_to_json(it->second)) {
      return false;
    }
  }
  return true;
}

// ------------------------------------------------------------------ trace I/O

namespace {

json optional_pose(const std::optional<sim::Pose2>& p) { return p ? json(*p) : json(nullptr); }

std::optional<sim::Pose2> pose_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<sim::Pose2>();
}

json record_json(const StepRecord& r) {
  json motion = json::array();
  for (const auto& p : r.motion) motion.push_back({p.x, p.y});
  return {{"index", r.index},
          {"action", r.action},
          {"args", r.args},
          {"object", r.object},
          {"ok", r.ok},
          {"message", r.message},
          {"before", optional_pose(r.before)},
          {"after", optional_pose(r.after)},
          {"observed", optional_pose(r.observed)},
          {"replanned", r.replanned},
          {"grasp", r.grasp ? json(*r.grasp) : json(nullptr)},
          {"motion", motion},
          {"actions", r.actions},
          {"skill_steps", r.skill_steps},
          {"reached", r.reached},
          {"certainty", r.certainty},
          {"seconds", r.seconds}};
}

StepRecord record_from(const json& j) {
  StepRecord r;
  r.index = j.at("index").get<int>();
  r.action = j.at("action").get<std::string>();
  r.args = j.at("args").get<std::vector<std::string>>();
  r.object = j.at("object").get<std::string>();
  r.ok = j.at("ok").get<bool>();
  r.message = j.at("message").get<std::string>();
  r.before = pose_from(j.at("before"));
  r.after = pose_from(j.at("after"));
  r.observed = pose_from(j.at("observed"));
  r.replanned = j.at("replanned").get<bool>();
  if (!j.at("grasp").is_null()) r.grasp = j.at("grasp").get<sim::Grasp>();
  for (const auto& p : j.at("motion")) r.motion.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  r.actions = j.at("actions").get<std::vector<std::vector<double>>>();
  r.skill_steps = j.at("skill_steps").get<int>();
  r.reached = j.at("reached").get<bool>();
  r.certainty = j.at("certainty").get<double>();
  r.seconds = j.at("seconds").get<double>();
  return r;
}

}  // namespace

std::string trace_to_jsonl(const ExecutionTrace& t) {
  json plan_lines = json::array();
  std::istringstream plan_text(planner::plan_to_jsonl(t.plan));
  for (std::string line; std::getline(plan_text, line);) {
    if (!line.empty()) plan_lines.push_back(json::parse(line));
  }
  json configs = json::object();
  for (const auto& [name, c] : t.skill_configs) configs[name] = rl::skill_config_to_json(c);
  const json header = {{"format", "skillplan-trace"}, {"version", 1},
                       {"seed", t.seed},              {"refine", t.refine},
                       {"steps", t.steps.size()},     {"skill_configs", configs},
                       {"initial", t.initial},        {"plan", plan_lines}};
  std::ostringstream out;
  out << header.dump() << '\n';
  for (const auto& r : t.steps) out << record_json(r).dump() << '\n';
  const json footer = {{"final", t.final}, {"success", t.success}, {"failure", t.failure}};
  out << footer.dump() << '\n';
  return out.str();
}

ExecutionTrace trace_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::vector<json> lines;
  try {
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) lines.push_back(json::parse(line));
    }
    if (lines.size() < 2) throw Error(ErrorCode::Parse, "trace file is truncated");
    const json& header = lines.front();
    if (header.value("format", "") != "skillplan-trace" || header.value("version", 0) != 1) {
      throw Error(ErrorCode::Parse, "not a trace file");
    }
    ExecutionTrace t;
    t.seed = header.at("seed").get<std::uint64_t>();
    t.refine = header.at("refine").get<bool>();
    for (const auto& [name, c] : header.at("skill_configs").items()) {
      t.skill_configs[name] = rl::skill_config_from_json(c);
    }
    t.initial = header.at("initial").get<sim::WorldState>();
    std::string plan_text;
    for (const auto& l : header.at("plan")) plan_text += l.dump() + "\n";
    t.plan = planner::plan_from_jsonl(plan_text);
    const auto count = header.at("steps").get<std::size_t>();
    if (lines.size() != count + 2) throw Error(ErrorCode::Parse, "trace file is truncated");
    for (std::size_t i = 1; i + 1 < lines.size(); ++i) t.steps.push_back(record_from(lines[i]));
    const json& footer = lines.back();
    t.final = footer.at("final").get<sim::WorldState>();
    t.success = footer.at("success").get<bool>();
    t.failure = footer.at("failure").get<std::string>();
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("malformed trace file: ") + e.what());
  }
}

}  // namespace skillplan::executor
