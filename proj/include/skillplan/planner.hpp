#pragma once

// Task planning over the tabletop domain: greedy best-first search whose
// geometric facts (grasps, placements, skill certificates, sub-goals) are
// produced lazily by streams, plus the HB, SB and SRL baseline planners.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillplan/connectors.hpp"
#include "skillplan/pddl.hpp"
#include "skillplan/rl.hpp"
#include "skillplan/sim.hpp"

namespace skillplan::planner {

/// A learned skill bound to its symbolic operator: object arguments are the
/// operator's parameters, plus policy, discriminator and sub-goal generator.
struct SkillSpec {
  rl::SkillConfig config;
  std::string action;                 // operator name in the domain
  std::string from_predicate;         // certified by the discriminator
  std::string to_predicate;           // certified by the sub-goal generator
  std::shared_ptr<const rl::GoalConditionedPolicy> policy;
  std::shared_ptr<const connectors::DiscriminatorModel> discriminator;
  std::shared_ptr<const connectors::SubgoalIndex> subgoals;

  rl::SkillKind kind() const { return config.kind; }
  /// Object the connectors were generated for (shape and size).
  const sim::RigidObject& object() const { return subgoals->dataset().object; }
  /// Whether `o` matches the skill's object closely enough to reuse its data.
  bool applies_to(const sim::RigidObject& o) const;
};

using SkillSet = std::vector<SkillSpec>;

/// Binds a skill to the operator of the same name and checks that it is a
/// probabilistic schema with one from-state and one to-state certificate.
SkillSpec make_skill_spec(const pddl::DomainDef& domain, rl::SkillConfig config,
                          std::shared_ptr<const rl::GoalConditionedPolicy> policy,
                          std::shared_ptr<const connectors::DiscriminatorModel> discriminator,
                          std::shared_ptr<const connectors::SubgoalIndex> subgoals);

/// Symbolic problem plus its geometry. Pose symbols bound by initial AtPose
/// facts take the object's world pose; the others come from `poses`.
struct PlanningTask {
  pddl::DomainDef domain;
  pddl::ProblemDef problem;
  sim::WorldState world;
  std::map<std::string, sim::Pose2> poses;
};

enum class SkillMode {
  Policy,    // roll out the skill policy toward `goal`
  OpenLoop,  // replay `actions` through the skill environment
};

/// One plan step: a ground action with its motion (deterministic actions) or
/// its skill grounding.
struct PlanStep {
  std::string action;
  std::vector<std::string> args;
  bool probabilistic = false;
  std::string object;

  // Pick / Place
  std::optional<sim::Grasp> grasp;
  std::optional<sim::Pose2> target;  // place pose, or the substitute read by Observe
  std::vector<Vec2> motion;          // straight Cartesian segments between waypoints

  // Skills
  std::string skill;                 // skill name, empty for deterministic actions
  SkillMode mode = SkillMode::Policy;
  std::vector<double> x0;
  std::vector<double> goal;
  std::vector<std::vector<double>> effects;
  std::vector<std::vector<double>> actions;
  double optimism = 0.0;
  double certainty = 0.0;  // discriminator probability at planning time

  bool operator==(const PlanStep&) const = default;
};

struct Plan {
  std::vector<PlanStep> steps;
  pddl::SymbolicState initial;              // static and fluent facts
  std::vector<pddl::SymbolicState> states;  // expected state after each step
  std::vector<pddl::Atom> goal;
  std::map<std::string, sim::Pose2> poses;  // values of every pose symbol used

  bool operator==(const Plan&) const = default;
};

struct SolverStats {
  int solver_invocations = 0;
  int expansions = 0;
  int stream_evaluations = 0;
  int substitutions = 0;        // sub-goal candidates activated
  int skill_rollouts = 0;       // SRL: skills triggered while planning
  double search_seconds = 0.0;
  double stream_seconds = 0.0;
  double total_seconds = 0.0;
};

enum class PlanStatus { Solved, Timeout, NoCertifiableGrounding, NoHeuristic, Unreachable };

const char* plan_status_name(PlanStatus status);

struct PlanResult {
  PlanStatus status = PlanStatus::Unreachable;
  std::optional<Plan> plan;
  std::string message;
  SolverStats stats;

  bool solved() const { return status == PlanStatus::Solved; }
};

struct PlannerConfig {
  double timeout = 30.0;           // seconds of wall time
  int k = 10;                      // sub-goal neighbours per query
  int k_max = 160;                 // the query widens up to this when nothing is certifiable
  int substitution_budget = 5;     // candidates per skill stream before giving up
  int grasp_samples = 16;
  int max_expansions = 200000;
  double goal_tolerance = 0.03;    // abstraction of world poses into AtPose facts
  double hb_push = 0.14;           // HB: push length toward the nearest edge
  double hb_edge_margin = 0.02;    // HB: where the last push leaves the object centre
  int hb_max_pushes = 12;
  int sb_sequences = 200;          // SB: sampled action sequences per stream round
  int sb_rounds = 5;
  int srl_rounds = 6;
  std::uint64_t seed = 0;          // SB and SRL sampling
};

/// Unmet goal atoms.
double heuristic(const pddl::SymbolicState& state, const std::vector<pddl::Atom>& goal);

/// Proposed method: optimistic substitution with lazy stream evaluation.
PlanResult plan(const PlanningTask& task, const SkillSet& skills, const PlannerConfig& config);

/// Heuristic baseline: deterministic pushes toward the nearest table edge;
/// no way to ground Retrieve.
PlanResult plan_hb(const PlanningTask& task, const PlannerConfig& config);

/// Sampling baseline: skill groundings drawn uniformly from the action spaces
/// and checked by noise-free forward simulation.
PlanResult plan_sb(const PlanningTask& task, const SkillSet& skills, const PlannerConfig& config);

/// Synergistic-RL baseline: plan without skills; on failure trigger every
/// skill on every object that cannot be picked, then replan.
PlanResult plan_srl(const PlanningTask& task, const SkillSet& skills,
                    const PlannerConfig& config);

struct Validation {
  bool valid = true;
  std::vector<std::string> diagnostics;
};

/// STRIPS chain validity, an Observe right after every skill step, and the
/// goal at the end.
Validation validate_plan(const Plan& plan, const pddl::DomainDef& domain);

// ------------------------------------------------------------------ geometry

/// Straight segment if feasible, otherwise a detour through the arm's home
/// point. Waypoints include both ends.
std::optional<std::vector<Vec2>> plan_motion(const sim::ArmModel& arm, Vec2 from, Vec2 to);

/// World with `object_id` moved to `pose` (support table recomputed).
sim::WorldState with_object_at(const sim::WorldState& world, const std::string& object_id,
                               const sim::Pose2& pose);

struct PickGrounding {
  sim::Grasp grasp;
  std::vector<Vec2> motion;
};

/// Grasp of the object at `pose` with a motion from the arm's home point.
std::optional<PickGrounding> ground_pick(const sim::WorldState& world,
                                         const std::string& object_id, const sim::Pose2& pose,
                                         int grasp_samples);

/// Whether the object could be put down at `pose` (reachable, on a table).
bool place_feasible(const sim::WorldState& world, const sim::Pose2& pose);

/// Skill state vector of `object_id` at `pose` with the tool at rest.
std::vector<double> skill_state(const rl::SkillConfig& config, const sim::WorldState& world,
                                const std::string& object_id, const sim::Pose2& pose);

// ------------------------------------------------------------------ plan I/O

/// Line-delimited JSON: a header (initial facts, goal, poses) and one line per step.
std::string plan_to_jsonl(const Plan& plan);
Plan plan_from_jsonl(const std::string& text);

nlohmann::json step_to_json(const PlanStep& step);
PlanStep step_from_json(const nlohmann::json& j);

nlohmann::json stats_to_json(const SolverStats& stats);

}  // namespace skillplan::planner
