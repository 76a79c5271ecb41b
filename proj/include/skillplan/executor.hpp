#pragma once

// Plan execution in the simulated world: deterministic motions, skill
// rollouts toward their grounded sub-goals, Observe, and refinement of the
// motion that follows an observation.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "skillplan/planner.hpp"

namespace skillplan::executor {

struct ExecutionConfig {
  bool refine = true;            // ablation switch for motion refinement after Observe
  double goal_tolerance = 0.03;  // world pose to AtPose abstraction
  int grasp_samples = 16;
};

struct StepRecord {
  int index = 0;
  std::string action;
  std::vector<std::string> args;
  std::string object;
  bool ok = true;
  std::string message;
  std::optional<sim::Pose2> before;    // manipulated object
  std::optional<sim::Pose2> after;
  std::optional<sim::Pose2> observed;  // Observe
  bool replanned = false;              // motion refined from an observation
  std::optional<sim::Grasp> grasp;     // grasp actually used by Pick
  std::vector<Vec2> motion;            // motion actually executed
  std::vector<std::vector<double>> actions;  // raw skill actions applied
  int skill_steps = 0;
  bool reached = false;                // skill ended within tolerance of its goal
  double certainty = 0.0;              // discriminator re-run before a skill
  double seconds = 0.0;                // wall time, excluded from comparisons

  bool operator==(const StepRecord&) const = default;
};

struct ExecutionTrace {
  std::uint64_t seed = 0;
  bool refine = true;
  planner::Plan plan;
  std::map<std::string, rl::SkillConfig> skill_configs;  // by skill name
  sim::WorldState initial;
  sim::WorldState final;
  std::vector<StepRecord> steps;
  bool success = false;
  std::string failure;
};

/// Same outcome, ignoring wall time.
bool equivalent(const ExecutionTrace& a, const ExecutionTrace& b);

/// Runs `plan` from `world`. Failures (infeasible refinement, failed grasp,
/// rejected skill state) end the run and are reported in the trace. Throws
/// MissingCheckpoint if a policy step has no loaded skill.
ExecutionTrace execute(const planner::Plan& plan, const sim::WorldState& world,
                       const planner::SkillSet& skills, std::uint64_t seed,
                       const ExecutionConfig& config = {});

/// New grasp and approach motion for the Pick that follows an observation.
/// Throws ExecutionFailed when the observed pose admits none.
planner::PickGrounding replan_motion(const planner::PlanStep& next, const sim::Pose2& observed,
                                     const sim::WorldState& world, int grasp_samples = 16);

/// Symbolic abstraction of the goal-relevant facts of a world.
pddl::SymbolicState abstract_state(const sim::WorldState& world,
                                   const std::map<std::string, sim::Pose2>& poses,
                                   double tolerance);

bool goal_satisfied(const sim::WorldState& world, const planner::Plan& plan, double tolerance);

std::string trace_to_jsonl(const ExecutionTrace& trace);
ExecutionTrace trace_from_jsonl(const std::string& text);

/// Re-applies the recorded actions from the initial world with the recorded
/// seed; needs no policies. Returns the final world.
sim::WorldState replay(const ExecutionTrace& trace);

}  // namespace skillplan::executor
