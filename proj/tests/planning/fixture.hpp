#pragma once

// Trained skills shared by the planning-level tests. The checkpoints are
// produced once per build tree by the prepare_artifacts test fixture.

#include "skillplan/bench.hpp"

namespace fixture {

inline const skillplan::planner::SkillSet& skills() {
  static const skillplan::planner::SkillSet s =
      skillplan::bench::load_skills(SKILLPLAN_ARTIFACTS, skillplan::bench::method_domain("ours"));
  return s;
}

inline skillplan::bench::Scenario scenario(const std::string& id, std::uint64_t seed,
                                           const std::string& method = "ours") {
  return skillplan::bench::method_scenario(method, id, seed, skillplan::bench::BenchConfig{});
}

inline skillplan::planner::PlannerConfig planner_config(double timeout = 30.0) {
  skillplan::planner::PlannerConfig c;
  c.timeout = timeout;
  return c;
}

inline std::vector<std::string> actions(const skillplan::planner::Plan& plan) {
  std::vector<std::string> out;
  for (const auto& s : plan.steps) out.push_back(s.action);
  return out;
}

}  // namespace fixture
