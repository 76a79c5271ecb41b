#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fixture.hpp"

using namespace skillplan;
using planner::PlanStatus;
using Strings = std::vector<std::string>;

namespace {

bool mentions(const planner::Validation& v, const std::string& text) {
  return std::any_of(v.diagnostics.begin(), v.diagnostics.end(),
                     [&](const std::string& d) { return d.find(text) != std::string::npos; });
}

}  // namespace

TEST_CASE("retrieval plans retrieve, observe, pick, place") {
  const auto s = fixture::scenario("retrieval", 3);
  const auto r = planner::plan(s.task, fixture::skills(), fixture::planner_config());
  REQUIRE(r.solved());
  const auto& plan = *r.plan;
  CHECK(fixture::actions(plan) == Strings{"retrieve", "observe", "pick", "place"});
  CHECK(planner::validate_plan(plan, s.task.domain).valid);

  const auto& skill = plan.steps[0];
  CHECK(skill.skill == "retrieve");
  CHECK(skill.object == "cup");
  CHECK(skill.mode == planner::SkillMode::Policy);
  CHECK(skill.optimism > 0.0);
  CHECK(skill.certainty >= fixture::skills()[0].discriminator->threshold);
  CHECK(skill.goal.size() == 2);
  // Observe reads the pose symbol standing in for the skill's sub-goal.
  CHECK(plan.steps[1].args[1] == skill.args.back());
  CHECK(plan.steps[2].args[2] == plan.steps[1].args[2]);
  REQUIRE(plan.steps[1].target.has_value());
  CHECK(plan.steps[1].target->x == doctest::Approx(skill.goal[0]));
  CHECK(plan.steps[1].target->y == doctest::Approx(skill.goal[1]));
  // Pick grounding is reachable; the place target is the goal pose.
  REQUIRE(plan.steps[2].grasp.has_value());
  CHECK(sim::in_workspace(s.task.world.arm, plan.steps[2].grasp->point));
  REQUIRE(plan.steps[3].target.has_value());
  CHECK(plan.steps[3].target->position() == s.task.poses.at("pg_cup").position());
  CHECK(plan.states.size() == plan.steps.size());
}

TEST_CASE("edge-pushing pushes before it picks") {
  const auto s = fixture::scenario("edge-pushing", 5);
  const auto r = planner::plan(s.task, fixture::skills(), fixture::planner_config());
  REQUIRE(r.solved());
  CHECK(fixture::actions(*r.plan) == Strings{"edgepush", "observe", "pick", "place"});
  CHECK(r.plan->steps[2].grasp->mode == sim::GraspMode::Rim);
}

TEST_CASE("serving uses both skills") {
  const auto s = fixture::scenario("serving", 2);
  const auto r = planner::plan(s.task, fixture::skills(), fixture::planner_config());
  REQUIRE(r.solved());
  const auto a = fixture::actions(*r.plan);
  CHECK(std::count(a.begin(), a.end(), "retrieve") == 1);
  CHECK(std::count(a.begin(), a.end(), "edgepush") == 1);
  CHECK(std::count(a.begin(), a.end(), "observe") == 2);
  CHECK(planner::validate_plan(*r.plan, s.task.domain).valid);
}

TEST_CASE("a goal that already holds yields the empty plan") {
  auto s = fixture::scenario("retrieval", 1);
  s.task.problem.goal = {{"atpose", {"cup", "p_cup_0"}}};
  const auto r = planner::plan(s.task, fixture::skills(), fixture::planner_config());
  REQUIRE(r.solved());
  CHECK(r.plan->steps.empty());
  CHECK(planner::validate_plan(*r.plan, s.task.domain).valid);
}

TEST_CASE("heuristic counts unmet goal atoms") {
  const auto s = fixture::scenario("serving", 0);
  pddl::SymbolicState init(s.task.problem.init.begin(), s.task.problem.init.end());
  CHECK(planner::heuristic(init, s.task.problem.goal) == 2.0);
  init.insert({"atpose", {"cup", "pg_cup"}});
  CHECK(planner::heuristic(init, s.task.problem.goal) == 1.0);
}

TEST_CASE("validation flags a missing observation and a broken chain") {
  const auto s = fixture::scenario("retrieval", 4);
  const auto r = planner::plan(s.task, fixture::skills(), fixture::planner_config());
  REQUIRE(r.solved());

  SUBCASE("observe removed") {
    planner::Plan p = *r.plan;
    p.steps.erase(p.steps.begin() + 1);
    p.states.erase(p.states.begin() + 1);
    const auto v = planner::validate_plan(p, s.task.domain);
    CHECK_FALSE(v.valid);
    CHECK(mentions(v, "missing observation"));
  }
  SUBCASE("pick and place swapped") {
    planner::Plan p = *r.plan;
    std::swap(p.steps[2], p.steps[3]);
    const auto v = planner::validate_plan(p, s.task.domain);
    CHECK_FALSE(v.valid);
    CHECK(mentions(v, "invalid chain"));
  }
  SUBCASE("goal left unmet") {
    planner::Plan p = *r.plan;
    p.steps.pop_back();
    p.states.pop_back();
    const auto v = planner::validate_plan(p, s.task.domain);
    CHECK_FALSE(v.valid);
    CHECK(mentions(v, "goal not satisfied"));
  }
}

TEST_CASE("every plan found passes validation") {
  for (const char* id : bench::kScenarioIds) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto s = fixture::scenario(id, seed);
      const auto r = planner::plan(s.task, fixture::skills(), fixture::planner_config());
      if (!r.solved()) continue;
      const auto v = planner::validate_plan(*r.plan, s.task.domain);
      INFO(id << " seed " << seed);
      CHECK(v.valid);
    }
  }
}

TEST_CASE("planning is deterministic") {
  const auto s = fixture::scenario("serving", 9);
  const auto a = planner::plan(s.task, fixture::skills(), fixture::planner_config());
  const auto b = planner::plan(s.task, fixture::skills(), fixture::planner_config());
  REQUIRE(a.solved());
  REQUIRE(b.solved());
  CHECK(*a.plan == *b.plan);
  CHECK(a.stats.expansions == b.stats.expansions);
  CHECK(a.stats.substitutions == b.stats.substitutions);
}

TEST_CASE("plans round trip through JSONL") {
  const auto s = fixture::scenario("serving", 6);
  const auto r = planner::plan(s.task, fixture::skills(), fixture::planner_config());
  REQUIRE(r.solved());
  const std::string text = planner::plan_to_jsonl(*r.plan);
  CHECK(planner::plan_from_jsonl(text) == *r.plan);
  CHECK(planner::plan_to_jsonl(planner::plan_from_jsonl(text)) == text);
  CHECK_THROWS_AS(planner::plan_from_jsonl("{\"format\":\"nope\"}"), Error);
}

TEST_CASE("an uncertifiable skill state fails fast") {
  const auto s = fixture::scenario("retrieval", 0);
  planner::SkillSet skills = fixture::skills();
  for (auto& sk : skills) {
    auto d = std::make_shared<connectors::DiscriminatorModel>(*sk.discriminator);
    d->threshold = 1.5;
    sk.discriminator = d;
  }
  const auto r = planner::plan(s.task, skills, fixture::planner_config());
  CHECK_FALSE(r.solved());
  CHECK(r.status != PlanStatus::Timeout);
  CHECK(r.stats.substitutions == 0);
}

TEST_CASE("a zero budget times out") {
  const auto s = fixture::scenario("serving", 0);
  const auto r = planner::plan(s.task, fixture::skills(), fixture::planner_config(0.0));
  CHECK(r.status == PlanStatus::Timeout);
  CHECK_FALSE(r.plan.has_value());
}

TEST_CASE("skills bind only to objects like their training object") {
  const auto& skills = fixture::skills();
  REQUIRE(skills.size() == 2);
  const auto cup = bench::skill_object(rl::SkillKind::Retrieve);
  const auto plate = bench::skill_object(rl::SkillKind::EdgePush);
  CHECK(skills[0].applies_to(cup));
  CHECK_FALSE(skills[0].applies_to(plate));
  CHECK(skills[1].applies_to(plate));
  CHECK_FALSE(skills[1].applies_to(cup));
}

TEST_CASE("skill specs must match a probabilistic operator") {
  const auto& sk = fixture::skills()[0];
  const auto det = bench::method_domain("hb");
  CHECK_THROWS_AS(planner::make_skill_spec(det, sk.config, sk.policy, sk.discriminator, sk.subgoals),
                  Error);
  CHECK_THROWS_AS(planner::make_skill_spec(bench::method_domain("ours"), sk.config, nullptr,
                                           sk.discriminator, sk.subgoals),
                  Error);
  const auto spec = planner::make_skill_spec(bench::method_domain("ours"), sk.config, sk.policy,
                                             sk.discriminator, sk.subgoals);
  CHECK(spec.from_predicate == "canretrievefrom");
  CHECK(spec.to_predicate == "canretrieveto");
}

TEST_CASE("HB cannot ground retrieval but solves edge-pushing") {
  for (const char* id : {"retrieval", "multi-retrieving", "serving"}) {
    const auto s = fixture::scenario(id, 1, "hb");
    const auto r = planner::plan_hb(s.task, fixture::planner_config());
    CHECK(r.status == PlanStatus::NoHeuristic);
  }
  const auto s = fixture::scenario("edge-pushing", 1, "hb");
  const auto a = planner::plan_hb(s.task, fixture::planner_config());
  REQUIRE(a.solved());
  CHECK(fixture::actions(*a.plan) == Strings{"edgepush", "pick", "place"});
  CHECK(a.plan->steps[0].mode == planner::SkillMode::OpenLoop);
  CHECK(planner::validate_plan(*a.plan, s.task.domain).valid);
  const auto b = planner::plan_hb(s.task, fixture::planner_config());
  CHECK(*a.plan == *b.plan);
}

TEST_CASE("SB finds an open-loop skill sequence on edge-pushing") {
  const auto s = fixture::scenario("edge-pushing", 2, "sb");
  auto config = fixture::planner_config();
  config.seed = 11;
  const auto r = planner::plan_sb(s.task, fixture::skills(), config);
  REQUIRE(r.solved());
  const auto a = fixture::actions(*r.plan);
  REQUIRE(a.size() == 3);
  // Random sequences of either skill's actions may do the job.
  CHECK((a[0] == "edgepush" || a[0] == "retrieve"));
  CHECK(r.plan->steps[0].mode == planner::SkillMode::OpenLoop);
  CHECK_FALSE(r.plan->steps[0].actions.empty());
  CHECK(*planner::plan_sb(s.task, fixture::skills(), config).plan == *r.plan);
}

TEST_CASE("SRL triggers skills and replans") {
  const auto s = fixture::scenario("retrieval", 0, "srl");
  auto config = fixture::planner_config();
  config.seed = 5;
  const auto r = planner::plan_srl(s.task, fixture::skills(), config);
  CHECK(r.stats.skill_rollouts >= 1);
  CHECK(r.stats.solver_invocations >= 2);
  if (r.solved()) {
    CHECK(fixture::actions(*r.plan).front() == "retrieve");
    CHECK(planner::validate_plan(*r.plan, s.task.domain).valid);
  }
}

TEST_CASE("motions go straight or through the home point") {
  const sim::ArmModel arm;
  const auto straight = planner::plan_motion(arm, {0.5, -0.3}, {0.5, 0.3});
  REQUIRE(straight.has_value());
  CHECK(straight->size() == 2);
  // The straight segment would pass too close to the base.
  const auto detour = planner::plan_motion(arm, {0.0, -0.5}, {0.0, 0.5});
  REQUIRE(detour.has_value());
  CHECK(detour->size() == 3);
  CHECK((*detour)[1] == arm.home_point());
  CHECK_FALSE(planner::plan_motion(arm, {0.5, 0.0}, {1.0, 0.0}).has_value());
}
