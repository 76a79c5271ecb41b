#include <doctest.h>

#include <cmath>
#include <set>

#include "skillplan/rl.hpp"

using namespace skillplan;
using namespace skillplan::rl;

namespace {

sim::RigidObject cylinder(std::string id, double x, double y, double r) {
  sim::RigidObject o;
  o.id = std::move(id);
  o.half_extent = r;
  o.pose = {x, y, 0.0};
  o.table = "table_a";
  return o;
}

struct Constant : Controller {
  std::vector<double> out;
  std::vector<double> act(const SkillEnv&) const override { return out; }
};

SkillEnv env_with(SkillKind kind, sim::RigidObject o, Vec2 goal) {
  sim::WorldState w = sim::make_tabletop();
  w.params.noise_scale = 0.0;
  const std::string id = o.id;
  w.objects.push_back(std::move(o));
  return SkillEnv(SkillConfig::defaults(kind), std::move(w), id, goal);
}

}  // namespace

TEST_CASE("goal test uses a closed tolerance") {
  CHECK(goal_reached({0.5, 0.1}, {0.5, 0.1}, 0.03));
  CHECK(goal_reached({0.03, 0.0}, {0.0, 0.0}, 0.03));
  CHECK_FALSE(goal_reached({0.0303, 0.0}, {0.0, 0.0}, 0.03));
}

TEST_CASE("retrieve reward is k times the goal indicator") {
  RewardWeights w;
  CHECK(reward_retrieve({0.5, 0.0}, {0.5, 0.0}, w) == 1.0);
  CHECK(reward_retrieve({0.9, 0.0}, {0.5, 0.0}, w) == 0.0);
  w.k = 5.0;
  CHECK(reward_retrieve({0.5, 0.0}, {0.5, 0.0}, w) == 5.0);
}

TEST_CASE("edge-push reward combines reach, graspability and falls") {
  RewardWeights w;
  sim::WorldState world = sim::make_tabletop();

  SUBCASE("reached, graspable and on the table") {
    world.objects.push_back(cylinder("cup", 0.5, 0.0, 0.035));
    CHECK(sim::check_graspable(world, "cup", 16));
    CHECK(reward_edgepush(world, "cup", {0.5, 0.0}, w, 16) == 2.0);
  }
  SUBCASE("off the table only") {
    sim::RigidObject o = cylinder("plate", 1.6, 0.0, 0.07);
    o.table.clear();
    world.objects.push_back(o);
    CHECK(reward_edgepush(world, "plate", {0.5, 0.0}, w, 16) == -2.0);
  }
  SUBCASE("large plate mid-table, not reached") {
    world.objects.push_back(cylinder("plate", 0.55, 0.0, 0.07));
    CHECK_FALSE(sim::check_graspable(world, "plate", 16));
    CHECK(reward_edgepush(world, "plate", {0.3, 0.3}, w, 16) == 0.0);
  }
  SUBCASE("monotone in each component") {
    world.objects.push_back(cylinder("cup", 0.5, 0.0, 0.035));
    const double reached = reward_edgepush(world, "cup", {0.5, 0.0}, w, 16);
    const double missed = reward_edgepush(world, "cup", {0.6, 0.0}, w, 16);
    CHECK(reached >= missed);
    world.object("cup").table.clear();
    CHECK(reward_edgepush(world, "cup", {0.5, 0.0}, w, 16) <= reached);
  }
}

TEST_CASE("rollout stops immediately at the goal") {
  SkillEnv env = env_with(SkillKind::Retrieve, cylinder("cup", 0.5, 0.0, 0.035), {0.5, 0.0});
  GoalConditionedPolicy zero(env.config());
  Rng rng(1);
  const Episode ep = rollout(zero, env, 20, rng);
  CHECK(ep.success);
  CHECK(ep.steps == 0);
  CHECK(ep.ret == 1.0);
}

TEST_CASE("zero policy makes no progress") {
  for (SkillKind kind : {SkillKind::Retrieve, SkillKind::EdgePush}) {
    SkillEnv env = env_with(kind, cylinder("obj", 0.9, 0.1, 0.035), {0.5, 0.0});
    const Vec2 start = env.object_position();
    GoalConditionedPolicy zero(env.config());
    Rng rng(2);
    const Episode ep = rollout(zero, env, 20, rng);
    CHECK_FALSE(ep.success);
    CHECK(ep.steps == 20);
    CHECK(env.object_position() == start);
  }
}

TEST_CASE("rollout rejects an object that starts off the table") {
  sim::RigidObject o = cylinder("cup", 1.5, 0.0, 0.035);
  o.table.clear();
  SkillEnv env = env_with(SkillKind::Retrieve, o, {0.5, 0.0});
  GoalConditionedPolicy zero(env.config());
  Rng rng(3);
  try {
    rollout(zero, env, 20, rng);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidInitialState);
  }
}

TEST_CASE("actions of the wrong size are rejected") {
  SkillEnv env = env_with(SkillKind::EdgePush, cylinder("cup", 0.5, 0.0, 0.035), {0.4, 0.0});
  Rng rng(4);
  const std::vector<double> three{0.0, 0.0, 0.0};
  CHECK_THROWS_AS(env.step(three, rng), Error);
}

TEST_CASE("edge-push actions push along the goal direction") {
  SkillEnv env = env_with(SkillKind::EdgePush, cylinder("cup", 0.5, 0.0, 0.035), {0.4, 0.0});
  Rng rng(5);
  const double distance = 0.05;
  const std::vector<double> a{0.0, std::atanh(distance / env.config().push_max)};
  env.step(a, rng);
  CHECK(env.object_position().x == doctest::Approx(0.45).epsilon(1e-9));
  CHECK(env.object_position().y == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("policies are deterministic in evaluation") {
  const SkillConfig c = SkillConfig::defaults(SkillKind::Retrieve);
  GoalConditionedPolicy p(c);
  Rng rng(6);
  p.network().init_random(rng);
  SkillEnv env = env_with(SkillKind::Retrieve, cylinder("cup", 1.0, 0.1, 0.035), {0.5, 0.0});
  CHECK(p.act(env) == p.act(env));
}

TEST_CASE("domain randomization draws per episode") {
  const SkillConfig c = SkillConfig::defaults(SkillKind::EdgePush);
  std::set<double> frictions;
  std::set<double> sizes;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const EpisodeStart start = sample_episode_start(c, rng);
    const sim::RigidObject& o = start.world.object(start.object_id);
    frictions.insert(o.friction);
    sizes.insert(o.half_extent);
    CHECK(o.friction >= c.bounds.friction_min);
    CHECK(o.friction <= c.bounds.friction_max);
    CHECK(o.half_extent >= c.bounds.extent_min);
    CHECK(o.half_extent <= c.bounds.extent_max);
    CHECK(o.on_table());
  }
  CHECK(frictions.size() == 20);
  CHECK(sizes.size() == 20);
}

TEST_CASE("zero iterations return the initial policy") {
  const SkillConfig c = SkillConfig::defaults(SkillKind::Retrieve);
  SearchConfig s;
  s.iterations = 0;
  s.eval_episodes = 4;
  const TrainingResult r = train_policy(c, s, 9);
  CHECK(r.policy == GoalConditionedPolicy(c));
  CHECK(r.log.empty());
  CHECK(r.final.mean_return == r.initial.mean_return);
}

TEST_CASE("training is reproducible for a fixed seed") {
  const SkillConfig c = SkillConfig::defaults(SkillKind::Retrieve);
  SearchConfig s;
  s.iterations = 2;
  s.population = 8;
  s.elites = 2;
  s.episodes_per_candidate = 2;
  s.eval_episodes = 4;
  const TrainingResult a = train_policy(c, s, 10);
  s.threads = 1;
  const TrainingResult b = train_policy(c, s, 10);
  CHECK(a.policy == b.policy);
  REQUIRE(a.log.size() == 2);
  CHECK(a.log[1].mean_return == b.log[1].mean_return);
  CHECK(training_log_csv(a.log).rfind("iteration,mean_return,max_return,success_rate\n", 0) == 0);
}

TEST_CASE("invalid search settings are rejected") {
  const SkillConfig c = SkillConfig::defaults(SkillKind::Retrieve);
  SearchConfig s;
  s.elites = 100;
  CHECK_THROWS_AS(train_policy(c, s, 1), Error);
}

TEST_CASE("policy checkpoints round trip") {
  SkillConfig c = SkillConfig::defaults(SkillKind::EdgePush);
  c.max_steps = 17;
  GoalConditionedPolicy p(c);
  Rng rng(7);
  p.network().init_random(rng);
  SkillConfig back_config;
  const GoalConditionedPolicy back = policy_from_json(policy_to_json(p, c), &back_config);
  CHECK(back == p);
  CHECK(back_config.max_steps == 17);
  CHECK_THROWS_AS(policy_from_json(nlohmann::json{{"format", "other"}}), Error);
}
