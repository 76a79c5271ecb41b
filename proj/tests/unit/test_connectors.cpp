#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "skillplan/connectors.hpp"

using namespace skillplan;
using namespace skillplan::connectors;

namespace {

sim::RigidObject cup() {
  sim::RigidObject o;
  o.id = "cup";
  o.half_extent = 0.035;
  return o;
}

struct QuietWarnings {
  std::vector<std::string> seen;
  QuietWarnings() {
    set_warning_handler([this](const std::string& m) { seen.push_back(m); });
  }
  ~QuietWarnings() { set_warning_handler(nullptr); }
};

Substitution with_effects(Vector goal, std::vector<Vector> effects, std::size_t record) {
  return {std::move(goal), std::move(effects), record};
}

// Reach annulus labels on a square around the arm.
void annulus_set(std::uint64_t seed, int count, std::vector<Vector>& x, std::vector<int>& y) {
  const sim::ArmModel arm;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const Vector p{u(rng), u(rng)};
    x.push_back(p);
    y.push_back(sim::in_workspace(arm, Vec2{p[0], p[1]}) ? 1 : 0);
  }
}

}  // namespace

TEST_CASE("dataset generation labels") {
  const rl::SkillConfig c = rl::SkillConfig::defaults(rl::SkillKind::Retrieve);
  DatasetConfig data;
  data.num_pairs = 24;
  data.n = 3;

  SUBCASE("no pairs") {
    data.num_pairs = 0;
    const SkillDataset d = generate_dataset([](rl::SkillEnv&, Rng&) {}, c, cup(), data, 1);
    CHECK(d.records.empty());
  }
  SUBCASE("a teleporting policy always succeeds") {
    const EpisodeRunner teleport = [](rl::SkillEnv& env, Rng&) {
      sim::WorldState w = env.world();
      w.object(env.object_id()).pose.x = env.goal().x;
      w.object(env.object_id()).pose.y = env.goal().y;
      env.set_world(std::move(w));
    };
    const SkillDataset d = generate_dataset(teleport, c, cup(), data, 2);
    REQUIRE(d.records.size() == 24);
    for (const auto& r : d.records) {
      CHECK(r.success);
      CHECK(r.effects.size() == 3);
    }
  }
  SUBCASE("a null policy fails unless it starts at the goal") {
    const SkillDataset d = generate_dataset([](rl::SkillEnv&, Rng&) {}, c, cup(), data, 3);
    for (const auto& r : d.records) {
      const Vec2 start{r.x0[3], r.x0[4]};
      CHECK(r.success == rl::goal_reached(start, {r.goal[0], r.goal[1]}, c.weights.epsilon));
    }
  }
  SUBCASE("a policy for another skill is rejected") {
    const rl::GoalConditionedPolicy push(rl::SkillConfig::defaults(rl::SkillKind::EdgePush));
    CHECK_THROWS_AS(generate_dataset(push, c, cup(), data, 4), Error);
  }
}

TEST_CASE("dataset generation is reproducible and round trips") {
  const rl::SkillConfig c = rl::SkillConfig::defaults(rl::SkillKind::Retrieve);
  const rl::GoalConditionedPolicy zero(c);
  DatasetConfig data;
  data.num_pairs = 6;
  data.n = 2;
  const SkillDataset a = generate_dataset(zero, c, cup(), data, 5);
  data.threads = 1;
  const SkillDataset b = generate_dataset(zero, c, cup(), data, 5);
  CHECK(a == b);
  CHECK(dataset_from_jsonl(dataset_to_jsonl(a)) == a);
  CHECK_THROWS_AS(dataset_from_jsonl("{\"format\": \"x\"}\n"), Error);
  std::string text = dataset_to_jsonl(a);
  text.resize(text.size() - 40);
  CHECK_THROWS_AS(dataset_from_jsonl(text), Error);
}

TEST_CASE("binary cross-entropy values") {
  const std::vector<double> half{0.5};
  const std::vector<int> one{1};
  CHECK(bce_loss(half, one) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::fabs(bce_loss(half, one) - 0.6931471805599453) < 1e-9);

  const std::vector<double> close{1.0 - 1e-9};
  CHECK(bce_loss(close, one) < 1e-8);

  const std::vector<double> batch{0.9, 0.1};
  const std::vector<int> labels{1, 0};
  CHECK(std::fabs(bce_loss(batch, labels) - (-std::log(0.9))) < 1e-9);
  CHECK(std::fabs(bce_loss(batch, labels) - 0.10536051565782628) < 1e-9);

  const std::vector<double> exact{1.0, 0.0};
  CHECK(std::isfinite(bce_loss(exact, std::vector<int>{0, 1})));
  CHECK_THROWS_AS(bce_loss(batch, one), Error);
}

TEST_CASE("loss gradient matches finite differences") {
  Rng rng(8);
  for (int model = 0; model < 5; ++model) {
    nn::Architecture a;
    a.vector_inputs = 3;
    a.hidden = {4, 3};
    nn::Network net(a);
    net.init_random(rng);
    std::vector<Vector> x;
    std::vector<int> y;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 6; ++i) {
      x.push_back({u(rng), u(rng), u(rng)});
      y.push_back(i % 2);
    }
    std::vector<double> grad(net.parameter_count(), 0.0);
    bce_loss_and_gradient(net, x, y, grad);
    const std::vector<double> base(net.parameters().begin(), net.parameters().end());
    std::vector<double> scratch(grad.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto p = base;
      const double h = 1e-6;
      p[i] += h;
      net.set_parameters(p);
      const double up = bce_loss_and_gradient(net, x, y, scratch);
      p[i] -= 2 * h;
      net.set_parameters(p);
      const double down = bce_loss_and_gradient(net, x, y, scratch);
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::fabs(numeric), std::fabs(grad[i]), 1e-6});
      CHECK(std::fabs(numeric - grad[i]) / denom <= 1e-4);
    }
    net.set_parameters(base);
  }
}

TEST_CASE("discriminator learns the reach annulus") {
  std::vector<Vector> x;
  std::vector<int> y;
  annulus_set(21, 2500, x, y);
  const std::vector<Vector> train_x(x.begin(), x.begin() + 2000);
  const std::vector<int> train_y(y.begin(), y.begin() + 2000);
  const DiscriminatorFit fit = train_discriminator(train_x, train_y, FeatureKind::Vector, {}, 1);
  int correct = 0;
  for (std::size_t i = 2000; i < x.size(); ++i) correct += fit.model.discriminate(x[i]) == (y[i] == 1);
  CHECK(correct / 500.0 >= 0.9);
  CHECK(fit.epoch_loss.back() < fit.initial_loss);
  CHECK(fit.model.discriminate(Vector{0.45, 0.1}));
  CHECK_FALSE(fit.model.discriminate(Vector{0.95, 0.95}));
  CHECK_THROWS_AS(fit.model.classify(Vector{0.1}), Error);

  const DiscriminatorModel back = discriminator_from_json(discriminator_to_json(fit.model));
  CHECK(back == fit.model);
  CHECK(back.classify(x[0]) == fit.model.classify(x[0]));
}

TEST_CASE("single-class datasets warn and still fit") {
  QuietWarnings quiet;
  std::vector<Vector> x;
  std::vector<int> y;
  annulus_set(22, 200, x, y);
  std::fill(y.begin(), y.end(), 1);
  DiscriminatorTrainConfig config;
  config.epochs = 20;
  const DiscriminatorFit fit = train_discriminator(x, y, FeatureKind::Vector, config, 2);
  CHECK(quiet.seen.size() == 1);
  for (const auto& p : x) CHECK(fit.model.classify(p) >= 0.5);
}

TEST_CASE("the decision threshold is closed") {
  nn::Architecture a;
  a.vector_inputs = 2;
  a.hidden = {3};
  DiscriminatorModel m;
  m.network = nn::Network(a);
  m.input_offset = {0.0, 0.0};
  m.input_scale = {1.0, 1.0};
  CHECK(m.classify(Vector{0.3, 0.4}) == 0.5);
  CHECK(m.discriminate(Vector{0.3, 0.4}));
}

TEST_CASE("k-d tree agrees with a linear scan") {
  Rng rng(31);
  std::uniform_int_distribution<int> size(1, 512);
  std::uniform_int_distribution<int> dim(2, 8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = size(rng);
    const int d = dim(rng);
    std::vector<Vector> pts(static_cast<std::size_t>(n), Vector(static_cast<std::size_t>(d)));
    for (auto& p : pts) {
      for (double& v : p) v = trial % 3 == 0 ? std::round(u(rng) * 2.0) : u(rng);
    }
    const KdTree tree(pts);
    for (int q = 0; q < 10; ++q) {
      Vector query(static_cast<std::size_t>(d));
      for (double& v : query) v = u(rng);
      const std::size_t k = 1 + static_cast<std::size_t>(q * 3);
      CHECK(tree.nearest(query, k) == brute_force_nearest(pts, query, k));
    }
  }
}

TEST_CASE("sub-goal queries drop failures") {
  auto d = std::make_shared<SkillDataset>();
  d->skill = rl::SkillKind::Retrieve;
  d->n = 1;
  const auto rec = [](double x, bool s) {
    return EpisodeRecord{{0.45, -0.35, 0.0, x, 0.0, 0.0}, {0.5, 0.0}, {{0.5, 0.0, 0.0}}, s};
  };
  d->records = {rec(1.0, true), rec(1.1, false), rec(1.2, false), rec(0.9, true)};
  const SubgoalIndex index(d);

  const Vector exact{0.45, -0.35, 0.0, 1.0, 0.0, 0.0};
  const auto hit = index.query(exact, 1);
  REQUIRE(hit.size() == 1);
  CHECK(hit[0].record == 0);

  const Vector far{0.45, -0.35, 0.0, 1.15, 0.0, 0.0};
  CHECK(index.query(far, 2).empty());

  QuietWarnings quiet;
  CHECK(index.query(far, 10).size() == 2);
  CHECK(quiet.seen.size() == 1);
  CHECK_THROWS_AS(index.query(far, 0), Error);
}

TEST_CASE("image skills are indexed by object position") {
  const Vector x0{0.5, 0.1, 0.07, 0.0};
  CHECK(knn_key(rl::SkillKind::EdgePush, x0) == Vector{0.5, 0.1});
  CHECK(knn_key(rl::SkillKind::Retrieve, x0) == x0);
}

TEST_CASE("optimism counts satisfying effects") {
  const Substitution k = with_effects({0.5, 0.0}, {{0.1}, {0.2}, {0.3}, {0.9}}, 0);
  CHECK(optimism(k, [](const Vector& e) { return e[0] < 0.5; }) == 0.75);
  CHECK(optimism(k, [](const Vector&) { return true; }) == 1.0);

  const sim::ArmModel arm;
  const Substitution straddle = with_effects(
      {0.7, 0.0}, {{0.70, 0.0}, {0.74, 0.0}, {0.76, 0.0}, {0.80, 0.1}, {0.5, 0.5}}, 0);
  int oracle = 0;
  for (const auto& e : straddle.effects) oracle += sim::in_workspace(arm, Vec2{e[0], e[1]}) ? 1 : 0;
  const double eta = optimism(straddle, [&](const Vector& e) {
    return sim::in_workspace(arm, Vec2{e[0], e[1]});
  });
  CHECK(eta == oracle / 5.0);
  CHECK(oracle == 3);
}

TEST_CASE("best substitution maximizes optimism") {
  const auto score_of = [](const Vector& e) { return e[0] > 0.0; };
  const Vec2 here{0.0, 0.0};

  SUBCASE("single candidate") {
    const std::vector<Substitution> one{with_effects({0.5, 0.0}, {{1.0}, {-1.0}}, 0)};
    CHECK(best_substitution(one, score_of, here)->record == 0);
  }
  SUBCASE("argmax") {
    const std::vector<Substitution> two{
        with_effects({0.5, 0.0}, {{1}, {1}, {1}, {-1}, {-1}}, 0),
        with_effects({0.6, 0.0}, {{1}, {1}, {1}, {1}, {-1}}, 1)};
    CHECK(best_substitution(two, score_of, here)->record == 1);
  }
  SUBCASE("nothing certifiable") {
    const std::vector<Substitution> none{with_effects({0.5, 0.0}, {{-1}}, 0),
                                         with_effects({0.6, 0.0}, {{-1}}, 1)};
    CHECK_FALSE(best_substitution(none, score_of, here).has_value());
    CHECK_FALSE(best_substitution(std::vector<Substitution>{}, score_of, here).has_value());
  }
  SUBCASE("ties go to the closer goal, then to dataset order") {
    const std::vector<Substitution> tied{with_effects({0.6, 0.0}, {{1}}, 0),
                                         with_effects({0.4, 0.0}, {{1}}, 1),
                                         with_effects({-0.4, 0.0}, {{1}}, 2)};
    CHECK(best_substitution(tied, score_of, here)->record == 1);
  }
  SUBCASE("invariant under increasing transforms of the scores") {
    Rng rng(41);
    std::uniform_int_distribution<int> count(0, 4);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Substitution> c;
      std::vector<double> s;
      for (std::size_t i = 0; i < 6; ++i) {
        c.push_back(with_effects({0.1 * static_cast<double>(i % 3), 0.0}, {{1}}, i));
        s.push_back(count(rng) / 4.0);
      }
      std::vector<double> cubed;
      std::vector<double> scaled;
      for (double v : s) {
        cubed.push_back(v * v * v);
        scaled.push_back(std::expm1(3.0 * v));
      }
      const auto base = best_index(c, s, here);
      CHECK(best_index(c, cubed, here) == base);
      CHECK(best_index(c, scaled, here) == base);
    }
  }
}
