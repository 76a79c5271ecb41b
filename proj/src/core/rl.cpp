#include "skillplan/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace skillplan::rl {

const char* skill_name(SkillKind kind) {
  return kind == SkillKind::Retrieve ? "retrieve" : "edgepush";
}

SkillKind parse_skill(std::string_view name) {
  if (name == "retrieve") return SkillKind::Retrieve;
  if (name == "edgepush" || name == "edge-push" || name == "edge_push") return SkillKind::EdgePush;
  throw Error(ErrorCode::InvalidArgument, "unknown skill '" + std::string(name) + "'");
}

bool goal_reached(Vec2 position, Vec2 goal, double epsilon) {
  return (position - goal).norm() <= epsilon;
}

double reward_retrieve(Vec2 object_position, Vec2 goal, const RewardWeights& w) {
  return goal_reached(object_position, goal, w.epsilon) ? w.k : 0.0;
}

double reward_edgepush(const sim::WorldState& world, std::string_view object_id, Vec2 goal,
                       const RewardWeights& w, int grasp_samples) {
  const sim::RigidObject& obj = world.object(object_id);
  const double reached = goal_reached(obj.pose.position(), goal, w.epsilon) ? 1.0 : 0.0;
  const double graspable = sim::check_graspable(world, object_id, grasp_samples) ? 1.0 : 0.0;
  const double off_table = obj.on_table() ? 0.0 : 1.0;
  return w.k1 * reached + w.k2 * graspable - w.k3 * off_table;
}

SkillConfig SkillConfig::defaults(SkillKind kind) {
  SkillConfig c;
  c.kind = kind;
  if (kind == SkillKind::Retrieve) {
    c.start_region = {0.8, 1.2, -0.35, 0.35};
    c.goal_region = {0.35, 0.65, -0.3, 0.3};
    c.data_region = {0.3, 1.25, -0.4, 0.4};
  } else {
    c.start_region = {0.35, 0.62, -0.3, 0.3};
    c.goal_region = {0.27, 0.65, -0.4, 0.4};
    c.data_region = {0.3, 0.95, -0.38, 0.38};
  }
  return c;
}

// ------------------------------------------------------------------- env

namespace {

constexpr double kFeatureScale = 0.2;

struct Frame {
  Vec2 e;  // object toward goal
  Vec2 n;
  double distance;
  double side = 1.0;  // -1 when the lateral axis was mirrored
};

Frame goal_frame(Vec2 object, Vec2 goal) {
  const Vec2 d = goal - object;
  const double len = d.norm();
  const Vec2 e = len > 1e-9 ? d * (1.0 / len) : Vec2{1.0, 0.0};
  return {e, e.perp(), len};
}

// Goal frame whose lateral axis points toward the bar, so the Retrieve
// policy only ever sees the bar on one side of the object-goal line.
Frame mirrored_frame(Vec2 object, Vec2 goal, Vec2 bar) {
  Frame f = goal_frame(object, goal);
  if ((bar - object).dot(f.n) < 0.0) {
    f.n = f.n * -1.0;
    f.side = -1.0;
  }
  return f;
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec2 uniform_in(const sim::Region& r, Rng& rng) {
  return {uniform(rng, r.x_min, r.x_max), uniform(rng, r.y_min, r.y_max)};
}

}  // namespace

SkillEnv::SkillEnv(SkillConfig config, sim::WorldState world, std::string object_id, Vec2 goal)
    : config_(std::move(config)), world_(std::move(world)), object_(std::move(object_id)), goal_(goal) {
  if (!world_.has_object(object_)) {
    throw Error(ErrorCode::InvalidArgument, "skill object '" + object_ + "' not in world");
  }
}

Vec2 SkillEnv::object_position() const { return world_.object(object_).pose.position(); }

void SkillEnv::set_world(sim::WorldState world) {
  if (!world.has_object(object_)) {
    throw Error(ErrorCode::InvalidArgument, "skill object '" + object_ + "' not in world");
  }
  world_ = std::move(world);
}

std::vector<double> SkillEnv::state() const {
  const sim::RigidObject& o = world_.object(object_);
  if (config_.kind == SkillKind::Retrieve) {
    const sim::Pose2& b = world_.bar.pose;
    return {b.x, b.y, b.yaw, o.pose.x, o.pose.y, o.pose.yaw};
  }
  return {o.pose.x, o.pose.y, o.half_extent, o.shape == sim::Shape::Box ? 1.0 : 0.0};
}

int SkillEnv::feature_size(const SkillConfig& config) {
  if (config.kind == SkillKind::Retrieve) return 6;
  return config.resolution * config.resolution + 2;
}

std::vector<double> SkillEnv::features() const {
  const sim::RigidObject& o = world_.object(object_);
  const Vec2 p = o.pose.position();
  if (config_.kind == SkillKind::Retrieve) {
    const Frame f = mirrored_frame(p, goal_, world_.bar.pose.position());
    const sim::Pose2& b = world_.bar.pose;
    const Vec2 rel = b.position() - p;
    const double twist = 2.0 * f.side * (b.yaw - std::atan2(f.e.y, f.e.x));
    return {rel.dot(f.e) / kFeatureScale, rel.dot(f.n) / kFeatureScale,
            std::cos(twist),              std::sin(twist),
            f.distance / kFeatureScale,   o.half_extent / 0.05};
  }
  const std::string table = o.on_table() ? o.table : world_.tables.front().id;
  std::vector<double> out =
      sim::render_depth(world_, table, config_.resolution, p, world_.params.render_window).features();
  const Vec2 rel = goal_ - p;
  out.push_back(rel.x / kFeatureScale);
  out.push_back(rel.y / kFeatureScale);
  return out;
}

void SkillEnv::step(std::span<const double> raw, Rng& rng) {
  if (raw.size() != static_cast<std::size_t>(action_size(config_.kind))) {
    throw Error(ErrorCode::DimensionMismatch, std::string(skill_name(config_.kind)) +
                                                  " actions have " +
                                                  std::to_string(action_size(config_.kind)) +
                                                  " entries");
  }
  for (double v : raw) {
    if (!std::isfinite(v)) throw Error(ErrorCode::Diverged, "non-finite action");
  }
  sim::RigidObject& o = world_.object(object_);
  if (!o.on_table()) return;
  if (config_.kind == SkillKind::Retrieve) {
    const Frame f = mirrored_frame(o.pose.position(), goal_, world_.bar.pose.position());
    Vec2 v{config_.bar_step * std::tanh(raw[0]), config_.bar_step * std::tanh(raw[1])};
    const double len = v.norm();
    if (len > config_.bar_step) v = v * (config_.bar_step / len);
    const Vec2 delta = f.e * v.x + f.n * v.y;
    const sim::Pose2& b = world_.bar.pose;
    const sim::Region& region = world_.sweep_region;
    // The bar is symmetric, so turn to the nearest equivalent orientation.
    double turn = normalize_angle(std::atan2(f.n.y, f.n.x) +
                                  f.side * config_.bar_turn * std::tanh(raw[2]) - b.yaw);
    if (turn > kPi / 2) turn -= kPi;
    if (turn < -kPi / 2) turn += kPi;
    sim::Pose2 target{std::clamp(b.x + delta.x, region.x_min, region.x_max),
                      std::clamp(b.y + delta.y, region.y_min, region.y_max),
                      normalize_angle(b.yaw + turn)};
    world_ = sim::step_bar_motion(world_, target, rng);
    return;
  }
  const double distance = config_.push_max * std::max(0.0, std::tanh(raw[1]));
  if (distance <= 0.0) return;
  // Push direction relative to the object-to-goal direction.
  const Frame f = goal_frame(o.pose.position(), goal_);
  const double angle = normalize_angle(std::atan2(f.e.y, f.e.x) +
                                       kPi * std::tanh(raw[0]));
  try {
    world_ = sim::step_push(world_, object_, angle, distance, rng);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Unreachable) throw;
  }
}

void SkillEnv::finish() {
  if (config_.kind == SkillKind::Retrieve) world_ = sim::lift_bar_to(world_, world_.bar.home);
}

bool SkillEnv::fell() const { return !world_.object(object_).on_table(); }

bool SkillEnv::reached() const {
  return !fell() && goal_reached(object_position(), goal_, config_.weights.epsilon);
}

double SkillEnv::reward() const {
  if (config_.kind == SkillKind::Retrieve) {
    return fell() ? 0.0 : reward_retrieve(object_position(), goal_, config_.weights);
  }
  return reward_edgepush(world_, object_, goal_, config_.weights, config_.grasp_samples);
}

std::vector<double> edgepush_image(std::span<const double> x0, int resolution) {
  if (x0.size() != 4) throw Error(ErrorCode::DimensionMismatch, "EdgePush state has 4 entries");
  sim::WorldState w = sim::make_tabletop();
  sim::RigidObject o;
  o.id = "object";
  o.shape = x0[3] > 0.5 ? sim::Shape::Box : sim::Shape::Cylinder;
  o.half_extent = x0[2];
  o.pose = {x0[0], x0[1], 0.0};
  o.table = "table_a";
  w.objects.push_back(o);
  return sim::render_depth(w, "table_a", resolution, o.pose.position(), w.params.render_window)
      .features();
}

// ------------------------------------------------------------ episode starts

namespace {

void apply_edge_noise(sim::WorldState& w, Vec2 near, double noise) {
  if (noise == 0.0) return;
  sim::Table& t = w.tables.front();
  sim::perturb_edge(t, sim::nearest_edge(t, near).index, noise);
}

bool valid_goal(const SkillConfig& c, const sim::WorldState& w, Vec2 g) {
  if (!w.tables.front().contains(g)) return false;
  if (c.kind == SkillKind::EdgePush) {
    const double r = g.norm();
    return r >= 0.3 && r <= 0.65;
  }
  return sim::in_workspace(w.arm, g);
}

}  // namespace

EpisodeStart make_episode_start(const SkillConfig& config, const sim::RigidObject& object,
                                Vec2 goal, Rng& rng) {
  const sim::DomainDraw draw = sim::randomize_domain(config.bounds, rng);
  EpisodeStart s;
  s.world = sim::make_tabletop();
  apply_edge_noise(s.world, goal, draw.edge_noise);
  sim::RigidObject o = object;
  o.friction = draw.friction;
  o.table = s.world.tables.front().id;
  if (!s.world.tables.front().contains(o.pose.position())) o.table.clear();
  s.object_id = o.id;
  s.world.objects.push_back(o);
  s.goal = goal;
  return s;
}

EpisodeStart sample_episode_start(const SkillConfig& config, Rng& rng,
                                  const sim::RigidObject* fixed) {
  sim::RigidObject o;
  if (fixed != nullptr) {
    o = *fixed;
  } else {
    const sim::DomainDraw shape = sim::randomize_domain(config.bounds, rng);
    o.id = config.kind == SkillKind::Retrieve ? "cup" : "plate";
    o.shape = shape.shape;
    o.half_extent = shape.half_extent;
    o.pose.yaw = o.shape == sim::Shape::Box ? normalize_angle(uniform(rng, -kPi, kPi)) : 0.0;
  }
  Vec2 start = uniform_in(config.start_region, rng);
  for (int tries = 0; tries < 100 && config.kind == SkillKind::EdgePush && start.norm() > 0.62;
       ++tries) {
    start = uniform_in(config.start_region, rng);
  }
  o.pose.x = start.x;
  o.pose.y = start.y;
  const Vec2 goal = sample_goal(config, rng);
  return make_episode_start(config, o, goal, rng);
}

Vec2 sample_goal(const SkillConfig& config, Rng& rng) {
  const sim::WorldState nominal = sim::make_tabletop();
  Vec2 goal = uniform_in(config.goal_region, rng);
  for (int tries = 0; tries < 100 && !valid_goal(config, nominal, goal); ++tries) {
    goal = uniform_in(config.goal_region, rng);
  }
  return goal;
}

// ---------------------------------------------------------------- policies

nn::Architecture GoalConditionedPolicy::architecture(const SkillConfig& config) {
  nn::Architecture a;
  a.hidden = {32, 32};
  a.outputs = SkillEnv::action_size(config.kind);
  if (config.kind == SkillKind::Retrieve) {
    a.vector_inputs = SkillEnv::feature_size(config);
  } else {
    a.image_channels = 1;
    a.image_height = config.resolution;
    a.image_width = config.resolution;
    a.conv = {{4, 5, 2, 2}, {8, 3, 2, 1}};
    a.vector_inputs = 2;
  }
  return a;
}

GoalConditionedPolicy::GoalConditionedPolicy(const SkillConfig& config)
    : kind_(config.kind), net_(architecture(config)) {}

GoalConditionedPolicy::GoalConditionedPolicy(SkillKind kind, nn::Network net)
    : kind_(kind), net_(std::move(net)) {}

std::vector<double> GoalConditionedPolicy::act(const SkillEnv& env) const {
  if (env.config().kind != kind_) {
    throw Error(ErrorCode::DimensionMismatch, "policy and environment belong to different skills");
  }
  return net_.forward(env.features());
}

nlohmann::json skill_config_to_json(const SkillConfig& c) {
  return {{"skill", skill_name(c.kind)},     {"max_steps", c.max_steps},
          {"epsilon", c.weights.epsilon},    {"resolution", c.resolution},
          {"bar_step", c.bar_step},          {"bar_turn", c.bar_turn},
          {"push_max", c.push_max}};
}

SkillConfig skill_config_from_json(const nlohmann::json& j) {
  SkillConfig c = SkillConfig::defaults(parse_skill(j.at("skill").get<std::string>()));
  c.max_steps = j.at("max_steps").get<int>();
  c.weights.epsilon = j.at("epsilon").get<double>();
  c.resolution = j.at("resolution").get<int>();
  c.bar_step = j.at("bar_step").get<double>();
  c.bar_turn = j.at("bar_turn").get<double>();
  c.push_max = j.at("push_max").get<double>();
  return c;
}

nlohmann::json policy_to_json(const GoalConditionedPolicy& policy, const SkillConfig& c) {
  nlohmann::json j = skill_config_to_json(c);
  j["skill"] = skill_name(policy.kind());
  j["format"] = "skillplan-policy";
  j["version"] = 1;
  j["network"] = nn::network_to_json(policy.network());
  return j;
}

GoalConditionedPolicy policy_from_json(const nlohmann::json& j, SkillConfig* config) {
  if (j.value("format", "") != "skillplan-policy" || j.value("version", 0) != 1) {
    throw Error(ErrorCode::Parse, "not a policy checkpoint");
  }
  const SkillKind kind = parse_skill(j.at("skill").get<std::string>());
  if (config != nullptr) *config = skill_config_from_json(j);
  return GoalConditionedPolicy(kind, nn::network_from_json(j.at("network")));
}

// ----------------------------------------------------------------- rollouts

Episode rollout(const Controller& controller, SkillEnv& env, int max_steps, Rng& rng,
                const StepObserver& observe) {
  if (env.fell()) {
    throw Error(ErrorCode::InvalidInitialState,
                "object '" + env.object_id() + "' is not on a table at the episode start");
  }
  Episode ep;
  ep.x0 = env.state();
  ep.xg = {env.goal().x, env.goal().y};
  while (!env.reached() && !env.fell() && ep.steps < max_steps) {
    std::vector<double> a = controller.act(env);
    env.step(a, rng);
    ep.actions.push_back(std::move(a));
    ++ep.steps;
    if (observe) observe(env);
  }
  env.finish();
  ep.final_state = env.state();
  ep.final_position = env.object_position();
  ep.ret = env.reward();
  ep.success = env.reached();
  ep.fell = env.fell();
  return ep;
}

// ---------------------------------------------------------------- training

namespace {

// Potential over the last stepped state (before the bar is put away); its
// difference to the start potential is added to the return when ranking
// candidates.
double potential(const SkillEnv& env) {
  const sim::RigidObject& o = env.world().object(env.object_id());
  const Vec2 p = o.pose.position();
  const double to_goal = (p - env.goal()).norm();
  if (env.config().kind == SkillKind::EdgePush) return -3.0 * to_goal;
  const Frame f = goal_frame(p, env.goal());
  const double back = o.support(f.e * -1.0) + env.world().bar.half_thickness + 0.02;
  const Vec2 behind = p - f.e * back;
  return -2.0 * to_goal - (env.world().bar.pose.position() - behind).norm();
}

struct Scored {
  double ret = 0.0;
  double shaped = 0.0;
  bool success = false;
};

Scored run_scored(const Controller& c, const SkillConfig& config, std::uint64_t episode_seed) {
  Rng rng(episode_seed);
  EpisodeStart start = sample_episode_start(config, rng);
  SkillEnv env(config, std::move(start.world), start.object_id, start.goal);
  const double phi0 = potential(env);
  double phi = phi0;
  Rng dynamics(mix_seed(episode_seed));
  const Episode ep = rollout(c, env, config.max_steps, dynamics, [&](const SkillEnv& e) {
    phi = potential(e);
  });
  if (!std::isfinite(ep.ret)) throw Error(ErrorCode::Diverged, "non-finite episode return");
  Scored s;
  s.ret = ep.ret;
  s.success = ep.success;
  s.shaped = ep.ret + phi - phi0;
  return s;
}

}  // namespace

Evaluation evaluate_policy(const Controller& controller, const SkillConfig& config, int episodes,
                           std::uint64_t seed) {
  Evaluation e;
  if (episodes <= 0) return e;
  std::vector<Scored> results(static_cast<std::size_t>(episodes));
  parallel_for(results.size(), 0, [&](std::size_t i) {
    results[i] = run_scored(controller, config, derive_seed(seed, 0xe7a1, i));
  });
  for (const auto& r : results) {
    e.mean_return += r.ret;
    e.success_rate += r.success ? 1.0 : 0.0;
  }
  e.mean_return /= episodes;
  e.success_rate /= episodes;
  return e;
}

SearchConfig SearchConfig::defaults(SkillKind kind) {
  SearchConfig s;
  // Retrieve is still improving at 50 iterations.
  if (kind == SkillKind::Retrieve) s.iterations = 100;
  if (kind == SkillKind::EdgePush) {
    s.init_std = 0.1;
    s.episodes_per_candidate = 8;
  }
  return s;
}

TrainingResult train_policy(const SkillConfig& config, const SearchConfig& search,
                            std::uint64_t seed) {
  if (search.population <= 0 || search.elites <= 0 || search.elites > search.population ||
      search.episodes_per_candidate <= 0 || search.iterations < 0 || !(search.init_std > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid search configuration");
  }
  TrainingResult result;
  result.policy = GoalConditionedPolicy(config);
  const std::uint64_t eval_seed = derive_seed(seed, 0xe7a1);
  result.initial = evaluate_policy(result.policy, config, search.eval_episodes, eval_seed);
  if (search.iterations == 0) {
    result.final = result.initial;
    return result;
  }

  const std::size_t dim = result.policy.network().parameter_count();
  std::vector<double> mean(dim, 0.0);
  std::vector<double> stddev(dim, search.init_std);
  const auto pop = static_cast<std::size_t>(search.population);
  const auto episodes = static_cast<std::size_t>(search.episodes_per_candidate);

  for (int it = 0; it < search.iterations; ++it) {
    std::vector<std::vector<double>> candidates(pop, std::vector<double>(dim));
    for (std::size_t i = 0; i < pop; ++i) {
      Rng rng(derive_seed(seed, 1 + static_cast<std::uint64_t>(it), 0x10000 + i));
      std::normal_distribution<double> n(0.0, 1.0);
      for (std::size_t d = 0; d < dim; ++d) candidates[i][d] = mean[d] + stddev[d] * n(rng);
    }
    std::vector<Scored> scores(pop * episodes);
    parallel_for(pop * episodes, search.threads, [&](std::size_t job) {
      const std::size_t i = job / episodes;
      const std::size_t e = job % episodes;
      GoalConditionedPolicy candidate = result.policy;
      candidate.network().set_parameters(candidates[i]);
      scores[job] = run_scored(candidate, config,
                               derive_seed(seed, 1 + static_cast<std::uint64_t>(it), e));
    });

    std::vector<double> fitness(pop, 0.0);
    std::vector<double> returns(pop, 0.0);
    double successes = 0.0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      fitness[j / episodes] += scores[j].shaped / static_cast<double>(episodes);
      returns[j / episodes] += scores[j].ret / static_cast<double>(episodes);
      successes += scores[j].success ? 1.0 : 0.0;
    }
    std::vector<std::size_t> order(pop);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fitness[a] > fitness[b]; });

    const auto elites = static_cast<std::size_t>(search.elites);
    const double floor =
        std::max(search.min_std, search.init_std * std::pow(search.std_decay, it + 1));
    for (std::size_t d = 0; d < dim; ++d) {
      double m = 0.0;
      for (std::size_t k = 0; k < elites; ++k) m += candidates[order[k]][d];
      m /= static_cast<double>(elites);
      double v = 0.0;
      for (std::size_t k = 0; k < elites; ++k) {
        const double diff = candidates[order[k]][d] - m;
        v += diff * diff;
      }
      v /= static_cast<double>(elites);
      mean[d] = m;
      stddev[d] = std::sqrt(v + floor * floor);
    }
    for (double m : mean) {
      if (!std::isfinite(m)) throw Error(ErrorCode::Diverged, "policy parameters diverged");
    }

    TrainingLogRow row;
    row.iteration = it + 1;
    row.mean_return = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(pop);
    row.max_return = *std::max_element(returns.begin(), returns.end());
    row.success_rate = successes / static_cast<double>(scores.size());
    result.log.push_back(row);
  }

  result.policy.network().set_parameters(mean);
  result.final = evaluate_policy(result.policy, config, search.eval_episodes, eval_seed);
  return result;
}

std::string training_log_csv(const std::vector<TrainingLogRow>& log) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,mean_return,max_return,success_rate\n";
  for (const auto& r : log) {
    out << r.iteration << ',' << r.mean_return << ',' << r.max_return << ',' << r.success_rate
        << '\n';
  }
  return out.str();
}

}  // namespace skillplan::rl
