#pragma once

// Goal-conditioned skills: environments for Retrieve (bar sweeps) and
// EdgePush (planar pushes), rewards, rollouts and a cross-entropy-method
// policy search under per-episode domain randomization.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillplan/nn.hpp"
#include "skillplan/sim.hpp"

namespace skillplan::rl {

enum class SkillKind { Retrieve, EdgePush };

const char* skill_name(SkillKind kind);
SkillKind parse_skill(std::string_view name);

struct RewardWeights {
  double k = 1.0;   // Retrieve
  double k1 = 1.0;  // EdgePush: goal reached
  double k2 = 1.0;  // EdgePush: graspable
  double k3 = 2.0;  // EdgePush: fell off the table
  double epsilon = 0.03;
};

/// Closed tolerance: ||pos - goal|| <= epsilon.
bool goal_reached(Vec2 position, Vec2 goal, double epsilon);

double reward_retrieve(Vec2 object_position, Vec2 goal, const RewardWeights& w);
double reward_edgepush(const sim::WorldState& world, std::string_view object_id, Vec2 goal,
                       const RewardWeights& w, int grasp_samples);

struct SkillConfig {
  SkillKind kind = SkillKind::Retrieve;
  int max_steps = 20;
  RewardWeights weights;
  sim::RandomizationBounds bounds;
  int grasp_samples = 16;
  int resolution = 32;        // EdgePush observation grid
  double bar_step = 0.12;     // Retrieve: max bar translation per step
  double bar_turn = 0.6;      // Retrieve: max bar rotation per step
  double push_max = 0.15;     // EdgePush: max push distance per step
  sim::Region start_region;   // where skill objects start
  sim::Region goal_region;    // where sub-goals are drawn
  sim::Region data_region;    // initial states for dataset generation (wider than training)

  static SkillConfig defaults(SkillKind kind);
};

/// Environment state of one skill episode.
class SkillEnv {
 public:
  SkillEnv(SkillConfig config, sim::WorldState world, std::string object_id, Vec2 goal);

  const SkillConfig& config() const { return config_; }
  const sim::WorldState& world() const { return world_; }
  const std::string& object_id() const { return object_; }
  Vec2 goal() const { return goal_; }
  Vec2 object_position() const;
  /// Replaces the world (mock controllers, replay).
  void set_world(sim::WorldState world);

  /// x: Retrieve [bar x, y, yaw, object x, y, yaw]; EdgePush [x, y, half_extent, shape].
  std::vector<double> state() const;
  /// Policy input built from the state and the goal.
  std::vector<double> features() const;
  static int feature_size(const SkillConfig& config);
  /// Retrieve: bar translation (2) and turn; EdgePush: push angle relative
  /// to the goal direction and push distance.
  static int action_size(SkillKind kind) { return kind == SkillKind::Retrieve ? 3 : 2; }

  /// Applies one raw policy output; motions are squashed into the action bounds.
  void step(std::span<const double> raw_action, Rng& rng);
  /// Post-episode cleanup (Retrieve lifts the bar back home).
  void finish();

  bool reached() const;
  bool fell() const;
  double reward() const;

 private:
  SkillConfig config_;
  sim::WorldState world_;
  std::string object_;
  Vec2 goal_;
};

/// Image + goal features for the EdgePush skill computed from an x vector
/// [x, y, half_extent, shape] alone (used to train state discriminators).
std::vector<double> edgepush_image(std::span<const double> x0, int resolution);

/// World for a training or data-generation episode. With `fixed` set, the
/// object's shape and size are kept and only friction and edge noise vary.
struct EpisodeStart {
  sim::WorldState world;
  std::string object_id;
  Vec2 goal;
};
EpisodeStart sample_episode_start(const SkillConfig& config, Rng& rng,
                                  const sim::RigidObject* fixed = nullptr);
/// Sub-goal drawn uniformly from the goal region, rejecting invalid goals.
Vec2 sample_goal(const SkillConfig& config, Rng& rng);
/// Places the skill object at a given start with a given goal.
EpisodeStart make_episode_start(const SkillConfig& config, const sim::RigidObject& object,
                                Vec2 goal, Rng& rng);

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::vector<double> act(const SkillEnv& env) const = 0;
};

class GoalConditionedPolicy : public Controller {
 public:
  GoalConditionedPolicy() = default;
  explicit GoalConditionedPolicy(const SkillConfig& config);
  GoalConditionedPolicy(SkillKind kind, nn::Network net);

  static nn::Architecture architecture(const SkillConfig& config);

  SkillKind kind() const { return kind_; }
  const nn::Network& network() const { return net_; }
  nn::Network& network() { return net_; }

  std::vector<double> act(const SkillEnv& env) const override;
  bool operator==(const GoalConditionedPolicy& o) const {
    return kind_ == o.kind_ && net_ == o.net_;
  }

 private:
  SkillKind kind_ = SkillKind::Retrieve;
  nn::Network net_;
};

/// Settings that change skill dynamics or observations (not the regions).
nlohmann::json skill_config_to_json(const SkillConfig& config);
SkillConfig skill_config_from_json(const nlohmann::json& j);

nlohmann::json policy_to_json(const GoalConditionedPolicy& policy, const SkillConfig& config);
GoalConditionedPolicy policy_from_json(const nlohmann::json& j, SkillConfig* config = nullptr);

struct Episode {
  std::vector<double> x0;
  std::vector<double> xg;
  std::vector<std::vector<double>> actions;
  std::vector<double> final_state;
  Vec2 final_position;
  double ret = 0.0;
  bool success = false;
  bool fell = false;
  int steps = 0;
};

using StepObserver = std::function<void(const SkillEnv&)>;

/// Runs the controller until the goal is reached, the object falls or
/// `max_steps` elapse. Throws InvalidInitialState if the object starts off-table.
/// `observe` sees the environment after every step.
Episode rollout(const Controller& controller, SkillEnv& env, int max_steps, Rng& rng,
                const StepObserver& observe = {});

struct SearchConfig {
  int iterations = 50;
  int population = 64;
  int elites = 8;
  int episodes_per_candidate = 32;
  int eval_episodes = 50;
  double init_std = 0.3;
  double min_std = 0.02;
  double std_decay = 0.85;  // multiplies the floor added to the elite spread
  int threads = 0;          // 0: hardware concurrency

  /// Per-skill defaults: pushes are sensitive to the direction output, so
  /// EdgePush starts from a narrower search distribution.
  static SearchConfig defaults(SkillKind kind);
};

struct TrainingLogRow {
  int iteration = 0;
  double mean_return = 0.0;
  double max_return = 0.0;
  double success_rate = 0.0;
};

struct Evaluation {
  double mean_return = 0.0;
  double success_rate = 0.0;
};

struct TrainingResult {
  GoalConditionedPolicy policy;
  std::vector<TrainingLogRow> log;
  Evaluation initial;
  Evaluation final;
};

/// Cross-entropy method over the flat parameter vector, starting from the
/// zero policy. Candidates of one iteration share their episode seeds.
TrainingResult train_policy(const SkillConfig& config, const SearchConfig& search,
                            std::uint64_t seed);

Evaluation evaluate_policy(const Controller& controller, const SkillConfig& config, int episodes,
                           std::uint64_t seed);

std::string training_log_csv(const std::vector<TrainingLogRow>& log);

}  // namespace skillplan::rl
