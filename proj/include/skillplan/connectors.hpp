#pragma once

// Data-driven connectors between a learned skill and the symbolic planner:
// rollout datasets, a state discriminator certifying where the policy works,
// and a k-NN sub-goal generator scored by optimism.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillplan/nn.hpp"
#include "skillplan/rl.hpp"
#include "skillplan/sim.hpp"

namespace skillplan::connectors {

using Vector = std::vector<double>;

/// One initial state / sub-goal pair with the effects of `n` rollouts.
/// Effects are final object poses [x, y, yaw]; `success` labels the first.
struct EpisodeRecord {
  Vector x0;
  Vector goal;
  std::vector<Vector> effects;
  bool success = false;
  bool operator==(const EpisodeRecord&) const = default;
};

struct SkillDataset {
  rl::SkillKind skill = rl::SkillKind::Retrieve;
  double epsilon = 0.03;
  int n = 0;
  std::uint64_t seed = 0;
  sim::RigidObject object;  // the manipulated object (shape and size fixed)
  std::vector<EpisodeRecord> records;
  bool operator==(const SkillDataset&) const = default;
};

/// Line-delimited JSON: a header line then one record per line.
std::string dataset_to_jsonl(const SkillDataset& dataset);
SkillDataset dataset_from_jsonl(const std::string& text);

struct DatasetConfig {
  int num_pairs = 2000;
  int n = 5;
  int threads = 0;
};

/// Drives a freshly reset skill environment to its final state.
using EpisodeRunner = std::function<void(rl::SkillEnv& env, Rng& rng)>;

/// Samples `num_pairs` (x0, goal) pairs, x0 uniform in the skill's data
/// region and goals from its goal region, and runs `n` rollouts per pair
/// under fresh domain draws. Labels use the training goal test.
SkillDataset generate_dataset(const EpisodeRunner& run, const rl::SkillConfig& config,
                              const sim::RigidObject& object, const DatasetConfig& data,
                              std::uint64_t seed);
/// Same with a policy; throws DimensionMismatch if it was built for another skill.
SkillDataset generate_dataset(const rl::GoalConditionedPolicy& policy,
                              const rl::SkillConfig& config, const sim::RigidObject& object,
                              const DatasetConfig& data, std::uint64_t seed);

// ------------------------------------------------------------ discriminator

/// Mean negated binary cross-entropy; predictions are clamped into
/// [1e-12, 1 - 1e-12]. Throws InvalidArgument on a length mismatch.
double bce_loss(std::span<const double> predictions, std::span<const int> labels);

/// Mean negated BCE of sigmoid(net(x)) and its gradient with respect to the
/// network parameters (added into `grad`, which must be sized to match).
double bce_loss_and_gradient(const nn::Network& net, std::span<const Vector> inputs,
                             std::span<const int> labels, std::span<double> grad);

enum class FeatureKind { Vector, EdgePushImage };

struct DiscriminatorModel {
  FeatureKind features = FeatureKind::Vector;
  int resolution = 32;     // image features
  Vector input_offset;     // vector features are standardized: (x - offset) * scale
  Vector input_scale;
  nn::Network network;     // outputs a logit
  double threshold = 0.5;

  /// Network input for an initial state x0.
  Vector featurize(std::span<const double> x0) const;
  /// Pr(s = 1 | x0). Throws DimensionMismatch on a wrong-sized x0.
  double classify(std::span<const double> x0) const;
  /// classify(x0) >= threshold.
  bool discriminate(std::span<const double> x0) const;

  bool operator==(const DiscriminatorModel&) const = default;
};

nlohmann::json discriminator_to_json(const DiscriminatorModel& model);
DiscriminatorModel discriminator_from_json(const nlohmann::json& j);

struct DiscriminatorTrainConfig {
  double learning_rate = 1e-2;
  int epochs = 200;
  int batch_size = 32;
  std::vector<int> hidden{32, 32};
  int resolution = 32;
};

struct DiscriminatorFit {
  DiscriminatorModel model;
  std::vector<double> epoch_loss;  // mean training loss after each epoch
  double initial_loss = 0.0;
};

/// Plain mini-batch gradient descent on the mean negated BCE. A single-class
/// dataset triggers a warning and is fitted anyway.
DiscriminatorFit train_discriminator(std::span<const Vector> x0, std::span<const int> labels,
                                     FeatureKind features,
                                     const DiscriminatorTrainConfig& config, std::uint64_t seed);
DiscriminatorFit train_discriminator(const SkillDataset& dataset,
                                     const DiscriminatorTrainConfig& config, std::uint64_t seed);

FeatureKind feature_kind(rl::SkillKind skill);

// -------------------------------------------------------------------- k-NN

/// Exact k-d tree over points of equal dimension. Neighbours are ordered by
/// distance, ties broken by insertion index.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vector> points);

  std::size_t size() const { return points_.size(); }
  std::size_t dimension() const { return points_.empty() ? 0 : points_.front().size(); }
  const Vector& point(std::size_t i) const { return points_[i]; }

  std::vector<std::size_t> nearest(std::span<const double> query, std::size_t k) const;

 private:
  struct Node {
    std::size_t point = 0;
    int axis = 0;
    int left = -1;
    int right = -1;
  };
  int build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth);

  std::vector<Vector> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Linear-scan reference with the same ordering as KdTree::nearest.
std::vector<std::size_t> brute_force_nearest(std::span<const Vector> points,
                                             std::span<const double> query, std::size_t k);

/// Candidate grounding of a skill's sub-goal with its empirical effects.
struct Substitution {
  Vector goal;
  std::vector<Vector> effects;
  std::size_t record = 0;  // dataset order
  bool operator==(const Substitution&) const = default;
};

/// Key of a dataset state: the full x0 for vector skills, the object position
/// for image skills.
Vector knn_key(rl::SkillKind skill, std::span<const double> x0);

class SubgoalIndex {
 public:
  SubgoalIndex() = default;
  explicit SubgoalIndex(std::shared_ptr<const SkillDataset> dataset);

  const SkillDataset& dataset() const { return *dataset_; }
  std::size_t size() const { return tree_.size(); }

  /// k nearest records to x0 with failures dropped. k larger than the index
  /// returns every record and warns; an empty index throws InvalidArgument.
  std::vector<Substitution> query(std::span<const double> x0, std::size_t k) const;

 private:
  std::shared_ptr<const SkillDataset> dataset_;
  KdTree tree_;
};

using EffectPredicate = std::function<bool(const Vector& effect)>;

/// Fraction of effect states satisfying the predicate (0 when there are none).
double optimism(const Substitution& candidate, const EffectPredicate& predicate);

/// Highest-optimism candidate; ties go to the goal closest to `position`,
/// then to the earlier record. None if the list is empty or every score is 0.
std::optional<Substitution> best_substitution(std::span<const Substitution> candidates,
                                              const EffectPredicate& predicate, Vec2 position);
/// Same over precomputed scores (scores[i] belongs to candidates[i]).
std::optional<std::size_t> best_index(std::span<const Substitution> candidates,
                                      std::span<const double> scores, Vec2 position);

}  // namespace skillplan::connectors
