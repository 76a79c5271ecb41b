#include "skillplan/connectors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>

namespace skillplan::connectors {

using nlohmann::json;

// ----------------------------------------------------------------- datasets

std::string dataset_to_jsonl(const SkillDataset& d) {
  std::ostringstream out;
  const json header = {{"format", "skillplan-dataset"}, {"version", 1},
                       {"skill", rl::skill_name(d.skill)}, {"epsilon", d.epsilon},
                       {"n", d.n},                         {"seed", d.seed},
                       {"object", d.object},               {"records", d.records.size()}};
  out << header.dump() << '\n';
  for (const auto& r : d.records) {
    const json line = {{"x0", r.x0}, {"goal", r.goal}, {"effects", r.effects}, {"s", r.success ? 1 : 0}};
    out << line.dump() << '\n';
  }
  return out.str();
}

SkillDataset dataset_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  SkillDataset d;
  if (!std::getline(in, line)) throw Error(ErrorCode::Parse, "empty dataset file");
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "skillplan-dataset" || header.value("version", 0) != 1) {
      throw Error(ErrorCode::Parse, "not a dataset file");
    }
    d.skill = rl::parse_skill(header.at("skill").get<std::string>());
    d.epsilon = header.at("epsilon").get<double>();
    d.n = header.at("n").get<int>();
    d.seed = header.at("seed").get<std::uint64_t>();
    d.object = header.at("object").get<sim::RigidObject>();
    const auto count = header.at("records").get<std::size_t>();
    std::size_t dim = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      EpisodeRecord r;
      r.x0 = j.at("x0").get<Vector>();
      r.goal = j.at("goal").get<Vector>();
      r.effects = j.at("effects").get<std::vector<Vector>>();
      r.success = j.at("s").get<int>() != 0;
      if (d.records.empty()) dim = r.x0.size();
      if (r.x0.size() != dim || r.effects.empty()) {
        throw Error(ErrorCode::Parse, "dataset record " + std::to_string(d.records.size()) +
                                          " is inconsistent");
      }
      d.records.push_back(std::move(r));
    }
    if (d.records.size() != count) throw Error(ErrorCode::Parse, "dataset is truncated");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("malformed dataset: ") + e.what());
  }
  return d;
}

namespace {

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

SkillDataset generate_dataset(const EpisodeRunner& run, const rl::SkillConfig& config,
                              const sim::RigidObject& object, const DatasetConfig& data,
                              std::uint64_t seed) {
  if (data.num_pairs < 0 || data.n < 1) {
    throw Error(ErrorCode::InvalidArgument, "dataset needs num_pairs >= 0 and n >= 1");
  }
  SkillDataset d;
  d.skill = config.kind;
  d.epsilon = config.weights.epsilon;
  d.n = data.n;
  d.seed = seed;
  d.object = object;
  d.object.table.clear();
  d.records.resize(static_cast<std::size_t>(data.num_pairs));

  parallel_for(d.records.size(), data.threads, [&](std::size_t i) {
    Rng rng(derive_seed(seed, 0xda7a, i));
    const sim::Region& region = config.data_region;
    sim::RigidObject o = object;
    o.pose.x = uniform(rng, region.x_min, region.x_max);
    o.pose.y = uniform(rng, region.y_min, region.y_max);
    const Vec2 goal = rl::sample_goal(config, rng);

    EpisodeRecord& r = d.records[i];
    r.goal = {goal.x, goal.y};
    for (int j = 0; j < data.n; ++j) {
      Rng draw(derive_seed(seed, i, static_cast<std::uint64_t>(j) + 1));
      rl::EpisodeStart start = rl::make_episode_start(config, o, goal, draw);
      rl::SkillEnv env(config, std::move(start.world), start.object_id, start.goal);
      if (j == 0) r.x0 = env.state();
      if (!env.fell()) {
        Rng dynamics(mix_seed(derive_seed(seed, i, static_cast<std::uint64_t>(j) + 1)));
        run(env, dynamics);
      }
      const sim::Pose2 p = env.world().object(env.object_id()).pose;
      r.effects.push_back({p.x, p.y, p.yaw});
    }
    const Vec2 first{r.effects.front()[0], r.effects.front()[1]};
    r.success = rl::goal_reached(first, goal, config.weights.epsilon);
  });
  return d;
}

SkillDataset generate_dataset(const rl::GoalConditionedPolicy& policy,
                              const rl::SkillConfig& config, const sim::RigidObject& object,
                              const DatasetConfig& data, std::uint64_t seed) {
  const nn::Architecture& a = policy.network().architecture();
  if (policy.kind() != config.kind ||
      a.input_size() != rl::SkillEnv::feature_size(config) ||
      a.outputs != rl::SkillEnv::action_size(config.kind)) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string("policy does not match the ") + rl::skill_name(config.kind) +
                    " environment");
  }
  const EpisodeRunner run = [&](rl::SkillEnv& env, Rng& rng) {
    rl::rollout(policy, env, config.max_steps, rng);
  };
  return generate_dataset(run, config, object, data, seed);
}

// ------------------------------------------------------------ discriminator

namespace {

constexpr double kClamp = 1e-12;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))); }

}  // namespace

double bce_loss(std::span<const double> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::InvalidArgument, "bce_loss: predictions and labels differ in length");
  }
  if (predictions.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = std::clamp(predictions[i], kClamp, 1.0 - kClamp);
    sum += labels[i] != 0 ? -std::log(p) : -std::log(1.0 - p);
  }
  return sum / static_cast<double>(predictions.size());
}

double bce_loss_and_gradient(const nn::Network& net, std::span<const Vector> inputs,
                             std::span<const int> labels, std::span<double> grad) {
  if (inputs.size() != labels.size()) {
    throw Error(ErrorCode::InvalidArgument, "inputs and labels differ in length");
  }
  if (inputs.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(inputs.size());
  double loss = 0.0;
  nn::Network::Tape tape;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double z = net.forward(inputs[i], tape)[0];
    const double s = labels[i] != 0 ? 1.0 : 0.0;
    // -[s log sigmoid(z) + (1-s) log(1 - sigmoid(z))] = softplus(z) - s z
    loss += softplus(z) - s * z;
    const double g = (nn::sigmoid(z) - s) * inv;
    net.backward(tape, std::span<const double>(&g, 1), grad);
  }
  return loss * inv;
}

FeatureKind feature_kind(rl::SkillKind skill) {
  return skill == rl::SkillKind::EdgePush ? FeatureKind::EdgePushImage : FeatureKind::Vector;
}

Vector DiscriminatorModel::featurize(std::span<const double> x0) const {
  if (features == FeatureKind::EdgePushImage) return rl::edgepush_image(x0, resolution);
  if (x0.size() != input_offset.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "discriminator expects " + std::to_string(input_offset.size()) +
                    " state entries, got " + std::to_string(x0.size()));
  }
  Vector out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = (x0[i] - input_offset[i]) * input_scale[i];
  return out;
}

double DiscriminatorModel::classify(std::span<const double> x0) const {
  return nn::sigmoid(network.forward(featurize(x0))[0]);
}

bool DiscriminatorModel::discriminate(std::span<const double> x0) const {
  return classify(x0) >= threshold;
}

json discriminator_to_json(const DiscriminatorModel& m) {
  return {{"format", "skillplan-discriminator"},
          {"version", 1},
          {"features", m.features == FeatureKind::Vector ? "vector" : "edgepush-image"},
          {"resolution", m.resolution},
          {"input_offset", m.input_offset},
          {"input_scale", m.input_scale},
          {"threshold", m.threshold},
          {"network", nn::network_to_json(m.network)}};
}

DiscriminatorModel discriminator_from_json(const json& j) {
  if (j.value("format", "") != "skillplan-discriminator" || j.value("version", 0) != 1) {
    throw Error(ErrorCode::Parse, "not a discriminator checkpoint");
  }
  DiscriminatorModel m;
  const std::string f = j.at("features").get<std::string>();
  if (f != "vector" && f != "edgepush-image") throw Error(ErrorCode::Parse, "unknown features");
  m.features = f == "vector" ? FeatureKind::Vector : FeatureKind::EdgePushImage;
  m.resolution = j.at("resolution").get<int>();
  m.input_offset = j.at("input_offset").get<Vector>();
  m.input_scale = j.at("input_scale").get<Vector>();
  m.threshold = j.at("threshold").get<double>();
  m.network = nn::network_from_json(j.at("network"));
  return m;
}

DiscriminatorFit train_discriminator(std::span<const Vector> x0, std::span<const int> labels,
                                     FeatureKind features,
                                     const DiscriminatorTrainConfig& config, std::uint64_t seed) {
  if (x0.size() != labels.size()) {
    throw Error(ErrorCode::InvalidArgument, "states and labels differ in length");
  }
  if (x0.empty()) throw Error(ErrorCode::InvalidArgument, "cannot fit an empty dataset");
  if (config.batch_size <= 0 || config.epochs < 0 || !(config.learning_rate > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid discriminator training configuration");
  }
  const std::size_t positives =
      static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int s) { return s != 0; }));
  if (positives == 0 || positives == labels.size()) {
    warn("discriminator dataset has a single class; fitting anyway");
  }

  DiscriminatorFit fit;
  DiscriminatorModel& m = fit.model;
  m.features = features;
  m.resolution = config.resolution;
  nn::Architecture arch;
  arch.hidden = config.hidden;
  arch.outputs = 1;
  if (features == FeatureKind::Vector) {
    const std::size_t dim = x0.front().size();
    m.input_offset.assign(dim, 0.0);
    m.input_scale.assign(dim, 1.0);
    for (const auto& x : x0) {
      if (x.size() != dim) throw Error(ErrorCode::DimensionMismatch, "ragged state vectors");
      for (std::size_t d = 0; d < dim; ++d) m.input_offset[d] += x[d];
    }
    for (double& v : m.input_offset) v /= static_cast<double>(x0.size());
    for (std::size_t d = 0; d < dim; ++d) {
      double var = 0.0;
      for (const auto& x : x0) var += (x[d] - m.input_offset[d]) * (x[d] - m.input_offset[d]);
      const double sd = std::sqrt(var / static_cast<double>(x0.size()));
      m.input_scale[d] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    arch.vector_inputs = static_cast<int>(dim);
  } else {
    arch.image_channels = 1;
    arch.image_height = config.resolution;
    arch.image_width = config.resolution;
    arch.conv = {{4, 5, 2, 2}, {8, 3, 2, 1}};
  }
  m.network = nn::Network(arch);
  Rng rng(derive_seed(seed, 0xd15c));
  m.network.init_random(rng);

  std::vector<Vector> inputs;
  inputs.reserve(x0.size());
  for (const auto& x : x0) inputs.push_back(m.featurize(x));

  std::vector<double> grad(m.network.parameter_count());
  const auto full_loss = [&] {
    std::fill(grad.begin(), grad.end(), 0.0);
    return bce_loss_and_gradient(m.network, inputs, labels, grad);
  };
  fit.initial_loss = full_loss();

  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<Vector> bx;
  std::vector<int> by;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      bx.clear();
      by.clear();
      for (std::size_t i = start; i < end; ++i) {
        bx.push_back(inputs[order[i]]);
        by.push_back(labels[order[i]]);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      bce_loss_and_gradient(m.network, bx, by, grad);
      std::span<double> params = m.network.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) params[p] -= config.learning_rate * grad[p];
    }
    fit.epoch_loss.push_back(full_loss());
    if (!std::isfinite(fit.epoch_loss.back())) {
      throw Error(ErrorCode::Diverged, "discriminator training diverged");
    }
  }
  return fit;
}

DiscriminatorFit train_discriminator(const SkillDataset& dataset,
                                     const DiscriminatorTrainConfig& config, std::uint64_t seed) {
  std::vector<Vector> x0;
  std::vector<int> labels;
  for (const auto& r : dataset.records) {
    x0.push_back(r.x0);
    labels.push_back(r.success ? 1 : 0);
  }
  return train_discriminator(x0, labels, feature_kind(dataset.skill), config, seed);
}

// -------------------------------------------------------------------- k-NN

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Max-heap on (distance, index): the top is the current worst neighbour.
using Candidate = std::pair<double, std::size_t>;
using CandidateHeap = std::priority_queue<Candidate>;

std::vector<std::size_t> drain(CandidateHeap& heap) {
  std::vector<std::size_t> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top().second;
    heap.pop();
  }
  return out;
}

}  // namespace

KdTree::KdTree(std::vector<Vector> points) : points_(std::move(points)) {
  for (const auto& p : points_) {
    if (p.size() != points_.front().size()) {
      throw Error(ErrorCode::DimensionMismatch, "k-d tree points differ in dimension");
    }
  }
  std::vector<std::size_t> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, idx.size(), 0);
}

int KdTree::build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = dimension() == 0 ? 0 : depth % static_cast<int>(dimension());
  const std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + static_cast<std::ptrdiff_t>(lo),
                   idx.begin() + static_cast<std::ptrdiff_t>(mid),
                   idx.begin() + static_cast<std::ptrdiff_t>(hi),
                   [&](std::size_t a, std::size_t b) {
                     const double va = points_[a][axis];
                     const double vb = points_[b][axis];
                     return va < vb || (va == vb && a < b);
                   });
  const int node = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis, -1, -1});
  const int left = build(idx, lo, mid, depth + 1);
  const int right = build(idx, mid + 1, hi, depth + 1);
  nodes_[node].left = left;
  nodes_[node].right = right;
  return node;
}

std::vector<std::size_t> KdTree::nearest(std::span<const double> query, std::size_t k) const {
  if (!points_.empty() && query.size() != dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "query dimension differs from the index");
  }
  k = std::min(k, points_.size());
  CandidateHeap heap;
  if (k == 0) return {};
  const auto visit = [&](const auto& self, int n) -> void {
    if (n < 0) return;
    const Node& node = nodes_[n];
    const Candidate c{squared_distance(points_[node.point], query), node.point};
    if (heap.size() < k) {
      heap.push(c);
    } else if (c < heap.top()) {
      heap.pop();
      heap.push(c);
    }
    const double diff = query[node.axis] - points_[node.point][node.axis];
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    self(self, near);
    // Equal distances may still win on index, so only prune strictly.
    if (heap.size() < k || diff * diff <= heap.top().first) self(self, far);
  };
  visit(visit, root_);
  return drain(heap);
}

std::vector<std::size_t> brute_force_nearest(std::span<const Vector> points,
                                             std::span<const double> query, std::size_t k) {
  std::vector<Candidate> all;
  all.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    all.emplace_back(squared_distance(points[i], query), i);
  }
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

Vector knn_key(rl::SkillKind skill, std::span<const double> x0) {
  if (skill == rl::SkillKind::EdgePush) {
    if (x0.size() < 2) throw Error(ErrorCode::DimensionMismatch, "state lacks a position");
    return {x0[0], x0[1]};
  }
  return Vector(x0.begin(), x0.end());
}

SubgoalIndex::SubgoalIndex(std::shared_ptr<const SkillDataset> dataset)
    : dataset_(std::move(dataset)) {
  if (!dataset_) throw Error(ErrorCode::InvalidArgument, "sub-goal index needs a dataset");
  std::vector<Vector> keys;
  keys.reserve(dataset_->records.size());
  for (const auto& r : dataset_->records) keys.push_back(knn_key(dataset_->skill, r.x0));
  tree_ = KdTree(std::move(keys));
}

std::vector<Substitution> SubgoalIndex::query(std::span<const double> x0, std::size_t k) const {
  if (!dataset_ || tree_.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty sub-goal index");
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (k > tree_.size()) {
    warn("k = " + std::to_string(k) + " exceeds the " + std::to_string(tree_.size()) +
         " indexed states; returning all");
  }
  std::vector<Substitution> out;
  for (std::size_t i : tree_.nearest(knn_key(dataset_->skill, x0), k)) {
    const EpisodeRecord& r = dataset_->records[i];
    if (r.success) out.push_back({r.goal, r.effects, i});
  }
  return out;
}

double optimism(const Substitution& candidate, const EffectPredicate& predicate) {
  if (candidate.effects.empty()) return 0.0;
  std::size_t count = 0;
  for (const auto& e : candidate.effects) count += predicate(e) ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(candidate.effects.size());
}

std::optional<std::size_t> best_index(std::span<const Substitution> candidates,
                                      std::span<const double> scores, Vec2 position) {
  if (candidates.size() != scores.size()) {
    throw Error(ErrorCode::InvalidArgument, "one score per candidate is required");
  }
  const auto distance = [&](std::size_t i) {
    const Vector& g = candidates[i].goal;
    return (Vec2{g.at(0), g.at(1)} - position).norm();
  };
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!(scores[i] > 0.0)) continue;
    if (!best) {
      best = i;
      continue;
    }
    const std::size_t b = *best;
    if (scores[i] != scores[b]) {
      if (scores[i] > scores[b]) best = i;
      continue;
    }
    const double di = distance(i);
    const double db = distance(b);
    if (di < db || (di == db && candidates[i].record < candidates[b].record)) best = i;
  }
  return best;
}

std::optional<Substitution> best_substitution(std::span<const Substitution> candidates,
                                              const EffectPredicate& predicate, Vec2 position) {
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) scores.push_back(optimism(c, predicate));
  const auto i = best_index(candidates, scores, position);
  if (!i) return std::nullopt;
  return candidates[*i];
}

}  // namespace skillplan::connectors
