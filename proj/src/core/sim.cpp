#include "skillplan/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace skillplan::sim {

namespace {

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b, Vec2* closest = nullptr) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec2 q = a + ab * t;
  if (closest != nullptr) *closest = q;
  return (p - q).norm();
}

[[noreturn]] void unknown_object(std::string_view id) {
  throw Error(ErrorCode::InvalidArgument, "unknown object '" + std::string(id) + "'");
}

void update_support(WorldState& world, RigidObject& obj) {
  if (!obj.on_table()) return;
  const Table& t = world.table(obj.table);
  if (!t.contains(obj.pose.position())) obj.table.clear();
}

}  // namespace

const char* shape_name(Shape shape) { return shape == Shape::Cylinder ? "cylinder" : "box"; }

Shape parse_shape(std::string_view name) {
  if (name == "cylinder") return Shape::Cylinder;
  if (name == "box") return Shape::Box;
  throw Error(ErrorCode::InvalidArgument, "unknown shape '" + std::string(name) + "'");
}

double RigidObject::support(Vec2 direction) const {
  if (shape == Shape::Cylinder) return half_extent;
  const double a = std::atan2(direction.y, direction.x) - pose.yaw;
  return half_extent * (std::fabs(std::cos(a)) + std::fabs(std::sin(a)));
}

bool RigidObject::covers(Vec2 p) const {
  const Vec2 d = p - pose.position();
  if (shape == Shape::Cylinder) return d.norm() <= half_extent;
  const double c = std::cos(-pose.yaw);
  const double s = std::sin(-pose.yaw);
  const double lx = c * d.x - s * d.y;
  const double ly = s * d.x + c * d.y;
  return std::fabs(lx) <= half_extent && std::fabs(ly) <= half_extent;
}

bool Table::contains(Vec2 p) const {
  const std::size_t n = polygon.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = polygon[i];
    const Vec2 b = polygon[(i + 1) % n];
    if ((b - a).cross(p - a) < 0.0) return false;
  }
  return true;
}

double Table::boundary_distance(Vec2 p) const {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) {
    best = std::min(best, point_segment_distance(p, polygon[i], polygon[(i + 1) % n]));
  }
  return best;
}

double Table::outside_distance(Vec2 p) const { return contains(p) ? 0.0 : boundary_distance(p); }

Vec2 Table::centroid() const {
  Vec2 c;
  for (const auto& v : polygon) c += v;
  return polygon.empty() ? c : c * (1.0 / static_cast<double>(polygon.size()));
}

EdgeInfo nearest_edge(const Table& table, Vec2 p) {
  EdgeInfo best;
  best.distance = std::numeric_limits<double>::infinity();
  const std::size_t n = table.polygon.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = table.polygon[i];
    const Vec2 b = table.polygon[(i + 1) % n];
    Vec2 foot;
    const double d = point_segment_distance(p, a, b, &foot);
    if (d < best.distance) {
      best.index = i;
      best.distance = d;
      best.foot = foot;
      const Vec2 e = (b - a).normalized();
      best.outward_normal = {e.y, -e.x};  // CCW polygon: right-hand normal points out
    }
  }
  return best;
}

void perturb_edge(Table& table, std::size_t index, double angle) {
  const std::size_t n = table.polygon.size();
  if (n < 3 || index >= n) throw Error(ErrorCode::InvalidArgument, "bad edge index");
  Vec2& a = table.polygon[index];
  Vec2& b = table.polygon[(index + 1) % n];
  const Vec2 mid = (a + b) * 0.5;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  auto rot = [&](Vec2 v) {
    const Vec2 d = v - mid;
    return mid + Vec2{c * d.x - s * d.y, s * d.x + c * d.y};
  };
  a = rot(a);
  b = rot(b);
}

Vec2 ArmModel::home_point() const {
  const double r = 0.5 * (reach_min + reach_max);
  return base.position() + unit_from_angle(base.yaw) * r;
}

bool WorldState::has_object(std::string_view id) const {
  return std::any_of(objects.begin(), objects.end(), [&](const auto& o) { return o.id == id; });
}

const RigidObject& WorldState::object(std::string_view id) const {
  for (const auto& o : objects) {
    if (o.id == id) return o;
  }
  unknown_object(id);
}

RigidObject& WorldState::object(std::string_view id) {
  for (auto& o : objects) {
    if (o.id == id) return o;
  }
  unknown_object(id);
}

const Table& WorldState::table(std::string_view id) const {
  for (const auto& t : tables) {
    if (t.id == id) return t;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown table '" + std::string(id) + "'");
}

const Table* WorldState::table_at(Vec2 p) const {
  for (const auto& t : tables) {
    if (t.contains(p)) return &t;
  }
  return nullptr;
}

WorldState make_tabletop() {
  auto rect = [](std::string id, double x0, double x1, double y0, double y1) {
    return Table{std::move(id), {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}};
  };
  WorldState w;
  w.tables = {rect("table_a", 0.25, 1.25, -0.4, 0.4), rect("table_b", -0.35, 0.2, 0.45, 0.95)};
  w.bar.home = {0.45, -0.35, kPi / 2};
  w.bar.pose = w.bar.home;
  w.sweep_region = {0.2, 1.3, -0.45, 0.45};
  return w;
}

bool in_workspace(const ArmModel& arm, Vec2 p) {
  const double d = (p - arm.base.position()).norm();
  return d >= arm.reach_min && d <= arm.reach_max;
}

bool in_workspace(const ArmModel& arm, const Pose2& pose) { return in_workspace(arm, pose.position()); }

bool motion_feasible(const ArmModel& arm, Vec2 from, Vec2 to) {
  if (!in_workspace(arm, from) || !in_workspace(arm, to)) return false;
  return point_segment_distance(arm.base.position(), from, to) >= arm.reach_min;
}

double clipped_normal(Rng& rng, double sigma, double clip) {
  if (!(sigma > 0.0)) return 0.0;
  std::normal_distribution<double> n(0.0, 1.0);
  const double z = std::clamp(n(rng), -clip, clip);
  return sigma * z;
}

WorldState step_push(const WorldState& world, std::string_view object_id, double angle,
                     double distance, Rng& rng) {
  if (!world.has_object(object_id)) unknown_object(object_id);
  if (!(distance >= 0.0) || !std::isfinite(angle)) {
    throw Error(ErrorCode::InvalidArgument, "push distance must be non-negative and finite");
  }
  const RigidObject& obj = world.object(object_id);
  if (!obj.on_table()) {
    throw Error(ErrorCode::PreconditionViolation, "object '" + obj.id + "' is not on a table");
  }
  if (distance == 0.0) return world;

  const Vec2 u = unit_from_angle(angle);
  const Vec2 c = obj.pose.position();
  const Vec2 start = c - u * (obj.support(u * -1.0) + world.params.pusher_clearance);
  const Vec2 end = start + u * distance;
  if (!in_workspace(world.arm, start) || !in_workspace(world.arm, end)) {
    throw Error(ErrorCode::Unreachable, "push pose for '" + obj.id + "' is out of reach");
  }

  WorldState next = world;
  RigidObject& moved = next.object(object_id);
  const double sigma = world.params.noise_scale * world.params.slip_coeff * obj.friction * distance;
  const double lateral = clipped_normal(rng, sigma, world.params.noise_clip);
  const Vec2 p = c + u * distance + u.perp() * lateral;
  moved.pose.x = p.x;
  moved.pose.y = p.y;
  update_support(next, moved);
  return next;
}

WorldState step_bar_motion(const WorldState& world, const Pose2& bar_target, Rng& rng) {
  if (!world.sweep_region.contains(bar_target.position())) {
    throw Error(ErrorCode::OutOfRegion, "bar target outside the sweep region");
  }
  WorldState next = world;
  const Pose2 from = world.bar.pose;
  const double dyaw = normalize_angle(bar_target.yaw - from.yaw);
  const double travel = std::max((bar_target.position() - from.position()).norm(),
                                 std::fabs(dyaw) * world.bar.half_length);
  const int steps = std::max(1, static_cast<int>(std::ceil(travel / world.params.substep)));
  const double reach = world.bar.half_thickness;

  Vec2 prev_center = from.position();
  for (int k = 1; k <= steps; ++k) {
    const double t = static_cast<double>(k) / steps;
    const Vec2 center{from.x + t * (bar_target.x - from.x), from.y + t * (bar_target.y - from.y)};
    const double yaw = from.yaw + t * dyaw;
    const Vec2 axis = unit_from_angle(yaw);
    const Vec2 a = center - axis * world.bar.half_length;
    const Vec2 b = center + axis * world.bar.half_length;
    const Vec2 motion = center - prev_center;
    prev_center = center;
    for (auto& obj : next.objects) {
      if (!obj.on_table() || obj.id == next.held) continue;
      const Vec2 c = obj.pose.position();
      Vec2 q;
      const double d = point_segment_distance(c, a, b, &q);
      const double contact = obj.half_extent + reach;
      if (d >= contact) continue;
      Vec2 normal;
      if (d > 1e-12) {
        normal = (c - q) * (1.0 / d);
      } else {
        normal = motion.norm() > 0.0 ? motion.normalized() : axis.perp();
      }
      const double depth = contact - d;
      const double sigma =
          world.params.noise_scale * world.params.contact_noise * obj.friction * depth;
      const double slip = clipped_normal(rng, sigma, world.params.noise_clip);
      const Vec2 p = c + normal * depth + axis * slip;
      obj.pose.x = p.x;
      obj.pose.y = p.y;
      update_support(next, obj);
    }
  }
  next.bar.pose = {bar_target.x, bar_target.y, normalize_angle(bar_target.yaw)};
  return next;
}

WorldState lift_bar_to(const WorldState& world, const Pose2& target) {
  WorldState next = world;
  next.bar.pose = {target.x, target.y, normalize_angle(target.yaw)};
  return next;
}

Pose2 observe(const WorldState& world, std::string_view object_id) {
  return world.object(object_id).pose;
}

// ---------------------------------------------------------------- rendering

Vec2 DepthGrid::cell_center(int row, int col) const {
  return {origin.x + (col + 0.5) * cell, origin.y + (row + 0.5) * cell};
}

std::vector<double> DepthGrid::features() const {
  std::vector<double> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = codes[i] / 3.0;
  return out;
}

DepthGrid render_depth(const WorldState& world, std::string_view table_id, int resolution) {
  const Table& t = world.table(table_id);
  return render_depth(world, table_id, resolution, t.centroid(), world.params.render_window);
}

DepthGrid render_depth(const WorldState& world, std::string_view table_id, int resolution,
                       Vec2 center, double size) {
  if (resolution <= 0 || !(size > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "render resolution and size must be positive");
  }
  const Table& table = world.table(table_id);
  DepthGrid grid;
  grid.width = resolution;
  grid.height = resolution;
  grid.cell = size / resolution;
  grid.origin = {center.x - 0.5 * size, center.y - 0.5 * size};
  grid.codes.assign(static_cast<std::size_t>(resolution) * resolution, DepthGrid::Ground);
  grid.heights.assign(grid.codes.size(), 0.0f);
  for (int row = 0; row < resolution; ++row) {
    for (int col = 0; col < resolution; ++col) {
      const Vec2 p = grid.cell_center(row, col);
      const std::size_t idx = static_cast<std::size_t>(row) * resolution + col;
      if (table.contains(p)) {
        const bool edge = table.boundary_distance(p) <= grid.cell;
        grid.codes[idx] = edge ? DepthGrid::Edge : DepthGrid::TableTop;
        grid.heights[idx] = 0.5f;
      }
      for (const auto& obj : world.objects) {
        if (obj.table != table.id) continue;
        if (obj.covers(p)) {
          grid.codes[idx] = DepthGrid::Object;
          grid.heights[idx] = 1.0f;
          break;
        }
      }
    }
  }
  return grid;
}

// ------------------------------------------------------------------ grasping

namespace {

bool finger_clear_of_tables(const WorldState& world, Vec2 p) {
  for (const auto& t : world.tables) {
    if (t.outside_distance(p) < world.params.finger_radius) return false;
  }
  return true;
}

}  // namespace

std::optional<Grasp> find_grasp(const WorldState& world, std::string_view object_id, int samples) {
  const RigidObject& obj = world.object(object_id);
  if (!obj.on_table() || samples <= 0) return std::nullopt;
  const Vec2 c = obj.pose.position();
  for (int i = 0; i < samples; ++i) {
    const double angle = normalize_angle(2.0 * kPi * i / samples);
    const Vec2 u = unit_from_angle(angle);
    const double width = obj.support(u) + obj.support(u * -1.0);
    if (width <= world.arm.gripper_max_width && in_workspace(world.arm, c)) {
      return Grasp{GraspMode::Side, c, angle, width, c};
    }
    const Vec2 q = c + u * (obj.support(u) - world.params.grasp_depth);
    if (finger_clear_of_tables(world, q) && in_workspace(world.arm, q)) {
      return Grasp{GraspMode::Rim, c, angle, world.params.rim_thickness, q};
    }
  }
  return std::nullopt;
}

bool check_graspable(const WorldState& world, std::string_view object_id, int samples) {
  return find_grasp(world, object_id, samples).has_value();
}

bool grasp_valid(const WorldState& world, std::string_view object_id, const Grasp& grasp) {
  const RigidObject& obj = world.object(object_id);
  if (!obj.on_table()) return false;
  const Vec2 c = obj.pose.position();
  const Vec2 u = unit_from_angle(grasp.angle);
  if (grasp.mode == GraspMode::Side) {
    if (!in_workspace(world.arm, grasp.point)) return false;
    const double width = obj.support(u) + obj.support(u * -1.0);
    if (width > world.arm.gripper_max_width) return false;
    const Vec2 off = c - grasp.point;
    const double along = std::fabs(off.dot(u));
    const double across = std::fabs(off.dot(u.perp()));
    return along <= 0.5 * (world.arm.gripper_max_width - width) &&
           across <= world.params.finger_pad;
  }
  if (!in_workspace(world.arm, grasp.point) || !finger_clear_of_tables(world, grasp.point)) {
    return false;
  }
  // Lower finger must sit under the rim by at least half the nominal depth.
  const Vec2 d = grasp.point - c;
  const double dist = d.norm();
  const Vec2 dir = dist > 0.0 ? d * (1.0 / dist) : u;
  return dist <= obj.support(dir) - 0.5 * world.params.grasp_depth;
}

WorldState apply_pick(const WorldState& world, std::string_view object_id, const Grasp& grasp) {
  if (!world.held.empty()) {
    throw Error(ErrorCode::ExecutionFailed, "gripper already holds '" + world.held + "'");
  }
  if (!grasp_valid(world, object_id, grasp)) {
    throw Error(ErrorCode::ExecutionFailed, "grasp on '" + std::string(object_id) + "' failed");
  }
  WorldState next = world;
  RigidObject& obj = next.object(object_id);
  obj.table.clear();
  next.held = obj.id;
  return next;
}

WorldState apply_place(const WorldState& world, std::string_view object_id, const Pose2& target) {
  if (world.held != object_id) {
    throw Error(ErrorCode::ExecutionFailed, "not holding '" + std::string(object_id) + "'");
  }
  if (!in_workspace(world.arm, target)) {
    throw Error(ErrorCode::ExecutionFailed, "place pose out of reach");
  }
  const Table* t = world.table_at(target.position());
  if (t == nullptr) throw Error(ErrorCode::ExecutionFailed, "place pose is not on a table");
  WorldState next = world;
  RigidObject& obj = next.object(object_id);
  obj.pose = {target.x, target.y, normalize_angle(target.yaw)};
  obj.table = t->id;
  next.held.clear();
  return next;
}

// ------------------------------------------------------- domain randomization

DomainDraw randomize_domain(const RandomizationBounds& b, Rng& rng) {
  if (!(b.friction_min < b.friction_max) || !(b.extent_min < b.extent_max) ||
      !(b.edge_sigma >= 0.0) || !(b.extent_min > 0.0) || !(b.friction_min > 0.0) ||
      !(b.friction_max < 2.0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid randomization bounds");
  }
  DomainDraw d;
  d.shape = std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? Shape::Cylinder : Shape::Box;
  d.half_extent = std::uniform_real_distribution<double>(b.extent_min, b.extent_max)(rng);
  d.friction = std::uniform_real_distribution<double>(b.friction_min, b.friction_max)(rng);
  if (b.edge_sigma > 0.0) {
    d.edge_noise = std::normal_distribution<double>(b.edge_mean, b.edge_sigma)(rng);
  } else {
    d.edge_noise = b.edge_mean;
  }
  return d;
}

}  // namespace skillplan::sim
