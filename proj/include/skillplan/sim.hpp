#pragma once

// Quasi-static 2-D tabletop world: tables, rigid objects, an annular reach
// model and a bar tool. Steps are pure functions of (state, action, rng).

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "skillplan/common.hpp"

namespace skillplan::sim {

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;  // (-pi, pi]

  Vec2 position() const { return {x, y}; }
  bool operator==(const Pose2&) const = default;
};

enum class Shape { Cylinder, Box };

const char* shape_name(Shape shape);
Shape parse_shape(std::string_view name);

struct RigidObject {
  std::string id;
  Shape shape = Shape::Cylinder;
  double half_extent = 0.03;  // radius (cylinder) or half side (box)
  double friction = 0.5;      // kinetic friction coefficient
  Pose2 pose;
  std::string table;  // supporting table id; empty once the object fell or is held

  bool on_table() const { return !table.empty(); }
  /// Distance from the center to the footprint boundary along `direction`.
  double support(Vec2 direction) const;
  /// True if `p` lies inside the footprint.
  bool covers(Vec2 p) const;
  bool operator==(const RigidObject&) const = default;
};

/// Convex polygon, counter-clockwise.
struct Table {
  std::string id;
  std::vector<Vec2> polygon;

  bool contains(Vec2 p) const;
  /// Unsigned distance from `p` to the polygon boundary.
  double boundary_distance(Vec2 p) const;
  /// Distance from `p` to the polygon (0 inside).
  double outside_distance(Vec2 p) const;
  Vec2 centroid() const;
  bool operator==(const Table&) const = default;
};

struct EdgeInfo {
  std::size_t index = 0;
  double distance = 0.0;  // from the query point to the edge line segment
  Vec2 foot;              // closest point on the edge
  Vec2 outward_normal;
};

EdgeInfo nearest_edge(const Table& table, Vec2 p);

/// Rotates edge `index` about its midpoint. Both endpoints move, so the
/// neighbouring edges follow; the polygon stays convex for small angles.
void perturb_edge(Table& table, std::size_t index, double angle);

struct ArmModel {
  Pose2 base;
  double reach_min = 0.2;
  double reach_max = 0.75;
  double gripper_max_width = 0.09;

  /// Rest position of the end-effector between motions.
  Vec2 home_point() const;
  bool operator==(const ArmModel&) const = default;
};

/// Bar tool head: a thick segment centred on `pose`, aligned with pose.yaw.
struct Bar {
  Pose2 pose;
  Pose2 home;
  double half_length = 0.06;
  double half_thickness = 0.01;
  bool operator==(const Bar&) const = default;
};

struct Region {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;

  bool contains(Vec2 p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
  bool operator==(const Region&) const = default;
};

struct SimParams {
  double slip_coeff = 0.05;     // push slip sigma = slip_coeff * f_k * d
  double contact_noise = 0.15;  // bar slip sigma = contact_noise * f_k * |contact step|
  double noise_scale = 1.0;     // 0 makes every step deterministic
  double noise_clip = 3.0;      // noise draws are truncated at this many sigmas
  double substep = 0.005;       // bar sweep resolution, meters
  double pusher_clearance = 0.01;
  double grasp_depth = 0.02;    // rim grasp: how far the lower finger reaches under the rim
  double finger_radius = 0.01;
  double finger_pad = 0.012;    // side grasp: tolerated offset across the closing axis
  double rim_thickness = 0.012;
  double render_window = 0.6;   // default depth-grid extent, meters
  bool operator==(const SimParams&) const = default;
};

struct WorldState {
  std::vector<Table> tables;
  std::vector<RigidObject> objects;
  ArmModel arm;
  Bar bar;
  Region sweep_region;
  SimParams params;
  std::string held;  // object in the gripper, empty if none

  bool has_object(std::string_view id) const;
  const RigidObject& object(std::string_view id) const;
  RigidObject& object(std::string_view id);
  const Table& table(std::string_view id) const;
  /// First table containing `p`, or nullptr.
  const Table* table_at(Vec2 p) const;
  bool operator==(const WorldState&) const = default;
};

/// Two rectangular tables (A: work table, B: goal table), the arm at the
/// origin facing +x, and the bar parked at its home pose. No objects.
WorldState make_tabletop();

bool in_workspace(const ArmModel& arm, Vec2 p);
bool in_workspace(const ArmModel& arm, const Pose2& pose);

/// Straight end-effector segment: both ends in the annulus and the segment
/// stays outside the inner (robot body) disc.
bool motion_feasible(const ArmModel& arm, Vec2 from, Vec2 to);

WorldState step_push(const WorldState& world, std::string_view object_id, double angle,
                     double distance, Rng& rng);

WorldState step_bar_motion(const WorldState& world, const Pose2& bar_target, Rng& rng);

/// Moves the bar without contact (tool lifted), e.g. back to its home pose.
WorldState lift_bar_to(const WorldState& world, const Pose2& target);

Pose2 observe(const WorldState& world, std::string_view object_id);

// ---------------------------------------------------------------- rendering

struct DepthGrid {
  enum Code : std::uint8_t { Ground = 0, TableTop = 1, Edge = 2, Object = 3 };

  int width = 0;
  int height = 0;
  double cell = 0.0;
  Vec2 origin;  // lower-left corner of cell (0, 0)
  std::vector<std::uint8_t> codes;
  std::vector<float> heights;  // normalized to [0, 1]

  std::uint8_t at(int row, int col) const { return codes[row * width + col]; }
  Vec2 cell_center(int row, int col) const;
  /// One channel of codes scaled into [0, 1]; network input layout.
  std::vector<double> features() const;
};

/// Top-down grid over a `params.render_window` square centred on the table.
DepthGrid render_depth(const WorldState& world, std::string_view table_id, int resolution);
DepthGrid render_depth(const WorldState& world, std::string_view table_id, int resolution,
                       Vec2 center, double size);

// ------------------------------------------------------------------ grasping

enum class GraspMode { Side, Rim };

struct Grasp {
  GraspMode mode = GraspMode::Side;
  Vec2 center;       // object centre the grasp was computed for
  double angle = 0;  // closing axis (side) or rim direction (rim)
  double width = 0;  // finger opening required
  Vec2 point;        // side: grasp centre; rim: lower finger position
  bool operator==(const Grasp&) const = default;
};

/// First feasible grasp among `samples` directions evenly spread over the
/// circle. Side grasps need the object to fit the gripper; rim grasps need
/// the lower finger to be clear of every table surface (object overhangs).
std::optional<Grasp> find_grasp(const WorldState& world, std::string_view object_id, int samples);

bool check_graspable(const WorldState& world, std::string_view object_id, int samples);

/// Whether a grasp computed earlier still closes on the object where it is now.
bool grasp_valid(const WorldState& world, std::string_view object_id, const Grasp& grasp);

WorldState apply_pick(const WorldState& world, std::string_view object_id, const Grasp& grasp);
WorldState apply_place(const WorldState& world, std::string_view object_id, const Pose2& target);

// ------------------------------------------------------- domain randomization

struct RandomizationBounds {
  double friction_min = 0.2;
  double friction_max = 0.8;
  double extent_min = 0.02;
  double extent_max = 0.08;
  double edge_mean = 0.0;
  double edge_sigma = 0.05;
};

struct DomainDraw {
  Shape shape = Shape::Cylinder;
  double half_extent = 0.0;
  double friction = 0.0;
  double edge_noise = 0.0;
};

DomainDraw randomize_domain(const RandomizationBounds& bounds, Rng& rng);

/// Truncated Gaussian draw used by every noisy step.
double clipped_normal(Rng& rng, double sigma, double clip);

// ------------------------------------------------------------ serialization
// Doubles are written with full precision, so JSON round trips are exact.

void to_json(nlohmann::json& j, const Pose2& v);
void from_json(const nlohmann::json& j, Pose2& v);
void to_json(nlohmann::json& j, const RigidObject& v);
void from_json(const nlohmann::json& j, RigidObject& v);
void to_json(nlohmann::json& j, const Table& v);
void from_json(const nlohmann::json& j, Table& v);
void to_json(nlohmann::json& j, const WorldState& v);
void from_json(const nlohmann::json& j, WorldState& v);
void to_json(nlohmann::json& j, const Grasp& v);
void from_json(const nlohmann::json& j, Grasp& v);

}  // namespace skillplan::sim
