#include "skillplan/sim.hpp"

namespace skillplan::sim {

using nlohmann::json;

namespace {

json vec(Vec2 v) { return json::array({v.x, v.y}); }
Vec2 vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json region(const Region& r) { return json::array({r.x_min, r.x_max, r.y_min, r.y_max}); }
Region region(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>()};
}

}  // namespace

void to_json(json& j, const Pose2& v) { j = json::array({v.x, v.y, v.yaw}); }
void from_json(const json& j, Pose2& v) {
  v = {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

void to_json(json& j, const RigidObject& v) {
  j = {{"id", v.id},           {"shape", shape_name(v.shape)}, {"half_extent", v.half_extent},
       {"friction", v.friction}, {"pose", v.pose},              {"table", v.table}};
}
void from_json(const json& j, RigidObject& v) {
  v.id = j.at("id").get<std::string>();
  v.shape = parse_shape(j.at("shape").get<std::string>());
  v.half_extent = j.at("half_extent").get<double>();
  v.friction = j.at("friction").get<double>();
  v.pose = j.at("pose").get<Pose2>();
  v.table = j.at("table").get<std::string>();
}

void to_json(json& j, const Table& v) {
  json poly = json::array();
  for (Vec2 p : v.polygon) poly.push_back(vec(p));
  j = {{"id", v.id}, {"polygon", poly}};
}
void from_json(const json& j, Table& v) {
  v.id = j.at("id").get<std::string>();
  v.polygon.clear();
  for (const auto& p : j.at("polygon")) v.polygon.push_back(vec(p));
}

void to_json(json& j, const WorldState& v) {
  const SimParams& p = v.params;
  j = {{"tables", v.tables},
       {"objects", v.objects},
       {"arm",
        {{"base", v.arm.base},
         {"reach_min", v.arm.reach_min},
         {"reach_max", v.arm.reach_max},
         {"gripper_max_width", v.arm.gripper_max_width}}},
       {"bar",
        {{"pose", v.bar.pose},
         {"home", v.bar.home},
         {"half_length", v.bar.half_length},
         {"half_thickness", v.bar.half_thickness}}},
       {"sweep_region", region(v.sweep_region)},
       {"params",
        {{"slip_coeff", p.slip_coeff},
         {"contact_noise", p.contact_noise},
         {"noise_scale", p.noise_scale},
         {"noise_clip", p.noise_clip},
         {"substep", p.substep},
         {"pusher_clearance", p.pusher_clearance},
         {"grasp_depth", p.grasp_depth},
         {"finger_radius", p.finger_radius},
         {"finger_pad", p.finger_pad},
         {"rim_thickness", p.rim_thickness},
         {"render_window", p.render_window}}},
       {"held", v.held}};
}

void from_json(const json& j, WorldState& v) {
  v.tables = j.at("tables").get<std::vector<Table>>();
  v.objects = j.at("objects").get<std::vector<RigidObject>>();
  const json& arm = j.at("arm");
  v.arm.base = arm.at("base").get<Pose2>();
  v.arm.reach_min = arm.at("reach_min").get<double>();
  v.arm.reach_max = arm.at("reach_max").get<double>();
  v.arm.gripper_max_width = arm.at("gripper_max_width").get<double>();
  const json& bar = j.at("bar");
  v.bar.pose = bar.at("pose").get<Pose2>();
  v.bar.home = bar.at("home").get<Pose2>();
  v.bar.half_length = bar.at("half_length").get<double>();
  v.bar.half_thickness = bar.at("half_thickness").get<double>();
  v.sweep_region = region(j.at("sweep_region"));
  const json& p = j.at("params");
  v.params.slip_coeff = p.at("slip_coeff").get<double>();
  v.params.contact_noise = p.at("contact_noise").get<double>();
  v.params.noise_scale = p.at("noise_scale").get<double>();
  v.params.noise_clip = p.at("noise_clip").get<double>();
  v.params.substep = p.at("substep").get<double>();
  v.params.pusher_clearance = p.at("pusher_clearance").get<double>();
  v.params.grasp_depth = p.at("grasp_depth").get<double>();
  v.params.finger_radius = p.at("finger_radius").get<double>();
  v.params.finger_pad = p.at("finger_pad").get<double>();
  v.params.rim_thickness = p.at("rim_thickness").get<double>();
  v.params.render_window = p.at("render_window").get<double>();
  v.held = j.at("held").get<std::string>();
}

void to_json(json& j, const Grasp& v) {
  j = {{"mode", v.mode == GraspMode::Side ? "side" : "rim"},
       {"center", vec(v.center)},
       {"angle", v.angle},
       {"width", v.width},
       {"point", vec(v.point)}};
}
void from_json(const json& j, Grasp& v) {
  const std::string mode = j.at("mode").get<std::string>();
  if (mode != "side" && mode != "rim") throw Error(ErrorCode::Parse, "unknown grasp mode");
  v.mode = mode == "side" ? GraspMode::Side : GraspMode::Rim;
  v.center = vec(j.at("center"));
  v.angle = j.at("angle").get<double>();
  v.width = j.at("width").get<double>();
  v.point = vec(j.at("point"));
}

}  // namespace skillplan::sim
