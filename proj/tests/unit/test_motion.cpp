#include <doctest.h>

#include <algorithm>
#include <random>

#include "keymark/motion/motion.hpp"
#include "test_support.hpp"

using namespace keymark;
using namespace keymark::motion;
using marks::KeypointSource;
using marks::ObjectRole;
using prompts::AffordanceResponse;

namespace {

const std::vector<TargetAngle> kAngles{TargetAngle::forward, TargetAngle::backward, TargetAngle::left,
                                       TargetAngle::right,   TargetAngle::upside,   TargetAngle::downside};

// Flat table 1 m below the camera with a 4 cm slab in the middle.
struct Fixture {
  geometry::CameraModel cam = testing::top_down_camera();
  testing::SyntheticScene scene = testing::render_flat_object(
      cam, 320, 240, 0.04, [](double x, double y) { return std::abs(x) < 0.1 && std::abs(y) < 0.1; });
  marks::MarkSet ms;

  Fixture() {
    ms.grid = marks::build_grid(320, 240);
    ms.base_image_id = "obs";
    ms.candidates = {{"P0", {150, 110}, ObjectRole::grasped, KeypointSource::boundary, "tool"},
                     {"P1", {170, 110}, ObjectRole::grasped, KeypointSource::boundary, "tool"},
                     {"Q0", {160, 120}, ObjectRole::unattached, KeypointSource::center, "slab"},
                     {"Q1", {10, 10}, ObjectRole::unattached, KeypointSource::boundary, "slab"}};
  }
};

AffordanceResponse sweep_response() {
  AffordanceResponse r;
  r.grasp_keypoint = "P0";
  r.function_keypoint = "P1";
  r.target_keypoint = "Q0";
  r.pre_contact_tile = marks::TileId{1, 3};
  r.post_contact_tile = marks::TileId{3, 3};
  r.pre_contact_height = Height::same;
  r.post_contact_height = Height::above;
  r.target_angle = TargetAngle::right;
  return r;
}

double median_window(const geometry::DepthImage& d, geometry::Pixel c) {
  std::vector<double> vals;
  for (int v = c.v - 2; v <= c.v + 2; ++v)
    for (int u = c.u - 2; u <= c.u + 2; ++u)
      if (d.contains(u, v) && d.valid(u, v)) vals.push_back(d.at(u, v));
  std::sort(vals.begin(), vals.end());
  const std::size_t n = vals.size();
  return n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

// Position of the function point after every step, from plain kinematic integration.
std::vector<Point3> function_track(const MotionPlan& plan, const ActionStream& stream) {
  std::vector<Point3> out;
  GripperPose cur = plan.start;
  for (const auto& phase : stream.phases) {
    for (const auto& a : phase.actions) {
      cur.position += Point3(a[0], a[1], a[2]) * stream.dt;
      cur.yaw += a[5] * stream.dt;
      out.push_back(cur.position + Eigen::AngleAxisd(cur.yaw, Eigen::Vector3d::UnitZ()) * phase.tool_offset);
    }
  }
  return out;
}

// Indices where the track passes within tol of each via-point, searched in order.
std::vector<std::size_t> visits_in_order(const std::vector<Point3>& track, const std::vector<Point3>& vias,
                                         double tol, std::size_t from = 0) {
  std::vector<std::size_t> hits;
  std::size_t i = from;
  for (const auto& via : vias) {
    while (i < track.size() && (track[i] - via).norm() > tol) ++i;
    if (i == track.size()) break;
    hits.push_back(i);
  }
  return hits;
}

}  // namespace

TEST_CASE("named axes") {
  CHECK(target_axis(TargetAngle::forward) == Eigen::Vector3d(1, 0, 0));
  CHECK(target_axis(TargetAngle::left) == Eigen::Vector3d(0, 1, 0));
  CHECK(target_axis(TargetAngle::right) == Eigen::Vector3d(0, -1, 0));
  CHECK(target_axis(TargetAngle::downside) == Eigen::Vector3d(0, 0, -1));
}

TEST_CASE("orientation examples") {
  AffordanceInstance inst;
  inst.grasp_point = Point3(0, 0, 0);
  inst.function_point = Point3(0, 0, 0.2);
  inst.target_angle = TargetAngle::upside;
  CHECK(resolve_orientation(inst).isIdentity(0.0));

  inst.function_point = Point3(0.3, 0, 0);
  inst.target_angle = TargetAngle::downside;
  const Eigen::Matrix3d r = resolve_orientation(inst);
  CHECK((r * Eigen::Vector3d::UnitX()).dot(Eigen::Vector3d(0, 0, -1)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.isApprox(Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitY()).toRotationMatrix(), 1e-12));

  inst.target_angle = TargetAngle::backward;
  const Eigen::Matrix3d flip = resolve_orientation(inst);
  CHECK((flip * Eigen::Vector3d::UnitX() - Eigen::Vector3d(-1, 0, 0)).norm() < 1e-12);
  CHECK(std::abs(yaw_component(flip, Eigen::Vector3d::UnitX())) == doctest::Approx(M_PI));

  inst.function_point = inst.grasp_point;
  CHECK_THROWS_AS(resolve_orientation(inst), DegenerateAxis);
  inst.target_angle.reset();
  CHECK_THROWS_AS(resolve_orientation(inst), MissingPoints);
}

TEST_CASE("orientation maps the axis onto every option (6 x 20 random axes)") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0.0, 1.0);
  for (const auto angle : kAngles) {
    for (int i = 0; i < 20; ++i) {
      AffordanceInstance inst;
      inst.grasp_point = Point3(n(rng), n(rng), n(rng));
      Eigen::Vector3d axis(n(rng), n(rng), n(rng));
      if (i == 0) axis = -target_axis(angle);  // opposite start
      if (i == 1) axis = target_axis(angle);   // already aligned
      inst.function_point = *inst.grasp_point + 0.3 * axis.normalized();
      inst.target_angle = angle;
      const Eigen::Matrix3d r = resolve_orientation(inst);
      CHECK((r * axis.normalized() - target_axis(angle)).norm() < 1e-9);
      CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-12);
      CHECK(r.determinant() == doctest::Approx(1.0));
      // Minimality: the rotation angle equals the angle between the axes.
      const double between = std::acos(std::clamp(axis.normalized().dot(target_axis(angle)), -1.0, 1.0));
      CHECK(Eigen::AngleAxisd(r).angle() == doctest::Approx(between).epsilon(1e-9));
    }
  }
}

TEST_CASE("lifting keypoints and waypoints") {
  Fixture f;
  const auto inst = lift_affordance(sweep_response(), f.ms, f.scene.depth, f.cam, 7);
  REQUIRE(inst.target_point);
  CHECK(inst.target_point->z() == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(inst.grasp_point->z() == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(inst.pre_contact->z() == inst.target_point->z());
  CHECK(inst.post_contact->z() == doctest::Approx(inst.target_point->z() + 0.15).epsilon(1e-15));

  // The waypoint projects back inside its tile.
  const auto px = geometry::project(*inst.pre_contact, f.cam, geometry::Frame::world);
  const auto tile = marks::tile_bounds(f.ms.grid, {1, 3});
  CHECK(px.u > tile.u0 - 0.5);
  CHECK(px.u < tile.u1 - 0.5);
  CHECK(px.v > tile.v0 - 0.5);
  CHECK(px.v < tile.v1 - 0.5);

  LiftConfig lower{0.05};
  CHECK(lift_affordance(sweep_response(), f.ms, f.scene.depth, f.cam, 7, lower).post_contact->z() ==
        doctest::Approx(inst.target_point->z() + 0.05));

  const auto again = lift_affordance(sweep_response(), f.ms, f.scene.depth, f.cam, 7);
  CHECK(again.post_contact->isApprox(*inst.post_contact, 0.0));
  CHECK_FALSE(lift_affordance(sweep_response(), f.ms, f.scene.depth, f.cam, 8).post_contact->isApprox(
      *inst.post_contact, 1e-9));

  // Invalid depth at the target pixel falls back to the window median.
  auto holed = f.scene.depth;
  holed.at(160, 120) = 0.0;
  holed.at(161, 120) = 1.0;
  holed.at(162, 121) = 1.0;
  const auto fallback = lift_affordance(sweep_response(), f.ms, holed, f.cam, 7);
  const double med = median_window(holed, {160, 120});
  CHECK(fallback.target_point->isApprox(
      geometry::deproject(geometry::Pixel{160, 120}, med, f.cam, geometry::Frame::world), 1e-12));

  auto bad = sweep_response();
  bad.target_keypoint = "Q7";
  CHECK_THROWS_AS(lift_affordance(bad, f.ms, f.scene.depth, f.cam, 7), UnknownLabel);
  geometry::DepthImage small(10, 10, 1.0);
  CHECK_THROWS_AS(lift_affordance(sweep_response(), f.ms, small, f.cam, 7), DimensionMismatch);
}

TEST_CASE("grasp phase picks the handle") {
  const auto cam = testing::top_down_camera();
  // A 16 cm pan (too wide to grasp) with a 2 cm handle sticking out along +x.
  auto inside = [](double x, double y) {
    return std::hypot(x, y) < 0.08 || (x > 0.07 && x < 0.22 && std::abs(y) < 0.01);
  };
  const auto pan = testing::render_flat_object(cam, 320, 240, 0.03, inside);
  AffordanceInstance inst;
  inst.grasp_point = Point3(0.16, 0.0, 0.03);
  const auto pose = plan_grasp_phase(inst, pan.depth, pan.mask, cam, 3);
  CHECK((pose.position.head<2>() - Eigen::Vector2d(0.16, 0.0)).norm() < 0.02);
  CHECK(pose.aperture < 0.03);

  // Equals the linear-scan nearest of the 30 proposals.
  const auto proposals = geometry::sample_antipodal_grasps(pan.depth, pan.mask, cam, kGraspProposals, 3);
  REQUIRE(proposals.size() == 30);
  std::size_t best = 0;
  for (std::size_t i = 1; i < proposals.size(); ++i)
    if ((proposals[i].center - *inst.grasp_point).norm() < (proposals[best].center - *inst.grasp_point).norm())
      best = i;
  CHECK(pose.position.isApprox(proposals[best].center, 0.0));

  const auto slab = testing::render_flat_object(cam, 320, 240, 0.03,
                                                [](double x, double y) { return std::hypot(x, y) < 0.1; });
  CHECK_THROWS_AS(plan_grasp_phase(inst, slab.depth, slab.mask, cam, 3), NoGraspFound);
  inst.grasp_point.reset();
  CHECK_THROWS_AS(plan_grasp_phase(inst, pan.depth, pan.mask, cam, 3), MissingPoints);
}

TEST_CASE("manipulation via-points") {
  AffordanceInstance inst;
  inst.target_point = Point3(0.5, 0.0, 0.06);
  inst.pre_contact = Point3(0.5, 0.0, 0.21);
  inst.post_contact = Point3(0.52, 0.01, 0.21);
  inst.pre_contact_height = inst.post_contact_height = Height::above;
  const auto press = plan_manipulation_phase(inst);
  REQUIRE(press.via_points.size() == 3);
  CHECK(press.via_names == std::vector<std::string>{"pre_contact", "target", "post_contact"});
  CHECK(press.via_points[1] == *inst.target_point);
  CHECK(press.orientation.isIdentity(0.0));

  // No object in hand: the gripper tip itself goes through the via-points.
  const auto plan = compile_plan(inst, press, std::nullopt, {{-0.1, 0, 0.5}, 0.0}, true);
  for (std::size_t i = 0; i < 3; ++i) CHECK(plan.gripper_waypoints[i].position == press.via_points[i]);
  CHECK_FALSE(plan.release_after);
  CHECK(plan.tool_offset == Point3::Zero());

  auto missing = inst;
  missing.post_contact.reset();
  CHECK_THROWS_AS(plan_manipulation_phase(missing), MissingPoints);
  CHECK_THROWS_AS(plan_manipulation_phase(AffordanceInstance{}), MissingPoints);

  // Grasp without a target: the grasp point follows the waypoints, then lets go.
  AffordanceInstance unplug;
  unplug.grasp_point = Point3(0.4, -0.2, 0.02);
  unplug.post_contact = Point3(0.4, -0.35, 0.02);
  const auto pull = plan_manipulation_phase(unplug);
  CHECK(pull.via_names == std::vector<std::string>{"post_contact"});
  const GraspPose g{{0.401, -0.2, 0.02}, 0.3, 0.02};
  const auto pull_plan = compile_plan(unplug, pull, g, {{-0.1, 0, 0.5}, 0.0}, true);
  CHECK(pull_plan.gripper_waypoints[0].position.isApprox(Point3(0.401, -0.35, 0.02), 1e-12));
  CHECK(pull_plan.release_after == 0u);
}

TEST_CASE("interpolation examples") {
  MotionConfig cfg;
  MotionPlan plan;
  plan.start = {{0.0, 0.0, 0.2}, 0.0};
  plan.manipulation_path = {Point3(0.15, 0.0, 0.2)};
  plan.via_names = {"target"};
  plan.gripper_waypoints = {{Point3(0.15, 0.0, 0.2), 0.0}};
  const auto stream = interpolate(plan, cfg);
  CHECK(stream.dt == doctest::Approx(0.2));
  CHECK(stream.size() >= 5);
  const auto poses = integrate(plan.start, stream);
  CHECK((poses.back().position - Point3(0.15, 0.0, 0.2)).norm() < 1e-3);
  for (const auto& a : stream.phases[0].actions) {
    CHECK(Eigen::Vector3d(a[0], a[1], a[2]).norm() <= cfg.max_speed + 1e-12);
    CHECK(a[6] == kGripperOpen);
  }

  plan.manipulation_path = {plan.start.position};
  plan.gripper_waypoints = {plan.start};
  CHECK(interpolate(plan, cfg).size() == 0);

  plan.manipulation_path = {Point3(3.5, 0.0, 0.2)};
  plan.gripper_waypoints = {{Point3(3.5, 0.0, 0.2), 0.0}};
  CHECK_THROWS_AS(interpolate(plan, cfg), PathTooLong);
  // 2.9 m at 0.15 m/s takes about 20.3 s, just over 100 steps; 2.8 m fits.
  plan.gripper_waypoints = {{Point3(2.8, 0.0, 0.2), 0.0}};
  CHECK(interpolate(plan, cfg).size() <= 100);
}

TEST_CASE("compiled trajectories visit the via-points in order") {
  Fixture f;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> col(0, 4), row(1, 5), coin(0, 1), angle(0, 3);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    auto resp = sweep_response();
    resp.pre_contact_tile = marks::TileId{col(rng), row(rng)};
    resp.post_contact_tile = marks::TileId{col(rng), row(rng)};
    resp.pre_contact_height = coin(rng) ? Height::same : Height::above;
    resp.post_contact_height = coin(rng) ? Height::same : Height::above;
    resp.target_angle = kAngles[angle(rng)];
    const auto inst = lift_affordance(resp, f.ms, f.scene.depth, f.cam, trial);
    for (auto* wp : {&inst.pre_contact, &inst.post_contact}) {
      const auto h = wp == &inst.pre_contact ? resp.pre_contact_height : resp.post_contact_height;
      if (h == Height::same) CHECK(std::abs((*wp)->z() - inst.target_point->z()) <= 1e-9);
    }
    const GraspPose grasp{*inst.grasp_point + Point3(0.002, -0.001, 0.0), 0.4, 0.02};
    const auto manip = plan_manipulation_phase(inst);
    const auto plan = compile_plan(inst, manip, grasp, {{-0.1, 0.0, 0.5}, 0.0}, true);
    const auto stream = interpolate(plan);
    REQUIRE(stream.phases.size() == 2);
    CHECK(stream.phases[0].actions.size() <= 100);
    CHECK(stream.phases[1].actions.size() <= 100);

    const auto track = function_track(plan, stream);
    const std::size_t manip_start = stream.phases[0].actions.size();
    const auto hits = visits_in_order(track, manip.via_points, 1e-3, manip_start);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0] < hits[1]);
    CHECK(hits[1] < hits[2]);
    if (resp.post_contact_height == Height::above) CHECK(plan.release_after == 1u);
    ++checked;

    // Identical inputs give an identical stream.
    const auto again = interpolate(compile_plan(inst, manip, grasp, {{-0.1, 0.0, 0.5}, 0.0}, true));
    CHECK(to_json(plan) == to_json(compile_plan(inst, manip, grasp, {{-0.1, 0.0, 0.5}, 0.0}, true)));
    REQUIRE(again.size() == stream.size());
    CHECK(again.phases[1].actions == stream.phases[1].actions);
  }
  CHECK(checked == 60);
}

TEST_CASE("grasp phase actions close at the grasp pose") {
  MotionPlan plan;
  plan.start = {{-0.1, 0.0, 0.5}, 0.0};
  plan.grasp = GraspPose{{0.4, 0.1, 0.03}, 0.7, 0.02};
  const auto stream = interpolate(plan);
  REQUIRE(stream.phases.size() == 1);
  const auto poses = integrate(plan.start, stream);
  const auto& actions = stream.phases[0].actions;
  const auto close = std::find_if(actions.begin(), actions.end(), [](const Action& a) { return a[6] == kGripperClosed; });
  REQUIRE(close != actions.end());
  const auto idx = static_cast<std::size_t>(close - actions.begin());
  CHECK((poses[idx].position - plan.grasp->position).norm() < 1e-9);
  CHECK(poses[idx].yaw == doctest::Approx(0.7));
  CHECK(poses.back().position.z() == doctest::Approx(0.13));
  CHECK(actions.back()[6] == kGripperClosed);
}

TEST_CASE("action JSON") {
  const Action a{0.1, 0.0, -0.05, 0.0, 0.0, 0.2, 1.0};
  CHECK(action_from_json(to_json(a)) == a);
  CHECK_THROWS_AS(action_from_json(nlohmann::json::array({1, 2, 3})), MalformedJson);
}
