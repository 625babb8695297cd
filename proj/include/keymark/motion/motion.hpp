#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Geometry>
#include <json.hpp>

#include "keymark/geometry/camera.hpp"
#include "keymark/geometry/grasp.hpp"
#include "keymark/prompts/prompts.hpp"

namespace keymark::motion {

using geometry::Point3;
using prompts::Height;
using prompts::TargetAngle;

inline constexpr std::size_t kGraspProposals = 30;

struct AffordanceInstance {
  std::optional<Point3> grasp_point;
  std::optional<Point3> function_point;
  std::optional<Point3> target_point;
  std::optional<Point3> pre_contact;
  std::optional<Point3> post_contact;
  std::optional<Height> pre_contact_height;
  std::optional<Height> post_contact_height;
  std::optional<TargetAngle> target_angle;
};

struct LiftConfig {
  double h_above{0.15};  // meters added for "above" waypoints
};

// Keypoints are deprojected at their pixel's depth; waypoints take a uniform
// pixel in their tile and are placed on the plane z = reference z (+ h_above),
// where the reference is the target point, or the grasp point when there is no target.
AffordanceInstance lift_affordance(const prompts::AffordanceResponse& response, const marks::MarkSet& markset,
                                   const geometry::DepthImage& depth, const geometry::CameraModel& cam,
                                   std::uint64_t seed, const LiftConfig& config = {});

// World axis named by an orientation option: forward +x, backward -x, left +y,
// right -y, upside +z, downside -z.
Eigen::Vector3d target_axis(TargetAngle angle);

// Minimal rotation taking the grasp->function axis onto the named axis.
// Opposite axes turn half a revolution about z when the axis is horizontal.
Eigen::Matrix3d resolve_orientation(const AffordanceInstance& instance);

// Rotation about z that best matches R for a horizontal gripper: the signed
// angle between the horizontal parts of `axis` and `R * axis`, 0 when either vanishes.
double yaw_component(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& axis);

struct GripperPose {
  Point3 position{Point3::Zero()};
  double yaw{0.0};
};

struct GraspPose {
  Point3 position{Point3::Zero()};
  double yaw{0.0};
  double aperture{0.0};
};

// Samples kGraspProposals top-down grasps on the mask and keeps the one closest to the grasp point.
GraspPose plan_grasp_phase(const AffordanceInstance& instance, const geometry::DepthImage& depth,
                           const geometry::BinaryMask& mask, const geometry::CameraModel& cam, std::uint64_t seed,
                           const geometry::GraspSamplerConfig& sampler = {});

struct ManipulationPlan {
  std::vector<Point3> via_points;       // positions of the function point
  std::vector<std::string> via_names;   // "pre_contact", "target", "post_contact"
  Eigen::Matrix3d orientation{Eigen::Matrix3d::Identity()};
  double yaw_delta{0.0};
};

// Via-points [pre_contact, target, post_contact]. Without a target (grasp and
// move), the grasp point follows the waypoints that are present.
ManipulationPlan plan_manipulation_phase(const AffordanceInstance& instance);

struct MotionConfig {
  double control_rate_hz{5.0};
  double max_speed{0.15};      // m/s
  double accel{0.5};           // m/s^2
  double max_yaw_rate{0.5};    // rad/s
  double yaw_accel{1.0};       // rad/s^2
  double grasp_clearance{0.10};
  std::size_t max_steps_per_phase{100};
};

struct MotionPlan {
  GripperPose start;
  bool start_gripper_open{true};
  std::optional<GraspPose> grasp;
  std::vector<Point3> manipulation_path;
  std::vector<std::string> via_names;
  Eigen::Matrix3d manipulation_orientation{Eigen::Matrix3d::Identity()};
  std::vector<GripperPose> gripper_waypoints;  // one per via-point
  Point3 tool_offset{Point3::Zero()};          // function point in the gripper frame
  std::optional<std::size_t> release_after;    // via-point index after which the gripper opens

  bool grasp_phase() const { return grasp.has_value(); }
  bool manipulation_phase() const { return !manipulation_path.empty(); }
};

// Gripper targets follow p = v - Rz(yaw_delta) (f - p_grasp), so the held
// function point lands on each via-point. Without a grasp the gripper tip is the function point.
MotionPlan compile_plan(const AffordanceInstance& instance, const ManipulationPlan& manipulation,
                        const std::optional<GraspPose>& grasp, const GripperPose& start, bool start_gripper_open,
                        const MotionConfig& config = {});

inline constexpr double kGripperOpen = 1.0;
inline constexpr double kGripperClosed = 0.0;

// [vx, vy, vz, wx, wy, wz, gripper]: world-frame twist held for one control
// period plus the finger command (1 open, 0 closed).
using Action = std::array<double, 7>;

struct Phase {
  std::string name;  // "grasp" or "manipulation"
  Point3 tool_offset{Point3::Zero()};
  std::vector<Action> actions;
};

struct ActionStream {
  double dt{0.2};
  std::vector<Phase> phases;
  std::size_t size() const;
};

// Trapezoidal, piecewise-linear sampling at the control rate. PathTooLong when
// a phase needs more than max_steps_per_phase steps.
ActionStream interpolate(const MotionPlan& plan, const MotionConfig& config = {});

// Integrates an action stream kinematically from a start pose; returns the pose after every step.
std::vector<GripperPose> integrate(const GripperPose& start, const ActionStream& stream);

nlohmann::json to_json(const AffordanceInstance& instance);
nlohmann::json to_json(const MotionPlan& plan);
nlohmann::json to_json(const Action& action);
Action action_from_json(const nlohmann::json& j);

}  // namespace keymark::motion
