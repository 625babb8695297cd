#include "keymark/motion/motion.hpp"

#include <cmath>

namespace keymark::motion {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  return a <= -kPi ? a + 2.0 * kPi : a;
}

Eigen::Matrix3d rot_z(double yaw) { return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

// Time and position of a rest-to-rest trapezoidal profile over distance d.
struct Trapezoid {
  double d{0.0}, vmax{1.0}, a{1.0};
  double ta{0.0}, tc{0.0}, vpeak{0.0};

  Trapezoid(double d_, double vmax_, double a_) : d(d_), vmax(vmax_), a(a_) {
    if (d >= vmax * vmax / a) {
      vpeak = vmax;
      ta = vmax / a;
      tc = (d - vmax * vmax / a) / vmax;
    } else {
      vpeak = std::sqrt(d * a);
      ta = vpeak / a;
      tc = 0.0;
    }
  }
  double duration() const { return 2.0 * ta + tc; }
  double at(double t) const {
    const double T = duration();
    if (t <= 0.0) return 0.0;
    if (t >= T) return d;
    if (t < ta) return 0.5 * a * t * t;
    if (t < ta + tc) return 0.5 * a * ta * ta + vpeak * (t - ta);
    const double r = T - t;
    return d - 0.5 * a * r * r;
  }
};

class Sampler {
 public:
  Sampler(const MotionConfig& cfg, GripperPose start, double grip)
      : cfg_(cfg), dt_(1.0 / cfg.control_rate_hz), cur_(std::move(start)), grip_(grip) {}

  void move_to(const GripperPose& target, std::vector<Action>& out) {
    const Point3 dp = target.position - cur_.position;
    const double dist = dp.norm();
    const double dyaw = wrap_angle(target.yaw - cur_.yaw);
    if (dist < 1e-12 && std::abs(dyaw) < 1e-12) return;

    const Trapezoid lin(dist, cfg_.max_speed, cfg_.accel);
    const Trapezoid ang(std::abs(dyaw), cfg_.max_yaw_rate, cfg_.yaw_accel);
    const Trapezoid& lead = lin.duration() >= ang.duration() ? lin : ang;
    const double T = lead.duration();
    const auto steps = static_cast<std::size_t>(std::ceil(T / dt_ - 1e-9));

    double prev = 0.0;
    for (std::size_t k = 1; k <= steps; ++k) {
      const double lambda = k == steps ? 1.0 : lead.at(k * dt_) / lead.d;
      const double dl = lambda - prev;
      const Point3 v = dp * (dl / dt_);
      out.push_back({v.x(), v.y(), v.z(), 0.0, 0.0, dyaw * dl / dt_, grip_});
      prev = lambda;
    }
    cur_ = target;
  }

  void set_gripper(double command, std::vector<Action>& out) {
    grip_ = command;
    out.push_back({0.0, 0.0, 0.0, 0.0, 0.0, 0.0, grip_});
  }

  const GripperPose& current() const { return cur_; }

 private:
  const MotionConfig& cfg_;
  double dt_;
  GripperPose cur_;
  double grip_;
};

void check_phase(const Phase& phase, const MotionConfig& cfg) {
  if (phase.actions.size() > cfg.max_steps_per_phase) {
    throw PathTooLong(phase.name + " phase needs " + std::to_string(phase.actions.size()) + " steps, limit is " +
                      std::to_string(cfg.max_steps_per_phase));
  }
}

nlohmann::json point_json(const std::optional<Point3>& p) {
  if (!p) return nullptr;
  return {p->x(), p->y(), p->z()};
}

nlohmann::json point_json(const Point3& p) { return {p.x(), p.y(), p.z()}; }

}  // namespace

AffordanceInstance lift_affordance(const prompts::AffordanceResponse& response, const marks::MarkSet& markset,
                                   const geometry::DepthImage& depth, const geometry::CameraModel& cam,
                                   std::uint64_t seed, const LiftConfig& config) {
  if (!depth.same_shape(markset.grid.width, markset.grid.height)) {
    throw DimensionMismatch("depth image does not match the annotated grid");
  }
  auto lift = [&](const std::string& label) -> std::optional<Point3> {
    if (label.empty()) return std::nullopt;
    const auto pixel = marks::resolve_selection(markset, label);
    return geometry::deproject(pixel, geometry::depth_at(depth, pixel), cam, geometry::Frame::world);
  };

  AffordanceInstance out;
  out.grasp_point = lift(response.grasp_keypoint);
  out.function_point = lift(response.function_keypoint);
  out.target_point = lift(response.target_keypoint);
  out.pre_contact_height = response.pre_contact_height;
  out.post_contact_height = response.post_contact_height;
  out.target_angle = response.target_angle;

  const auto& reference = out.target_point ? out.target_point : out.grasp_point;
  auto waypoint = [&](const std::optional<marks::TileId>& tile, const std::optional<Height>& height,
                      std::uint64_t salt) -> std::optional<Point3> {
    if (!tile) return std::nullopt;
    if (!reference) throw MissingPoints("waypoint tiles need a target or grasp point to set their height");
    const auto pixel = marks::sample_point_in_tile(markset.grid, *tile, mix(seed, salt));
    const double z = reference->z() + (height == Height::above ? config.h_above : 0.0);
    Point3 p = geometry::deproject_at_height(pixel, z, cam);
    p.z() = z;
    return p;
  };
  out.pre_contact = waypoint(response.pre_contact_tile, response.pre_contact_height, 1);
  out.post_contact = waypoint(response.post_contact_tile, response.post_contact_height, 2);
  return out;
}

Eigen::Vector3d target_axis(TargetAngle angle) {
  switch (angle) {
    case TargetAngle::forward:
      return Eigen::Vector3d::UnitX();
    case TargetAngle::backward:
      return -Eigen::Vector3d::UnitX();
    case TargetAngle::left:
      return Eigen::Vector3d::UnitY();
    case TargetAngle::right:
      return -Eigen::Vector3d::UnitY();
    case TargetAngle::upside:
      return Eigen::Vector3d::UnitZ();
    case TargetAngle::downside:
      return -Eigen::Vector3d::UnitZ();
  }
  return Eigen::Vector3d::UnitX();
}

Eigen::Matrix3d resolve_orientation(const AffordanceInstance& instance) {
  if (!instance.grasp_point || !instance.function_point || !instance.target_angle) {
    throw MissingPoints("orientation needs grasp_point, function_point and target_angle");
  }
  const Eigen::Vector3d axis = *instance.function_point - *instance.grasp_point;
  if (axis.norm() < 1e-9) throw DegenerateAxis("grasp and function points coincide");
  const Eigen::Vector3d a = axis.normalized();
  const Eigen::Vector3d b = target_axis(*instance.target_angle);

  const double angle = std::atan2(a.cross(b).norm(), a.dot(b));
  if (angle < 1e-6) return Eigen::Matrix3d::Identity();
  if (kPi - angle < 1e-6) {
    Eigen::Vector3d pivot = Eigen::Vector3d::UnitZ() - a.z() * a;
    if (pivot.norm() < 1e-6) pivot = Eigen::Vector3d::UnitY() - a.y() * a;
    return Eigen::AngleAxisd(kPi, pivot.normalized()).toRotationMatrix();
  }
  return Eigen::Quaterniond::FromTwoVectors(a, b).toRotationMatrix();
}

double yaw_component(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& axis) {
  const Eigen::Vector2d from = axis.head<2>();
  const Eigen::Vector2d to = (rotation * axis).head<2>();
  if (from.norm() < 1e-6 || to.norm() < 1e-6) return 0.0;
  return std::atan2(from.x() * to.y() - from.y() * to.x(), from.dot(to));
}

GraspPose plan_grasp_phase(const AffordanceInstance& instance, const geometry::DepthImage& depth,
                           const geometry::BinaryMask& mask, const geometry::CameraModel& cam, std::uint64_t seed,
                           const geometry::GraspSamplerConfig& sampler) {
  if (!instance.grasp_point) throw MissingPoints("grasp phase needs a grasp point");
  const auto proposals = geometry::sample_antipodal_grasps(depth, mask, cam, kGraspProposals, seed, sampler);
  const auto& best = geometry::nearest_grasp(proposals, *instance.grasp_point);
  return {best.center, best.yaw, best.width};
}

ManipulationPlan plan_manipulation_phase(const AffordanceInstance& instance) {
  ManipulationPlan plan;
  if (instance.target_point) {
    if (!instance.pre_contact) throw MissingPoints("pre_contact waypoint missing");
    if (!instance.post_contact) throw MissingPoints("post_contact waypoint missing");
    plan.via_points = {*instance.pre_contact, *instance.target_point, *instance.post_contact};
    plan.via_names = {"pre_contact", "target", "post_contact"};
  } else if (instance.grasp_point) {
    if (instance.pre_contact) {
      plan.via_points.push_back(*instance.pre_contact);
      plan.via_names.emplace_back("pre_contact");
    }
    if (instance.post_contact) {
      plan.via_points.push_back(*instance.post_contact);
      plan.via_names.emplace_back("post_contact");
    }
  } else {
    throw MissingPoints("manipulation needs a target point or a grasped object");
  }

  if (instance.function_point && instance.target_angle) {
    plan.orientation = resolve_orientation(instance);
    plan.yaw_delta = yaw_component(plan.orientation, *instance.function_point - *instance.grasp_point);
  }
  return plan;
}

MotionPlan compile_plan(const AffordanceInstance& instance, const ManipulationPlan& manipulation,
                        const std::optional<GraspPose>& grasp, const GripperPose& start, bool start_gripper_open,
                        const MotionConfig&) {
  MotionPlan plan;
  plan.start = start;
  plan.start_gripper_open = start_gripper_open;
  plan.grasp = grasp;
  plan.manipulation_path = manipulation.via_points;
  plan.via_names = manipulation.via_names;
  plan.manipulation_orientation = manipulation.orientation;

  const double base_yaw = grasp ? grasp->yaw : start.yaw;
  const double yaw = base_yaw + manipulation.yaw_delta;
  const Eigen::Matrix3d rz = rot_z(manipulation.yaw_delta);

  // Offset from the gripper to the point that must land on the via-points.
  Point3 held = Point3::Zero();
  if (grasp && instance.function_point) {
    held = *instance.function_point - grasp->position;
    plan.tool_offset = rot_z(-grasp->yaw) * held;
  } else if (grasp && instance.grasp_point) {
    held = *instance.grasp_point - grasp->position;
  }
  for (const auto& v : plan.manipulation_path) plan.gripper_waypoints.push_back({v - rz * held, yaw});

  if (grasp && !plan.manipulation_path.empty()) {
    if (instance.target_point) {
      if (instance.post_contact_height == Height::above) plan.release_after = 1;
    } else {
      plan.release_after = plan.manipulation_path.size() - 1;
    }
  }
  return plan;
}

std::size_t ActionStream::size() const {
  std::size_t n = 0;
  for (const auto& p : phases) n += p.actions.size();
  return n;
}

ActionStream interpolate(const MotionPlan& plan, const MotionConfig& config) {
  if (!plan.grasp_phase() && !plan.manipulation_phase()) throw MissingPoints("motion plan has no phase");
  ActionStream stream;
  stream.dt = 1.0 / config.control_rate_hz;
  Sampler sampler(config, plan.start, plan.start_gripper_open ? kGripperOpen : kGripperClosed);

  if (plan.grasp) {
    Phase phase{"grasp", Point3::Zero(), {}};
    if (!plan.start_gripper_open) sampler.set_gripper(kGripperOpen, phase.actions);
    const GripperPose above{plan.grasp->position + Point3(0.0, 0.0, config.grasp_clearance), plan.grasp->yaw};
    sampler.move_to(above, phase.actions);
    sampler.move_to({plan.grasp->position, plan.grasp->yaw}, phase.actions);
    sampler.set_gripper(kGripperClosed, phase.actions);
    sampler.move_to(above, phase.actions);
    check_phase(phase, config);
    stream.phases.push_back(std::move(phase));
  }

  if (plan.manipulation_phase()) {
    Phase phase{"manipulation", plan.tool_offset, {}};
    for (std::size_t i = 0; i < plan.gripper_waypoints.size(); ++i) {
      sampler.move_to(plan.gripper_waypoints[i], phase.actions);
      if (plan.release_after == i) sampler.set_gripper(kGripperOpen, phase.actions);
    }
    check_phase(phase, config);
    stream.phases.push_back(std::move(phase));
  }
  return stream;
}

std::vector<GripperPose> integrate(const GripperPose& start, const ActionStream& stream) {
  std::vector<GripperPose> out;
  GripperPose cur = start;
  for (const auto& phase : stream.phases) {
    for (const auto& a : phase.actions) {
      cur.position += Point3(a[0], a[1], a[2]) * stream.dt;
      cur.yaw += a[5] * stream.dt;
      out.push_back(cur);
    }
  }
  return out;
}

nlohmann::json to_json(const AffordanceInstance& instance) {
  return {{"grasp_point", point_json(instance.grasp_point)},
          {"function_point", point_json(instance.function_point)},
          {"target_point", point_json(instance.target_point)},
          {"pre_contact", point_json(instance.pre_contact)},
          {"post_contact", point_json(instance.post_contact)},
          {"target_angle", instance.target_angle ? nlohmann::json(std::string(to_string(*instance.target_angle)))
                                                 : nlohmann::json(nullptr)}};
}

nlohmann::json to_json(const MotionPlan& plan) {
  nlohmann::json j;
  j["start"] = {{"position", point_json(plan.start.position)}, {"yaw", plan.start.yaw}};
  j["start_gripper_open"] = plan.start_gripper_open;
  if (plan.grasp) {
    j["grasp"] = {{"position", point_json(plan.grasp->position)},
                  {"yaw", plan.grasp->yaw},
                  {"aperture", plan.grasp->aperture}};
  } else {
    j["grasp"] = nullptr;
  }
  j["manipulation_path"] = nlohmann::json::array();
  for (std::size_t i = 0; i < plan.manipulation_path.size(); ++i) {
    j["manipulation_path"].push_back({{"name", plan.via_names[i]},
                                      {"function_point", point_json(plan.manipulation_path[i])},
                                      {"gripper", point_json(plan.gripper_waypoints[i].position)},
                                      {"yaw", plan.gripper_waypoints[i].yaw}});
  }
  const auto& r = plan.manipulation_orientation;
  j["manipulation_orientation"] = {{r(0, 0), r(0, 1), r(0, 2)}, {r(1, 0), r(1, 1), r(1, 2)}, {r(2, 0), r(2, 1), r(2, 2)}};
  j["tool_offset"] = point_json(plan.tool_offset);
  j["release_after"] = plan.release_after ? nlohmann::json(*plan.release_after) : nlohmann::json(nullptr);
  j["phases"] = {{"grasp", plan.grasp_phase()}, {"manipulation", plan.manipulation_phase()}};
  return j;
}

nlohmann::json to_json(const Action& action) { return nlohmann::json(std::vector<double>(action.begin(), action.end())); }

Action action_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 7) throw MalformedJson("an action has exactly 7 components");
  Action a{};
  for (std::size_t i = 0; i < 7; ++i) a[i] = j.at(i).get<double>();
  return a;
}

}  // namespace keymark::motion
