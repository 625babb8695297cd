#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Geometry>
#include <json.hpp>

#include "keymark/geometry/camera.hpp"
#include "keymark/motion/motion.hpp"

namespace keymark::sim {

using geometry::Point3;

inline constexpr std::size_t kStageStepLimit = 100;
inline constexpr double kControlPeriod = 0.2;
inline const std::string kGripperMaskName = "gripper";

enum class MassClass { light, heavy };
enum class ArticulationKind { button, lid, drawer, cable };

// One convex prism of an object's footprint, in the object frame. A part with
// a wall is a receptacle: its rim is `height` tall and its inside floor `floor` tall.
struct Part {
  std::vector<Eigen::Vector2d> polygon;  // counter-clockwise in the object frame
  double height{0.05};
  double wall{0.0};
  double floor{0.0};
};

// value: button 0 up / 1 pressed; lid 1 upright / 0 shut; drawer 1 pulled out / 0 shut;
// cable 1 plugged / 0 out. `travel` is the drawer stroke or the cable pull-out distance.
struct Articulation {
  ArticulationKind kind{ArticulationKind::button};
  double value{0.0};
  double travel{0.03};
};

struct ObjectSpec {
  std::string name;
  std::string group;  // objects sharing a group are jittered as one body
  std::vector<Part> parts;
  Eigen::Vector3d pose{Eigen::Vector3d::Zero()};  // x, y, yaw
  std::optional<double> z;                        // base height; default rests on what is below
  geometry::Rgb color{128, 128, 128};
  MassClass mass{MassClass::light};
  std::optional<Articulation> articulation;

  bool graspable() const;
};

struct TableSpec {
  double x0{0.1}, x1{0.9}, y0{-0.54}, y1{0.54};
  geometry::Rgb color{196, 170, 130};
};

enum class PredicateKind { inside_region, displaced_beyond, articulation_at, contact_made };

struct SuccessPredicate {
  PredicateKind kind{PredicateKind::inside_region};
  std::string object;
  std::optional<std::array<double, 4>> region;  // x0, x1, y0, y1
  std::string container;                        // receptacle object, alternative to region
  std::optional<Eigen::Vector2d> direction;     // displaced_beyond: measure along this axis
  double distance{0.0};
  std::optional<double> min;
  std::optional<double> max;
};

struct SceneSpec {
  std::string name;
  std::string family;
  std::string task;
  std::uint64_t seed{0};
  int width{320};
  int height{240};
  geometry::CameraModel camera;
  TableSpec table;
  motion::GripperPose neutral{{-0.1, 0.0, 0.5}, 0.0};
  double max_aperture{0.085};
  double attach_tolerance{0.01};
  double contact_tolerance{0.01};
  double jitter_xy{0.02};
  double jitter_yaw{0.0873};
  std::vector<ObjectSpec> objects;
  std::vector<std::vector<SuccessPredicate>> stages;  // predicates checked after subtask k

  const ObjectSpec* find(std::string_view name) const;
};

// Camera at (0.5, 0, 1) looking straight down: image right is world -y, image down is world -x.
geometry::CameraModel default_camera(int width = 320, int height = 240);

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);
void to_json(nlohmann::json& j, const SuccessPredicate& p);
void from_json(const nlohmann::json& j, SuccessPredicate& p);

// Throws SceneError for duplicate or reserved names, non-convex parts and
// footprints that leave the table.
void validate(const SceneSpec& spec);
SceneSpec load_scene(const std::filesystem::path& path);

// Variation 0 is the scene as written; others move each group by a seeded
// offset within +-jitter_xy and +-jitter_yaw about its first member.
SceneSpec jitter_scene(const SceneSpec& spec, int variation);

struct ObjectState {
  std::string name;
  Eigen::Vector3d position{Eigen::Vector3d::Zero()};  // x, y, base z
  double yaw{0.0};
  double value{0.0};                                  // articulation parameter
  Eigen::Vector2d origin{Eigen::Vector2d::Zero()};    // footprint centroid at spawn
  friend bool operator==(const ObjectState&, const ObjectState&) = default;
};

struct GripperState {
  Point3 position{Point3::Zero()};
  double yaw{0.0};
  double aperture{0.085};
  bool closed{false};
  friend bool operator==(const GripperState&, const GripperState&) = default;
};

struct SimState {
  std::vector<ObjectState> objects;
  GripperState gripper;
  std::string attached;                         // empty when nothing is held
  Eigen::Vector4d attach_offset{Eigen::Vector4d::Zero()};  // object pose in the gripper frame: x, y, z, yaw
  Point3 tool_offset{Point3::Zero()};           // function point in the gripper frame
  std::size_t step_counter{0};
  std::vector<std::string> contacts;            // objects touched by the function point, sorted
  friend bool operator==(const SimState&, const SimState&) = default;

  const ObjectState* find(std::string_view name) const;
  ObjectState* find(std::string_view name);
};

nlohmann::json to_json(const SimState& state);
SimState state_from_json(const nlohmann::json& j);

SimState spawn(const SceneSpec& spec);

struct Observation {
  geometry::RgbImage rgb;
  geometry::DepthImage depth;
  std::map<std::string, geometry::BinaryMask> masks;  // visible pixels per object, plus the gripper
  motion::GripperPose gripper;
  double aperture{0.0};
};

Observation render(const SimState& state, const SceneSpec& spec);

// One control period. Motion first, then interactions of the function point's
// swept segment, then the finger command.
SimState step(const SimState& state, const motion::Action& action, const SceneSpec& spec);

// Gripper to the neutral pose (held object follows), tool offset cleared, step counter reset.
SimState reset_to_neutral(const SimState& state, const SceneSpec& spec);

// Starts a new stage: step counter back to zero and the function point offset for it.
SimState begin_stage(const SimState& state, const Point3& tool_offset);

// World footprint of an object in its current state (articulations applied).
struct WorldPart {
  std::vector<Eigen::Vector2d> polygon;
  double base{0.0};
  double top{0.0};
  double wall{0.0};
  double floor{0.0};
};
std::vector<WorldPart> world_parts(const ObjectState& object, const ObjectSpec& spec);
Eigen::Vector2d footprint_centroid(const ObjectState& object, const ObjectSpec& spec);

struct PredicateOutcome {
  std::string description;
  bool satisfied{false};
};

struct SuccessReport {
  bool success{true};
  std::vector<PredicateOutcome> outcomes;
};

SuccessReport check_success(const SimState& state, const SceneSpec& spec,
                            const std::vector<SuccessPredicate>& predicates);

}  // namespace keymark::sim
