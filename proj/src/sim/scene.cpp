#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "keymark/sim/sim.hpp"
#include "polygon.hpp"

namespace keymark::sim {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string to_string(MassClass m) { return m == MassClass::light ? "light" : "heavy"; }

std::string to_string(ArticulationKind k) {
  switch (k) {
    case ArticulationKind::button:
      return "button";
    case ArticulationKind::lid:
      return "lid";
    case ArticulationKind::drawer:
      return "drawer";
    case ArticulationKind::cable:
      return "cable";
  }
  return "button";
}

ArticulationKind parse_kind(const std::string& s) {
  if (s == "button") return ArticulationKind::button;
  if (s == "lid") return ArticulationKind::lid;
  if (s == "drawer") return ArticulationKind::drawer;
  if (s == "cable") return ArticulationKind::cable;
  throw SceneError("unknown articulation kind \"" + s + "\"");
}

std::string to_string(PredicateKind k) {
  switch (k) {
    case PredicateKind::inside_region:
      return "inside_region";
    case PredicateKind::displaced_beyond:
      return "displaced_beyond";
    case PredicateKind::articulation_at:
      return "articulation_at";
    case PredicateKind::contact_made:
      return "contact_made";
  }
  return "inside_region";
}

PredicateKind parse_predicate(const std::string& s) {
  if (s == "inside_region") return PredicateKind::inside_region;
  if (s == "displaced_beyond") return PredicateKind::displaced_beyond;
  if (s == "articulation_at") return PredicateKind::articulation_at;
  if (s == "contact_made") return PredicateKind::contact_made;
  throw SceneError("unknown predicate kind \"" + s + "\"");
}

nlohmann::json vec2_json(const Eigen::Vector2d& v) { return {v.x(), v.y()}; }

Eigen::Vector2d vec2_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw SceneError("expected [x, y], got " + j.dump());
  return {j[0].get<double>(), j[1].get<double>()};
}

// Parts may be written as an explicit polygon or as a box/circle shorthand.
Part part_from_json(const nlohmann::json& j) {
  Part p;
  if (j.contains("polygon")) {
    for (const auto& v : j.at("polygon")) p.polygon.push_back(vec2_from(v));
  } else if (j.contains("box")) {
    const auto size = vec2_from(j.at("box"));
    const double hx = size.x() / 2.0;
    const double hy = size.y() / 2.0;
    p.polygon = {{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}};
  } else if (j.contains("circle")) {
    const double r = j.at("circle").get<double>();
    const int n = j.value("segments", 12);
    for (int i = 0; i < n; ++i) p.polygon.emplace_back(r * std::cos(2.0 * kPi * i / n), r * std::sin(2.0 * kPi * i / n));
  } else {
    throw SceneError("part needs one of polygon, box or circle");
  }
  const Eigen::Vector2d offset = j.contains("offset") ? vec2_from(j.at("offset")) : Eigen::Vector2d::Zero();
  p.polygon = poly::transform(p.polygon, offset.x(), offset.y(), j.value("angle", 0.0));
  p.height = j.at("height").get<double>();
  p.wall = j.value("wall", 0.0);
  p.floor = j.value("floor", 0.0);
  return p;
}

geometry::Rgb color_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != 3) throw SceneError("color needs three components");
  return {static_cast<std::uint8_t>(v[0]), static_cast<std::uint8_t>(v[1]), static_cast<std::uint8_t>(v[2])};
}

}  // namespace

bool ObjectSpec::graspable() const {
  return mass == MassClass::light && (!articulation || articulation->kind == ArticulationKind::cable);
}

const ObjectSpec* SceneSpec::find(std::string_view name) const {
  for (const auto& o : objects)
    if (o.name == name) return &o;
  return nullptr;
}

geometry::CameraModel default_camera(int width, int height) {
  geometry::CameraModel cam;
  cam.fx = cam.fy = 300.0;
  cam.cx = (width - 1) / 2.0;
  cam.cy = (height - 1) / 2.0;
  Eigen::Matrix3d r;
  r << 0, -1, 0, -1, 0, 0, 0, 0, -1;
  cam.extrinsic = Eigen::Isometry3d::Identity();
  cam.extrinsic.linear() = r;
  cam.extrinsic.translation() = Eigen::Vector3d(0.5, 0.0, 1.0);
  return cam;
}

void to_json(nlohmann::json& j, const SuccessPredicate& p) {
  j = {{"kind", to_string(p.kind)}, {"object", p.object}};
  if (p.region) j["region"] = *p.region;
  if (!p.container.empty()) j["container"] = p.container;
  if (p.direction) j["direction"] = vec2_json(*p.direction);
  if (p.kind == PredicateKind::displaced_beyond) j["distance"] = p.distance;
  if (p.min) j["min"] = *p.min;
  if (p.max) j["max"] = *p.max;
}

void from_json(const nlohmann::json& j, SuccessPredicate& p) {
  p.kind = parse_predicate(j.at("kind").get<std::string>());
  p.object = j.at("object").get<std::string>();
  if (j.contains("region")) p.region = j.at("region").get<std::array<double, 4>>();
  p.container = j.value("container", std::string{});
  if (j.contains("direction")) p.direction = vec2_from(j.at("direction")).normalized();
  p.distance = j.value("distance", 0.0);
  if (j.contains("min")) p.min = j.at("min").get<double>();
  if (j.contains("max")) p.max = j.at("max").get<double>();
  if (p.kind == PredicateKind::inside_region && !p.region && p.container.empty()) {
    throw SceneError("inside_region needs a region or a container");
  }
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j["name"] = s.name;
  j["family"] = s.family;
  j["task"] = s.task;
  j["seed"] = s.seed;
  j["image"] = {{"width", s.width}, {"height", s.height}};
  j["camera"] = s.camera;
  j["table"] = {{"x", {s.table.x0, s.table.x1}}, {"y", {s.table.y0, s.table.y1}}, {"color", s.table.color}};
  j["neutral"] = {{"position", {s.neutral.position.x(), s.neutral.position.y(), s.neutral.position.z()}},
                  {"yaw", s.neutral.yaw}};
  j["gripper"] = {{"max_aperture", s.max_aperture},
                  {"attach_tolerance", s.attach_tolerance},
                  {"contact_tolerance", s.contact_tolerance}};
  j["jitter"] = {{"xy", s.jitter_xy}, {"yaw", s.jitter_yaw}};
  j["objects"] = nlohmann::json::array();
  for (const auto& o : s.objects) {
    nlohmann::json oj;
    oj["name"] = o.name;
    if (!o.group.empty()) oj["group"] = o.group;
    oj["pose"] = {o.pose.x(), o.pose.y(), o.pose.z()};
    if (o.z) oj["z"] = *o.z;
    oj["color"] = o.color;
    oj["mass"] = to_string(o.mass);
    oj["parts"] = nlohmann::json::array();
    for (const auto& p : o.parts) {
      nlohmann::json pj;
      for (const auto& v : p.polygon) pj["polygon"].push_back(vec2_json(v));
      pj["height"] = p.height;
      if (p.wall > 0.0) {
        pj["wall"] = p.wall;
        pj["floor"] = p.floor;
      }
      oj["parts"].push_back(pj);
    }
    if (o.articulation) {
      oj["articulation"] = {{"kind", to_string(o.articulation->kind)},
                            {"value", o.articulation->value},
                            {"travel", o.articulation->travel}};
    }
    j["objects"].push_back(oj);
  }
  j["stages"] = s.stages;
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  s.name = j.value("name", std::string{});
  s.family = j.value("family", s.name);
  s.task = j.value("task", std::string{});
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("image")) {
    s.width = j.at("image").at("width").get<int>();
    s.height = j.at("image").at("height").get<int>();
  }
  s.camera = j.contains("camera") ? j.at("camera").get<geometry::CameraModel>() : default_camera(s.width, s.height);
  s.camera.validate();
  if (j.contains("table")) {
    const auto& t = j.at("table");
    const auto x = t.at("x").get<std::array<double, 2>>();
    const auto y = t.at("y").get<std::array<double, 2>>();
    s.table.x0 = x[0];
    s.table.x1 = x[1];
    s.table.y0 = y[0];
    s.table.y1 = y[1];
    if (t.contains("color")) s.table.color = color_from(t.at("color"));
  }
  if (j.contains("neutral")) {
    const auto p = j.at("neutral").at("position").get<std::array<double, 3>>();
    s.neutral.position = Point3(p[0], p[1], p[2]);
    s.neutral.yaw = j.at("neutral").value("yaw", 0.0);
  }
  if (j.contains("gripper")) {
    const auto& g = j.at("gripper");
    s.max_aperture = g.value("max_aperture", s.max_aperture);
    s.attach_tolerance = g.value("attach_tolerance", s.attach_tolerance);
    s.contact_tolerance = g.value("contact_tolerance", s.contact_tolerance);
  }
  if (j.contains("jitter")) {
    s.jitter_xy = j.at("jitter").value("xy", s.jitter_xy);
    s.jitter_yaw = j.at("jitter").value("yaw", s.jitter_yaw);
  }
  s.objects.clear();
  for (const auto& oj : j.at("objects")) {
    ObjectSpec o;
    o.name = oj.at("name").get<std::string>();
    o.group = oj.value("group", std::string{});
    const auto pose = oj.at("pose").get<std::array<double, 3>>();
    o.pose = Eigen::Vector3d(pose[0], pose[1], pose[2]);
    if (oj.contains("z")) o.z = oj.at("z").get<double>();
    if (oj.contains("color")) o.color = color_from(oj.at("color"));
    const std::string mass = oj.value("mass", std::string("light"));
    if (mass != "light" && mass != "heavy") throw SceneError("mass must be light or heavy, got " + mass);
    o.mass = mass == "light" ? MassClass::light : MassClass::heavy;
    if (oj.contains("parts")) {
      for (const auto& pj : oj.at("parts")) o.parts.push_back(part_from_json(pj));
    } else {
      o.parts.push_back(part_from_json(oj));
    }
    if (oj.contains("articulation")) {
      const auto& aj = oj.at("articulation");
      Articulation a;
      a.kind = parse_kind(aj.at("kind").get<std::string>());
      const double default_value = a.kind == ArticulationKind::button ? 0.0 : 1.0;
      a.value = aj.value("value", default_value);
      a.travel = aj.value("travel", a.travel);
      o.articulation = a;
    }
    s.objects.push_back(std::move(o));
  }
  s.stages = j.value("stages", std::vector<std::vector<SuccessPredicate>>{});
}

void validate(const SceneSpec& spec) {
  std::set<std::string> names;
  for (const auto& o : spec.objects) {
    if (o.name.empty()) throw SceneError("object without a name");
    if (o.name == kGripperMaskName) throw SceneError("\"gripper\" is reserved");
    if (!names.insert(o.name).second) throw SceneError("duplicate object name \"" + o.name + "\"");
    if (o.parts.empty()) throw SceneError(o.name + " has no parts");
    for (const auto& p : o.parts) {
      if (!poly::is_convex_ccw(p.polygon)) throw SceneError(o.name + " has a part that is not convex and counter-clockwise");
      if (p.height <= 0.0) throw SceneError(o.name + " has a part without height");
      for (const auto& v : poly::transform(p.polygon, o.pose.x(), o.pose.y(), o.pose.z())) {
        if (v.x() < spec.table.x0 || v.x() > spec.table.x1 || v.y() < spec.table.y0 || v.y() > spec.table.y1) {
          throw SceneError(o.name + " leaves the table at spawn");
        }
      }
    }
    if (o.articulation && o.articulation->kind == ArticulationKind::lid && o.parts.size() != 1) {
      throw SceneError(o.name + ": a lid is a single rectangular part");
    }
  }
  for (const auto& stage : spec.stages) {
    for (const auto& p : stage) {
      if (!names.count(p.object)) throw SceneError("predicate names unknown object \"" + p.object + "\"");
      if (!p.container.empty() && !names.count(p.container)) {
        throw SceneError("predicate names unknown container \"" + p.container + "\"");
      }
    }
  }
}

SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene " + path.string());
  SceneSpec spec;
  try {
    spec = nlohmann::json::parse(in).get<SceneSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw SceneError("bad scene " + path.string() + ": " + e.what());
  }
  validate(spec);
  return spec;
}

SceneSpec jitter_scene(const SceneSpec& spec, int variation) {
  if (variation == 0) return spec;
  SceneSpec out = spec;
  std::mt19937_64 rng(spec.seed * 1000003ULL + static_cast<std::uint64_t>(variation));
  std::uniform_real_distribution<double> dxy(-spec.jitter_xy, spec.jitter_xy);
  std::uniform_real_distribution<double> dyaw(-spec.jitter_yaw, spec.jitter_yaw);

  std::map<std::string, std::pair<Eigen::Vector3d, Eigen::Vector3d>> groups;  // anchor pose, offset
  for (auto& o : out.objects) {
    const std::string key = o.group.empty() ? o.name : o.group;
    auto it = groups.find(key);
    if (it == groups.end()) {
      const Eigen::Vector3d offset(dxy(rng), dxy(rng), dyaw(rng));
      it = groups.emplace(key, std::make_pair(o.pose, offset)).first;
    }
    const auto& [anchor, offset] = it->second;
    const double c = std::cos(offset.z());
    const double s = std::sin(offset.z());
    const Eigen::Vector2d rel = o.pose.head<2>() - anchor.head<2>();
    o.pose.x() = anchor.x() + offset.x() + c * rel.x() - s * rel.y();
    o.pose.y() = anchor.y() + offset.y() + s * rel.x() + c * rel.y();
    o.pose.z() += offset.z();
  }
  out.name = spec.name + "-v" + std::to_string(variation);
  validate(out);
  return out;
}

std::vector<WorldPart> world_parts(const ObjectState& object, const ObjectSpec& spec) {
  std::vector<WorldPart> out;
  const double base = object.position.z();
  const auto kind = spec.articulation ? std::optional(spec.articulation->kind) : std::nullopt;

  if (kind == ArticulationKind::lid) {
    // Hinged along the part's low-x edge; upright at value 1, shut at 0.
    const auto box = poly::bounds(spec.parts[0].polygon);
    const double length = box.x1 - box.x0;
    const double thick = spec.parts[0].height;
    const double theta = std::clamp(object.value, 0.0, 1.0) * kPi / 2.0;
    const double reach = std::max(thick, length * std::cos(theta));
    const double rise = std::max(thick, length * std::sin(theta));
    const poly::Polygon local{{box.x0, box.y0}, {box.x0 + reach, box.y0}, {box.x0 + reach, box.y1}, {box.x0, box.y1}};
    out.push_back({poly::transform(local, object.position.x(), object.position.y(), object.yaw), base, base + rise});
    return out;
  }

  for (const auto& part : spec.parts) {
    poly::Polygon local = part.polygon;
    if (kind == ArticulationKind::drawer) {
      for (auto& v : local) v.x() += object.value * spec.articulation->travel;
    }
    double height = part.height;
    if (kind == ArticulationKind::button) height *= 1.0 - 0.5 * std::clamp(object.value, 0.0, 1.0);
    WorldPart w{poly::transform(local, object.position.x(), object.position.y(), object.yaw), base, base + height,
                part.wall, part.floor};
    out.push_back(std::move(w));
  }
  return out;
}

Eigen::Vector2d footprint_centroid(const ObjectState& object, const ObjectSpec& spec) {
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  double area = 0.0;
  for (const auto& p : world_parts(object, spec)) {
    const double a = poly::signed_area(p.polygon);
    sum += a * poly::centroid(p.polygon);
    area += a;
  }
  return sum / area;
}

const ObjectState* SimState::find(std::string_view name) const {
  for (const auto& o : objects)
    if (o.name == name) return &o;
  return nullptr;
}

ObjectState* SimState::find(std::string_view name) {
  for (auto& o : objects)
    if (o.name == name) return &o;
  return nullptr;
}

nlohmann::json to_json(const SimState& s) {
  nlohmann::json j;
  j["objects"] = nlohmann::json::array();
  for (const auto& o : s.objects) {
    j["objects"].push_back({{"name", o.name},
                            {"position", {o.position.x(), o.position.y(), o.position.z()}},
                            {"yaw", o.yaw},
                            {"value", o.value},
                            {"origin", vec2_json(o.origin)}});
  }
  const auto& g = s.gripper;
  j["gripper"] = {{"position", {g.position.x(), g.position.y(), g.position.z()}},
                  {"yaw", g.yaw},
                  {"aperture", g.aperture},
                  {"closed", g.closed}};
  j["attached"] = s.attached;
  j["attach_offset"] = {s.attach_offset[0], s.attach_offset[1], s.attach_offset[2], s.attach_offset[3]};
  j["tool_offset"] = {s.tool_offset.x(), s.tool_offset.y(), s.tool_offset.z()};
  j["step_counter"] = s.step_counter;
  j["contacts"] = s.contacts;
  return j;
}

SimState state_from_json(const nlohmann::json& j) {
  SimState s;
  try {
    for (const auto& oj : j.at("objects")) {
      ObjectState o;
      o.name = oj.at("name").get<std::string>();
      const auto p = oj.at("position").get<std::array<double, 3>>();
      o.position = Eigen::Vector3d(p[0], p[1], p[2]);
      o.yaw = oj.at("yaw").get<double>();
      o.value = oj.at("value").get<double>();
      o.origin = vec2_from(oj.at("origin"));
      s.objects.push_back(std::move(o));
    }
    const auto& g = j.at("gripper");
    const auto gp = g.at("position").get<std::array<double, 3>>();
    s.gripper.position = Point3(gp[0], gp[1], gp[2]);
    s.gripper.yaw = g.at("yaw").get<double>();
    s.gripper.aperture = g.at("aperture").get<double>();
    s.gripper.closed = g.at("closed").get<bool>();
    s.attached = j.at("attached").get<std::string>();
    const auto ao = j.at("attach_offset").get<std::array<double, 4>>();
    s.attach_offset = Eigen::Vector4d(ao[0], ao[1], ao[2], ao[3]);
    const auto to = j.at("tool_offset").get<std::array<double, 3>>();
    s.tool_offset = Point3(to[0], to[1], to[2]);
    s.step_counter = j.at("step_counter").get<std::size_t>();
    s.contacts = j.at("contacts").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedJson(std::string("bad sim state: ") + e.what());
  }
  return s;
}

}  // namespace keymark::sim
