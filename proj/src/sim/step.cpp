#include <algorithm>
#include <cmath>
#include <sstream>

#include "internal.hpp"

namespace keymark::sim {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLidFallAngle = 75.0 * kPi / 180.0;

Eigen::Matrix3d rot_z(double yaw) { return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

Point3 function_point(const GripperState& g, const Point3& tool_offset) {
  return g.position + rot_z(g.yaw) * tool_offset;
}

Eigen::Vector2d to_local(const ObjectState& o, const Eigen::Vector2d& p) {
  const double c = std::cos(o.yaw);
  const double s = std::sin(o.yaw);
  const Eigen::Vector2d d = p - o.position.head<2>();
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y()};
}

poly::Box local_bounds(const ObjectSpec& spec) {
  poly::Box box = poly::bounds(spec.parts.front().polygon);
  for (const auto& part : spec.parts) {
    const auto b = poly::bounds(part.polygon);
    box = {std::min(box.x0, b.x0), std::max(box.x1, b.x1), std::min(box.y0, b.y0), std::max(box.y1, b.y1)};
  }
  return box;
}

void update_cable(ObjectState& o, const ObjectSpec& spec) {
  if (!spec.articulation || spec.articulation->kind != ArticulationKind::cable) return;
  const double pulled = (footprint_centroid(o, spec) - o.origin).norm();
  o.value = std::clamp(1.0 - pulled / spec.articulation->travel, 0.0, 1.0);
}

void follow_gripper(SimState& s, const SceneSpec& spec) {
  if (s.attached.empty()) return;
  ObjectState* o = s.find(s.attached);
  const Point3 offset = s.attach_offset.head<3>();
  o->position = s.gripper.position + rot_z(s.gripper.yaw) * offset;
  o->yaw = s.gripper.yaw + s.attach_offset[3];
  update_cable(*o, *spec.find(o->name));
}

// Earliest parameter along f0->f1 at which the point is inside a part (with
// the contact tolerance on height), if it enters at all.
std::optional<double> entry_parameter(const std::vector<WorldPart>& parts, const Point3& f0, const Point3& f1,
                                      double tol) {
  std::optional<double> best;
  for (const auto& part : parts) {
    const double lo = part.base - tol;
    const double hi = part.top + tol;
    double t0 = 0.0;
    double t1 = 1.0;
    const double dz = f1.z() - f0.z();
    if (std::abs(dz) < 1e-12) {
      if (f0.z() < lo || f0.z() > hi) continue;
    } else {
      double ta = (lo - f0.z()) / dz;
      double tb = (hi - f0.z()) / dz;
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) continue;
    }
    // A point already inside the part is leaving it, not entering.
    if (f0.z() > lo && f0.z() < hi && poly::contains(part.polygon, f0.head<2>(), -1e-9)) continue;
    const auto span = poly::clip(part.polygon, f0.head<2>(), f1.head<2>(), t0, t1);
    // Grazing the boundary on the way out is not an entry.
    if (span && span->second - span->first > 1e-9 && (!best || span->first < *best)) best = span->first;
  }
  return best;
}

bool press_button(ObjectState& o, const std::vector<WorldPart>& parts, const Point3& f0, const Point3& f1, double tol) {
  if (f1.z() >= f0.z()) return false;
  for (const auto& part : parts) {
    if (poly::contains(part.polygon, f1.head<2>(), 1e-9) && f1.z() <= part.top + tol) {
      o.value = 1.0;
      return true;
    }
  }
  return false;
}

// The lid is a panel hinged on its low local-x edge. Its free edge sits at
// s_e = L cos(theta) from the hinge; a point sweeping past that edge below the
// panel's height drags it down, and past kLidFallAngle from vertical it falls shut.
bool push_lid(ObjectState& o, const ObjectSpec& spec, const Point3& f0, const Point3& f1, double tol) {
  const auto box = poly::bounds(spec.parts.front().polygon);
  const double length = box.x1 - box.x0;
  const double theta = std::clamp(o.value, 0.0, 1.0) * kPi / 2.0;
  const double edge = length * std::cos(theta);
  const Eigen::Vector2d l0 = to_local(o, f0.head<2>());
  const Eigen::Vector2d l1 = to_local(o, f1.head<2>());
  const double s0 = l0.x() - box.x0;
  const double s1 = l1.x() - box.x0;
  const double z = f1.z() - o.position.z();
  if (s0 > edge + 1e-6 || s1 <= edge) return false;
  if (l1.y() < box.y0 || l1.y() > box.y1) return false;
  if (z < -tol || z > std::max(spec.parts.front().height, length * std::sin(theta)) + tol) return false;
  const double new_edge = std::min(length, s1);
  double new_theta = std::acos(std::clamp(new_edge / length, -1.0, 1.0));
  if (new_theta < kLidFallAngle) new_theta = 0.0;
  o.value = std::min(o.value, new_theta / (kPi / 2.0));
  return true;
}

// A drawer closes when something crosses its front face moving inward.
bool push_drawer(ObjectState& o, const ObjectSpec& spec, const std::vector<WorldPart>& parts, const Point3& f0,
                 const Point3& f1, double tol) {
  const auto box = local_bounds(spec);
  const double travel = spec.articulation->travel;
  const double front = box.x1 + o.value * travel;
  const Eigen::Vector2d l0 = to_local(o, f0.head<2>());
  const Eigen::Vector2d l1 = to_local(o, f1.head<2>());
  if (l0.x() < front - 1e-6 || l1.x() >= front) return false;
  if (l1.y() < box.y0 || l1.y() > box.y1) return false;
  double top = 0.0;
  for (const auto& p : parts) top = std::max(top, p.top);
  if (f1.z() < o.position.z() - tol || f1.z() > top + tol) return false;
  o.value = std::min(o.value, std::clamp((l1.x() - box.x1) / travel, 0.0, 1.0));
  return true;
}

void interact(SimState& s, const SceneSpec& spec, const Point3& f0, const Point3& f1) {
  const double tol = spec.contact_tolerance;
  for (auto& o : s.objects) {
    if (o.name == s.attached) continue;
    const ObjectSpec& os = *spec.find(o.name);
    const auto parts = world_parts(o, os);
    const auto entry = entry_parameter(parts, f0, f1, tol);
    bool touched = entry.has_value();

    if (os.articulation) {
      switch (os.articulation->kind) {
        case ArticulationKind::button:
          touched = press_button(o, parts, f0, f1, tol) || touched;
          break;
        case ArticulationKind::lid:
          touched = push_lid(o, os, f0, f1, tol) || touched;
          break;
        case ArticulationKind::drawer:
          touched = push_drawer(o, os, parts, f0, f1, tol) || touched;
          break;
        case ArticulationKind::cable:
          break;
      }
    } else if (entry && os.mass == MassClass::light) {
      // Quasi-static push: the object moves by whatever part of the step
      // happened after the point entered it.
      const Eigen::Vector2d d = f1.head<2>() - f0.head<2>();
      if (d.norm() > 1e-12 && *entry < 1.0) o.position.head<2>() += (1.0 - *entry) * d;
    }

    if (touched && !std::binary_search(s.contacts.begin(), s.contacts.end(), o.name)) {
      s.contacts.insert(std::upper_bound(s.contacts.begin(), s.contacts.end(), o.name), o.name);
    }
  }
}

void close_fingers(SimState& s, const SceneSpec& spec) {
  const auto& g = s.gripper;
  const Eigen::Vector2d dir(std::cos(g.yaw), std::sin(g.yaw));
  const Eigen::Vector2d a = g.position.head<2>() - dir;
  const Eigen::Vector2d b = g.position.head<2>() + dir;
  const double tol = spec.attach_tolerance;

  std::string best;
  double best_offset = std::numeric_limits<double>::infinity();
  double best_width = 0.0;
  for (const auto& o : s.objects) {
    const ObjectSpec& os = *spec.find(o.name);
    if (!os.graspable()) continue;
    for (const auto& part : world_parts(o, os)) {
      if (g.position.z() < part.base - tol || g.position.z() > part.top + tol) continue;
      const auto span = poly::clip(part.polygon, a, b);
      if (!span) continue;
      const double c0 = -1.0 + 2.0 * span->first;
      const double c1 = -1.0 + 2.0 * span->second;
      const double offset = std::abs(0.5 * (c0 + c1));
      const double width = c1 - c0;
      if (offset > tol || width > g.aperture + 1e-9) continue;
      if (offset < best_offset) {
        best = o.name;
        best_offset = offset;
        best_width = width;
      }
    }
  }
  s.gripper.closed = true;
  if (best.empty()) {
    s.gripper.aperture = 0.0;
    return;
  }
  const ObjectState& o = *s.find(best);
  s.attached = best;
  const Point3 rel = rot_z(-g.yaw) * (o.position - g.position);
  s.attach_offset = Eigen::Vector4d(rel.x(), rel.y(), rel.z(), o.yaw - g.yaw);
  s.gripper.aperture = best_width;
}

void open_fingers(SimState& s, const SceneSpec& spec) {
  s.gripper.closed = false;
  s.gripper.aperture = spec.max_aperture;
  if (s.attached.empty()) return;
  ObjectState& o = *s.find(s.attached);
  const ObjectSpec& os = *spec.find(o.name);
  o.position.z() = detail::support_height(detail::footprint_probes(world_parts(o, os)), s, spec, o.name);
  s.attached.clear();
  s.attach_offset.setZero();
  s.tool_offset.setZero();
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(4);
  os << x;
  return os.str();
}

PredicateOutcome evaluate(const SimState& state, const SceneSpec& spec, const SuccessPredicate& p) {
  const ObjectState* o = state.find(p.object);
  const ObjectSpec* os = spec.find(p.object);
  if (!o || !os) return {"unknown object " + p.object, false};
  const Eigen::Vector2d c = footprint_centroid(*o, *os);
  switch (p.kind) {
    case PredicateKind::inside_region: {
      if (p.region) {
        const auto& r = *p.region;
        const bool in = c.x() >= r[0] && c.x() <= r[1] && c.y() >= r[2] && c.y() <= r[3];
        return {p.object + " inside region", in};
      }
      const ObjectState* k = state.find(p.container);
      const ObjectSpec* ks = spec.find(p.container);
      if (!k || !ks) return {"unknown container " + p.container, false};
      bool in = false;
      for (const auto& part : world_parts(*k, *ks)) {
        const auto inner = detail::cavity(part);
        if (!inner.empty()) {
          in = in || (poly::contains(inner, c, 1e-9) && o->position.z() < part.top);
        } else {
          in = in || (poly::contains(part.polygon, c, 1e-9) && o->position.z() >= part.top - spec.contact_tolerance);
        }
      }
      return {p.object + " inside " + p.container, in};
    }
    case PredicateKind::displaced_beyond: {
      const Eigen::Vector2d d = c - o->origin;
      const double moved = p.direction ? d.dot(*p.direction) : d.norm();
      return {p.object + " displaced " + fmt(moved) + " m (need " + fmt(p.distance) + ")", moved >= p.distance};
    }
    case PredicateKind::articulation_at: {
      const bool ok = (!p.min || o->value >= *p.min - 1e-9) && (!p.max || o->value <= *p.max + 1e-9);
      return {p.object + " articulation " + fmt(o->value), ok};
    }
    case PredicateKind::contact_made: {
      const bool ok = std::binary_search(state.contacts.begin(), state.contacts.end(), p.object);
      return {p.object + " touched", ok};
    }
  }
  return {"unknown predicate", false};
}

}  // namespace

SimState spawn(const SceneSpec& spec) {
  SimState s;
  for (const auto& os : spec.objects) {
    ObjectState o;
    o.name = os.name;
    o.position = Eigen::Vector3d(os.pose.x(), os.pose.y(), 0.0);
    o.yaw = os.pose.z();
    o.value = os.articulation ? os.articulation->value : 0.0;
    o.position.z() = os.z ? *os.z : detail::support_height(detail::footprint_probes(world_parts(o, os)), s, spec, "");
    o.origin = footprint_centroid(o, os);
    s.objects.push_back(std::move(o));
  }
  s.gripper.position = spec.neutral.position;
  s.gripper.yaw = spec.neutral.yaw;
  s.gripper.aperture = spec.max_aperture;
  s.gripper.closed = false;
  return s;
}

SimState step(const SimState& state, const motion::Action& action, const SceneSpec& spec) {
  if (state.step_counter >= kStageStepLimit) {
    throw StageStepLimitExceeded("stage exceeded " + std::to_string(kStageStepLimit) + " control steps");
  }
  SimState s = state;
  const Point3 f0 = function_point(s.gripper, s.tool_offset);
  s.gripper.position += Point3(action[0], action[1], action[2]) * kControlPeriod;
  s.gripper.yaw += action[5] * kControlPeriod;
  follow_gripper(s, spec);
  const Point3 f1 = function_point(s.gripper, s.tool_offset);
  if (f1 != f0) interact(s, spec, f0, f1);

  const bool want_closed = action[6] < 0.5;
  if (want_closed && !s.gripper.closed) close_fingers(s, spec);
  if (!want_closed && s.gripper.closed) open_fingers(s, spec);
  ++s.step_counter;
  return s;
}

SimState reset_to_neutral(const SimState& state, const SceneSpec& spec) {
  SimState s = state;
  s.gripper.position = spec.neutral.position;
  s.gripper.yaw = spec.neutral.yaw;
  follow_gripper(s, spec);
  s.tool_offset.setZero();
  s.step_counter = 0;
  return s;
}

SimState begin_stage(const SimState& state, const Point3& tool_offset) {
  SimState s = state;
  s.step_counter = 0;
  s.tool_offset = tool_offset;
  return s;
}

SuccessReport check_success(const SimState& state, const SceneSpec& spec,
                            const std::vector<SuccessPredicate>& predicates) {
  SuccessReport report;
  for (const auto& p : predicates) {
    report.outcomes.push_back(evaluate(state, spec, p));
    report.success = report.success && report.outcomes.back().satisfied;
  }
  return report;
}

}  // namespace keymark::sim
