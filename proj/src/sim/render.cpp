#include <algorithm>
#include <cmath>
#include <limits>

#include "internal.hpp"

namespace keymark::sim {

namespace {

constexpr double kFloorZ = -0.75;
constexpr geometry::Rgb kFloorColor{62, 62, 66};
constexpr geometry::Rgb kGripperColor{72, 74, 82};
constexpr double kGripperHeight = 0.12;
constexpr double kFingerThickness = 0.02;

// Horizontal top face. Containers contribute their rim as a ring (`hole` cut
// out) and a floor slab over the whole footprint.
struct Surface {
  poly::Polygon polygon;
  poly::Polygon hole;
  double z{0.0};
  int label{0};
  geometry::Rgb color{};
};

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d dir;  // camera-frame z component is 1, so t is the depth
};

geometry::Rgb scaled(const geometry::Rgb& c, double k) {
  return {static_cast<std::uint8_t>(std::lround(c[0] * k)), static_cast<std::uint8_t>(std::lround(c[1] * k)),
          static_cast<std::uint8_t>(std::lround(c[2] * k))};
}

geometry::PixelRect screen_bounds(const Surface& f, const geometry::CameraModel& cam, int width, int height) {
  double u0 = std::numeric_limits<double>::infinity();
  double v0 = u0;
  double u1 = -u0;
  double v1 = -u0;
  for (const auto& q : f.polygon) {
    const auto px = geometry::project(Point3(q.x(), q.y(), f.z), cam, geometry::Frame::world);
    u0 = std::min(u0, px.u);
    u1 = std::max(u1, px.u);
    v0 = std::min(v0, px.v);
    v1 = std::max(v1, px.v);
  }
  auto clampi = [](double x, int hi) { return static_cast<int>(std::clamp(x, 0.0, static_cast<double>(hi))); };
  return {clampi(std::floor(u0) - 1, width), clampi(std::floor(v0) - 1, height), clampi(std::ceil(u1) + 2, width),
          clampi(std::ceil(v1) + 2, height)};
}

poly::Polygon gripper_outline(const GripperState& g) {
  const double half_span = g.aperture / 2.0 + kFingerThickness / 2.0;
  const double half_thick = kFingerThickness / 2.0;
  const poly::Polygon local{{-half_span, -half_thick}, {half_span, -half_thick}, {half_span, half_thick},
                            {-half_span, half_thick}};
  return poly::transform(local, g.position.x(), g.position.y(), g.yaw);
}

}  // namespace

Observation render(const SimState& state, const SceneSpec& spec) {
  const int w = spec.width;
  const int h = spec.height;
  const auto& cam = spec.camera;

  // Labels: 0 table or floor, 1..n objects in state order, n+1 gripper.
  std::vector<Surface> surfaces;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < state.objects.size(); ++i) {
    const auto& object = state.objects[i];
    const ObjectSpec* os = spec.find(object.name);
    if (!os) throw SceneError("state names unknown object \"" + object.name + "\"");
    names.push_back(object.name);
    const int label = static_cast<int>(i + 1);
    for (const auto& part : world_parts(object, *os)) {
      auto hole = detail::cavity(part);
      if (!hole.empty()) surfaces.push_back({part.polygon, {}, part.base + part.floor, label, scaled(os->color, 0.85)});
      surfaces.push_back({part.polygon, std::move(hole), part.top, label, os->color});
    }
  }
  const int gripper_label = static_cast<int>(state.objects.size() + 1);
  surfaces.push_back({gripper_outline(state.gripper), {}, state.gripper.position.z() + kGripperHeight, gripper_label,
                      kGripperColor});

  Observation obs;
  obs.rgb = geometry::RgbImage(w, h);
  obs.depth = geometry::DepthImage(w, h);
  std::vector<int> labels(static_cast<std::size_t>(w) * h, 0);

  const Eigen::Matrix3d rot = cam.extrinsic.linear();
  const Eigen::Vector3d origin = cam.extrinsic.translation();
  auto ray_at = [&](int u, int v) {
    return Ray{origin, rot * Eigen::Vector3d((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0)};
  };

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const Ray ray = ray_at(u, v);
      double t = (0.0 - origin.z()) / ray.dir.z();
      const Eigen::Vector3d p = origin + t * ray.dir;
      const auto& tb = spec.table;
      geometry::Rgb color = spec.table.color;
      if (p.x() < tb.x0 || p.x() > tb.x1 || p.y() < tb.y0 || p.y() > tb.y1) {
        t = (kFloorZ - origin.z()) / ray.dir.z();
        color = kFloorColor;
      }
      obs.depth.at(u, v) = t;
      obs.rgb.at(u, v) = color;
    }
  }

  for (const auto& f : surfaces) {
    const auto box = screen_bounds(f, cam, w, h);
    for (int v = box.v0; v < box.v1; ++v) {
      for (int u = box.u0; u < box.u1; ++u) {
        const Ray ray = ray_at(u, v);
        const double t = (f.z - origin.z()) / ray.dir.z();
        if (t <= 0.0 || t >= obs.depth.at(u, v)) continue;
        const Eigen::Vector2d p = (origin + t * ray.dir).head<2>();
        if (!poly::contains(f.polygon, p) || (!f.hole.empty() && poly::contains(f.hole, p, -1e-12))) continue;
        obs.depth.at(u, v) = t;
        obs.rgb.at(u, v) = f.color;
        labels[static_cast<std::size_t>(v) * w + u] = f.label;
      }
    }
  }

  for (const auto& name : names) obs.masks.emplace(name, geometry::BinaryMask(w, h, 0));
  obs.masks.emplace(kGripperMaskName, geometry::BinaryMask(w, h, 0));
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const int label = labels[static_cast<std::size_t>(v) * w + u];
      if (label == 0) continue;
      const std::string& name = label == gripper_label ? kGripperMaskName : names[label - 1];
      obs.masks.at(name).at(u, v) = 1;
    }
  }
  obs.gripper = {state.gripper.position, state.gripper.yaw};
  obs.aperture = state.gripper.aperture;
  return obs;
}

}  // namespace keymark::sim
