#pragma once

// Test-only fixtures and brute-force oracles. Nothing here calls into the
// implementation paths these oracles are used to check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Geometry>

#include "keymark/geometry/camera.hpp"
#include "keymark/geometry/image.hpp"

namespace keymark::testing {

using geometry::BinaryMask;
using geometry::CameraModel;
using geometry::DepthImage;
using geometry::Pixel;

// Camera 1 m above the world origin looking straight down; image right is
// world -y, image down is world -x.
inline CameraModel top_down_camera(double height = 1.0, double f = 300.0, int width = 320, int h = 240) {
  CameraModel cam;
  cam.fx = f;
  cam.fy = f;
  cam.cx = (width - 1) / 2.0;
  cam.cy = (h - 1) / 2.0;
  Eigen::Matrix3d r;
  r << 0, -1, 0, -1, 0, 0, 0, 0, -1;
  cam.extrinsic = Eigen::Isometry3d::Identity();
  cam.extrinsic.linear() = r;
  cam.extrinsic.translation() = Eigen::Vector3d(0, 0, height);
  return cam;
}

// Rasterise a flat-topped object described by an inside-test on world xy.
struct SyntheticScene {
  DepthImage depth;
  BinaryMask mask;
};

inline SyntheticScene render_flat_object(const CameraModel& cam, int width, int height, double top_z,
                                         const std::function<bool(double, double)>& inside) {
  SyntheticScene s{DepthImage(width, height, 0.0), BinaryMask(width, height, 0)};
  const double cam_z = cam.extrinsic.translation().z();
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const Eigen::Vector3d ray_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      const Eigen::Vector3d ray = cam.extrinsic.linear() * ray_cam;
      const double t = (top_z - cam_z) / ray.z();
      const Eigen::Vector3d hit = cam.extrinsic.translation() + t * ray;
      if (inside(hit.x(), hit.y())) {
        s.depth.at(u, v) = t;
        s.mask.at(u, v) = 1;
      } else {
        s.depth.at(u, v) = cam_z;
      }
    }
  }
  return s;
}

// Flood-fill labelling (4-neighbour stack walk over the 8-neighbourhood) used
// as the connected-component oracle.
inline std::vector<std::vector<Pixel>> components_by_flood_fill(const BinaryMask& mask) {
  std::vector<std::vector<Pixel>> out;
  std::vector<char> seen(mask.data().size(), 0);
  for (int v = 0; v < mask.height(); ++v) {
    for (int u = 0; u < mask.width(); ++u) {
      const std::size_t idx = static_cast<std::size_t>(v) * mask.width() + u;
      if (!mask.at(u, v) || seen[idx]) continue;
      std::vector<Pixel> comp;
      std::vector<Pixel> frontier{{u, v}};
      seen[idx] = 1;
      while (!frontier.empty()) {
        Pixel p = frontier.back();
        frontier.pop_back();
        comp.push_back(p);
        for (int dv = -1; dv <= 1; ++dv) {
          for (int du = -1; du <= 1; ++du) {
            const int nu = p.u + du;
            const int nv = p.v + dv;
            if (!mask.contains(nu, nv) || !mask.at(nu, nv)) continue;
            const std::size_t n = static_cast<std::size_t>(nv) * mask.width() + nu;
            if (!seen[n]) {
              seen[n] = 1;
              frontier.push_back({nu, nv});
            }
          }
        }
      }
      out.push_back(std::move(comp));
    }
  }
  return out;
}

// Brute-force greedy max-min: every step recomputes each candidate's distance
// to the whole selected set from scratch.
inline std::vector<std::size_t> brute_force_fps(const std::vector<Pixel>& pts, std::size_t k, double ref_u,
                                                double ref_v) {
  std::vector<std::size_t> sel;
  std::size_t seed = 0;
  double best = -1;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = (pts[i].u - ref_u) * (pts[i].u - ref_u) + (pts[i].v - ref_v) * (pts[i].v - ref_v);
    if (d > best) {
      best = d;
      seed = i;
    }
  }
  sel.push_back(seed);
  while (sel.size() < k) {
    std::int64_t best_min = -1;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      bool used = false;
      for (std::size_t s : sel) used = used || s == i;
      if (used) continue;
      std::int64_t m = std::numeric_limits<std::int64_t>::max();
      for (std::size_t s : sel) {
        const std::int64_t du = pts[i].u - pts[s].u;
        const std::int64_t dv = pts[i].v - pts[s].v;
        m = std::min(m, du * du + dv * dv);
      }
      if (m > best_min) {
        best_min = m;
        arg = i;
      }
    }
    sel.push_back(arg);
  }
  return sel;
}

inline BinaryMask rect_mask(int w, int h, int u0, int v0, int u1, int v1) {
  BinaryMask m(w, h, 0);
  for (int v = v0; v < v1; ++v)
    for (int u = u0; u < u1; ++u) m.at(u, v) = 1;
  return m;
}

}  // namespace keymark::testing
