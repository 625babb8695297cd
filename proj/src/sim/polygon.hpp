#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace keymark::sim::poly {

using Vec2 = Eigen::Vector2d;
using Polygon = std::vector<Vec2>;

inline double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline double signed_area(const Polygon& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) a += cross(p[i], p[(i + 1) % p.size()]);
  return 0.5 * a;
}

inline Vec2 centroid(const Polygon& p) {
  const double a = signed_area(p);
  Vec2 c = Vec2::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % p.size()];
    c += (u + v) * cross(u, v);
  }
  return c / (6.0 * a);
}

inline bool is_convex_ccw(const Polygon& p) {
  if (p.size() < 3 || signed_area(p) <= 0.0) return false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2 e1 = p[(i + 1) % p.size()] - p[i];
    const Vec2 e2 = p[(i + 2) % p.size()] - p[(i + 1) % p.size()];
    if (cross(e1, e2) < -1e-12) return false;
  }
  return true;
}

inline Polygon transform(const Polygon& p, double x, double y, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Polygon out;
  out.reserve(p.size());
  for (const auto& v : p) out.emplace_back(x + c * v.x() - s * v.y(), y + s * v.x() + c * v.y());
  return out;
}

// Inclusive of the boundary up to eps.
inline bool contains(const Polygon& p, const Vec2& q, double eps = 1e-12) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (cross(p[(i + 1) % p.size()] - p[i], q - p[i]) < -eps) return false;
  }
  return true;
}

inline double distance_to_boundary(const Polygon& p, const Vec2& q) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2& a = p[i];
    const Vec2 ab = p[(i + 1) % p.size()] - a;
    const double t = std::clamp((q - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    best = std::min(best, (a + t * ab - q).norm());
  }
  return best;
}

// Parameter interval of a + t (b - a), t in [t0, t1], that lies inside the
// convex polygon (Cyrus-Beck). Empty when the line misses.
inline std::optional<std::pair<double, double>> clip(const Polygon& p, const Vec2& a, const Vec2& b, double t0 = 0.0,
                                                     double t1 = 1.0) {
  const Vec2 d = b - a;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2 e = p[(i + 1) % p.size()] - p[i];
    // Inside is cross(e, x - p_i) >= 0.
    const double num = cross(e, a - p[i]);
    const double den = cross(e, d);
    if (std::abs(den) < 1e-15) {
      if (num < 0.0) return std::nullopt;
      continue;
    }
    const double t = -num / den;
    if (den > 0.0) {
      t0 = std::max(t0, t);
    } else {
      t1 = std::min(t1, t);
    }
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

// Convex polygon shrunk by moving every edge inward by d. Empty when nothing is left.
inline Polygon inset(const Polygon& p, double d) {
  const std::size_t n = p.size();
  std::vector<std::pair<Vec2, Vec2>> lines;  // point, direction
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 e = (p[(i + 1) % n] - p[i]).normalized();
    lines.emplace_back(p[i] + d * Vec2(-e.y(), e.x()), e);
  }
  Polygon out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [a, da] = lines[(i + n - 1) % n];
    const auto& [b, db] = lines[i];
    const double den = cross(da, db);
    if (std::abs(den) < 1e-12) {
      out.push_back(b);
      continue;
    }
    out.push_back(a + da * (cross(b - a, db) / den));
  }
  if (!is_convex_ccw(out)) return {};
  return out;
}

struct Box {
  double x0, x1, y0, y1;
};

inline Box bounds(const Polygon& p) {
  Box b{p[0].x(), p[0].x(), p[0].y(), p[0].y()};
  for (const auto& v : p) {
    b.x0 = std::min(b.x0, v.x());
    b.x1 = std::max(b.x1, v.x());
    b.y0 = std::min(b.y0, v.y());
    b.y1 = std::max(b.y1, v.y());
  }
  return b;
}

}  // namespace keymark::sim::poly
