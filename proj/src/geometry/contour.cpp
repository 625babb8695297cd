#include "keymark/geometry/contour.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

namespace keymark::geometry {

namespace {

// Moore neighbourhood, ordered counter-clockwise on screen (v grows downward).
constexpr std::array<Pixel, 8> kRing{{{1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}}};
constexpr int kWest = 4;

bool foreground(const BinaryMask& mask, int u, int v) { return mask.contains(u, v) && mask.at(u, v) != 0; }

int ring_index(Pixel delta) {
  for (int i = 0; i < 8; ++i) {
    if (kRing[i] == delta) return i;
  }
  return -1;
}

}  // namespace

PixelRect bounding_box(const BinaryMask& mask) {
  PixelRect box{mask.width(), mask.height(), -1, -1};
  for (int v = 0; v < mask.height(); ++v) {
    for (int u = 0; u < mask.width(); ++u) {
      if (!mask.at(u, v)) continue;
      box.u0 = std::min(box.u0, u);
      box.v0 = std::min(box.v0, v);
      box.u1 = std::max(box.u1, u + 1);
      box.v1 = std::max(box.v1, v + 1);
    }
  }
  if (box.u1 < 0) throw EmptyMask("mask has no foreground pixel");
  return box;
}

BinaryMask largest_component(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  Grid<int> labels(w, h, -1);
  std::vector<std::size_t> areas;
  std::vector<Pixel> stack;

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (!mask.at(u, v) || labels.at(u, v) >= 0) continue;
      const int label = static_cast<int>(areas.size());
      std::size_t area = 0;
      labels.at(u, v) = label;
      stack.push_back({u, v});
      while (!stack.empty()) {
        Pixel p = stack.back();
        stack.pop_back();
        ++area;
        for (const Pixel& d : kRing) {
          const int nu = p.u + d.u;
          const int nv = p.v + d.v;
          if (foreground(mask, nu, nv) && labels.at(nu, nv) < 0) {
            labels.at(nu, nv) = label;
            stack.push_back({nu, nv});
          }
        }
      }
      areas.push_back(area);
    }
  }
  if (areas.empty()) throw EmptyMask("mask has no foreground pixel");

  int best = 0;
  for (int i = 1; i < static_cast<int>(areas.size()); ++i) {
    if (areas[i] > areas[best]) best = i;
  }
  BinaryMask out(w, h, 0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (labels.at(u, v) == best) out.at(u, v) = 1;
    }
  }
  return out;
}

Contour extract_contour(const BinaryMask& mask) {
  const BinaryMask component = largest_component(mask);

  Contour contour;
  contour.centroid = mask_mean(component);

  Pixel start{-1, -1};
  for (int v = 0; v < component.height() && start.u < 0; ++v) {
    for (int u = 0; u < component.width(); ++u) {
      if (component.at(u, v)) {
        start = {u, v};
        break;
      }
    }
  }

  contour.points.push_back(start);

  // Scanning the ring in increasing index from the backtrack keeps the
  // interior on the left, i.e. a counter-clockwise walk on screen.
  auto advance = [&](Pixel current, int backtrack, Pixel& next, int& next_backtrack) -> bool {
    for (int i = 1; i <= 8; ++i) {
      const int dir = (backtrack + i) % 8;
      const Pixel cand{current.u + kRing[dir].u, current.v + kRing[dir].v};
      if (foreground(component, cand.u, cand.v)) {
        const Pixel prev_dir = kRing[(dir + 7) % 8];
        const Pixel prev{current.u + prev_dir.u, current.v + prev_dir.v};
        next = cand;
        next_backtrack = ring_index({prev.u - cand.u, prev.v - cand.v});
        return true;
      }
    }
    return false;
  };

  Pixel second;
  int backtrack = kWest;
  int next_backtrack = 0;
  if (!advance(start, kWest, second, next_backtrack)) return contour;  // isolated pixel

  Pixel current = second;
  backtrack = next_backtrack;
  const std::size_t guard = 4 * count_foreground(component) + 16;
  while (contour.points.size() <= guard) {
    contour.points.push_back(current);
    Pixel next;
    advance(current, backtrack, next, next_backtrack);
    // Jacob's stopping criterion: back at the start about to repeat the first step.
    if (next == second && current == start) {
      contour.points.pop_back();
      break;
    }
    current = next;
    backtrack = next_backtrack;
  }
  return contour;
}

Eigen::Vector2d mask_mean(const BinaryMask& mask) {
  double su = 0.0;
  double sv = 0.0;
  std::size_t n = 0;
  for (int v = 0; v < mask.height(); ++v) {
    for (int u = 0; u < mask.width(); ++u) {
      if (!mask.at(u, v)) continue;
      su += u;
      sv += v;
      ++n;
    }
  }
  if (n == 0) throw EmptyMask("mask has no foreground pixel");
  return {su / static_cast<double>(n), sv / static_cast<double>(n)};
}

Pixel mask_centroid(const BinaryMask& mask) {
  const Eigen::Vector2d mean = mask_mean(mask);
  const Pixel rounded{static_cast<int>(std::lround(mean.x())), static_cast<int>(std::lround(mean.y()))};
  if (foreground(mask, rounded.u, rounded.v)) return rounded;

  Pixel best{-1, -1};
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int v = 0; v < mask.height(); ++v) {
    for (int u = 0; u < mask.width(); ++u) {
      if (!mask.at(u, v)) continue;
      const double du = u - mean.x();
      const double dv = v - mean.y();
      const double d2 = du * du + dv * dv;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = {u, v};
      }
    }
  }
  return best;
}

std::vector<std::size_t> farthest_point_indices(std::span<const Pixel> points, std::size_t k,
                                                const Eigen::Vector2d& reference) {
  if (points.size() < k) {
    throw DegenerateContour("cannot select " + std::to_string(k) + " points from " +
                            std::to_string(points.size()));
  }
  std::vector<std::size_t> picked;
  if (k == 0) return picked;
  picked.reserve(k);

  std::size_t seed = 0;
  double seed_d2 = -1.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double du = points[i].u - reference.x();
    const double dv = points[i].v - reference.y();
    const double d2 = du * du + dv * dv;
    if (d2 > seed_d2) {
      seed_d2 = d2;
      seed = i;
    }
  }

  std::vector<std::int64_t> min_d2(points.size(), std::numeric_limits<std::int64_t>::max());
  std::vector<bool> taken(points.size(), false);
  std::size_t last = seed;
  taken[seed] = true;
  picked.push_back(seed);

  while (picked.size() < k) {
    std::int64_t best_d2 = -1;
    std::size_t best = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (taken[i]) continue;
      const std::int64_t du = points[i].u - points[last].u;
      const std::int64_t dv = points[i].v - points[last].v;
      min_d2[i] = std::min(min_d2[i], du * du + dv * dv);
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    taken[best] = true;
    picked.push_back(best);
    last = best;
  }
  return picked;
}

std::vector<Pixel> farthest_point_sampling(const Contour& contour, std::size_t k) {
  // A contour shorter than a triangle carries no boundary shape to sample.
  if (contour.size() < 3 || contour.size() < k) {
    throw DegenerateContour("contour of length " + std::to_string(contour.size()) +
                            " cannot provide " + std::to_string(k) + " boundary points");
  }
  std::vector<Pixel> out;
  for (std::size_t i : farthest_point_indices(contour.points, k, contour.centroid)) {
    out.push_back(contour.points[i]);
  }
  return out;
}

}  // namespace keymark::geometry
