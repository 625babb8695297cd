#include "keymark/geometry/grasp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace keymark::geometry {

namespace {

struct EdgePoint {
  Pixel pixel;
  Eigen::Vector2d normal;
  Point3 world;
};

// Separable Gaussian blur of the 0/1 mask restricted to `box`.
Grid<double> smooth_indicator(const BinaryMask& mask, const PixelRect& box, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const int w = box.width();
  const int h = box.height();
  auto sample = [&](int u, int v) -> double {
    return mask.contains(u, v) && mask.at(u, v) ? 1.0 : 0.0;
  };
  Grid<double> horiz(w, h, 0.0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * sample(box.u0 + u + i, box.v0 + v);
      horiz.at(u, v) = acc;
    }
  }
  Grid<double> out(w, h, 0.0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        // Rows outside the crop are background by construction of the margin.
        if (v + i >= 0 && v + i < h) acc += kernel[i + radius] * horiz.at(u, v + i);
      }
      out.at(u, v) = acc;
    }
  }
  return out;
}

bool is_edge(const BinaryMask& mask, int u, int v) {
  if (!mask.at(u, v)) return false;
  static constexpr std::array<Pixel, 4> four{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  for (const Pixel& d : four) {
    const int nu = u + d.u;
    const int nv = v + d.v;
    if (!mask.contains(nu, nv) || !mask.at(nu, nv)) return true;
  }
  return false;
}

double normalize_yaw(double yaw) {
  while (yaw > std::numbers::pi / 2) yaw -= std::numbers::pi;
  while (yaw <= -std::numbers::pi / 2) yaw += std::numbers::pi;
  return yaw;
}

GraspProposal make_proposal(const EdgePoint& a, const EdgePoint& b, double quality) {
  GraspProposal g;
  g.contacts = {a.world, b.world};
  g.center = 0.5 * (a.world + b.world);
  g.width = (b.world - a.world).norm();
  const Eigen::Vector3d line = b.world - a.world;
  g.yaw = normalize_yaw(std::atan2(line.y(), line.x()));
  g.quality = quality;
  g.normals = {a.normal, b.normal};
  g.contact_pixels = {a.pixel, b.pixel};
  return g;
}

}  // namespace

std::vector<GraspProposal> sample_antipodal_grasps(const DepthImage& depth, const BinaryMask& mask,
                                                   const CameraModel& cam, std::size_t n,
                                                   std::uint64_t seed, const GraspSamplerConfig& config) {
  if (!depth.same_shape(mask)) throw DimensionMismatch("depth and mask dimensions differ");
  if (n == 0) return {};
  const PixelRect tight = bounding_box(mask);

  const int margin = static_cast<int>(std::ceil(3.0 * config.normal_smoothing_sigma)) + 2;
  const PixelRect crop{tight.u0 - margin, tight.v0 - margin, tight.u1 + margin, tight.v1 + margin};
  const Grid<double> smooth = smooth_indicator(mask, crop, config.normal_smoothing_sigma);

  std::vector<EdgePoint> edges;
  for (int v = tight.v0; v < tight.v1; ++v) {
    for (int u = tight.u0; u < tight.u1; ++u) {
      if (!is_edge(mask, u, v)) continue;
      const int su = u - crop.u0;
      const int sv = v - crop.v0;
      const Eigen::Vector2d grad(0.5 * (smooth.at(su + 1, sv) - smooth.at(su - 1, sv)),
                                 0.5 * (smooth.at(su, sv + 1) - smooth.at(su, sv - 1)));
      if (grad.norm() < 1e-9) continue;
      double d = 0.0;
      try {
        d = depth_at(depth, {u, v});
      } catch (const InvalidDepth&) {
        continue;
      }
      edges.push_back({{u, v}, -grad.normalized(), deproject(Pixel{u, v}, d, cam, Frame::world)});
    }
  }

  const double cos_cone = std::cos(config.friction_half_angle_deg * std::numbers::pi / 180.0);
  std::vector<GraspProposal> candidates;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    for (std::size_t j = i + 1; j < edges.size(); ++j) {
      const EdgePoint& a = edges[i];
      const EdgePoint& b = edges[j];
      const double anti = -a.normal.dot(b.normal);
      if (anti < cos_cone) continue;
      Eigen::Vector2d line(b.pixel.u - a.pixel.u, b.pixel.v - a.pixel.v);
      if (line.norm() < 1e-9) continue;
      line.normalize();
      // The closing line must lie inside both friction cones.
      if (-a.normal.dot(line) < cos_cone || b.normal.dot(line) < cos_cone) continue;
      if ((b.world - a.world).norm() > config.max_aperture) continue;
      candidates.push_back(make_proposal(a, b, anti));
    }
  }
  if (candidates.empty()) throw NoGraspFound("no antipodal contact pair fits the gripper aperture");

  std::mt19937_64 rng(seed);
  std::vector<GraspProposal> picked;
  if (candidates.size() <= n) {
    picked = candidates;
  } else {
    // Spread proposals over the object: farthest-point selection on centers,
    // started from a seeded random candidate.
    std::vector<double> min_d2(candidates.size(), std::numeric_limits<double>::infinity());
    std::vector<bool> taken(candidates.size(), false);
    std::size_t current = std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng);
    while (picked.size() < n) {
      taken[current] = true;
      picked.push_back(candidates[current]);
      double best = -1.0;
      std::size_t next = 0;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (taken[i]) continue;
        min_d2[i] = std::min(min_d2[i], (candidates[i].center - candidates[current].center).squaredNorm());
        if (min_d2[i] > best) {
          best = min_d2[i];
          next = i;
        }
      }
      current = next;
    }
  }

  // Pad with jittered copies. Both contacts shift together so width and the
  // normals, hence antipodality, are preserved.
  const std::size_t distinct = picked.size();
  std::uniform_real_distribution<double> jitter(-config.pad_jitter, config.pad_jitter);
  while (picked.size() < n) {
    const std::size_t base = std::uniform_int_distribution<std::size_t>(0, distinct - 1)(rng);
    GraspProposal g = picked[base];
    const double shift = jitter(rng);
    const Eigen::Vector3d offset(-std::sin(g.yaw) * shift, std::cos(g.yaw) * shift, 0.0);
    g.contacts[0] += offset;
    g.contacts[1] += offset;
    g.center = 0.5 * (g.contacts[0] + g.contacts[1]);
    picked.push_back(g);
  }

  std::stable_sort(picked.begin(), picked.end(),
                   [](const GraspProposal& a, const GraspProposal& b) { return a.quality > b.quality; });
  return picked;
}

const GraspProposal& nearest_grasp(std::span<const GraspProposal> proposals, const Point3& predicted) {
  if (proposals.empty()) throw EmptyProposalSet("no grasp proposals to choose from");
  std::size_t best = 0;
  double best_d2 = (proposals[0].center - predicted).squaredNorm();
  for (std::size_t i = 1; i < proposals.size(); ++i) {
    const double d2 = (proposals[i].center - predicted).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && proposals[i].quality > proposals[best].quality)) {
      best = i;
      best_d2 = d2;
    }
  }
  return proposals[best];
}

}  // namespace keymark::geometry
