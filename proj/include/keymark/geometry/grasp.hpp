#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "keymark/geometry/camera.hpp"

namespace keymark::geometry {

struct GraspSamplerConfig {
  double friction_half_angle_deg{15.0};
  double max_aperture{0.085};  // meters
  double normal_smoothing_sigma{1.5};  // pixels
  double pad_jitter{0.001};  // meters, used only when padding to the requested count
};

// Top-down 4-DoF grasp: contact pair on the object's top face plus the yaw of
// the closing line about world z.
struct GraspProposal {
  Point3 center{Point3::Zero()};
  double yaw{0.0};
  double width{0.0};
  std::array<Point3, 2> contacts{Point3::Zero(), Point3::Zero()};
  double quality{0.0};
  // Outward boundary normals in the image plane at the two contact pixels.
  std::array<Eigen::Vector2d, 2> normals{Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
  std::array<Pixel, 2> contact_pixels{};
};

// Antipodal edge-pair sampling on the mask's bounding-box crop of a depth image.
// `depth` and `mask` share the full image frame; contacts are lifted to the world
// frame. Always returns exactly `n` proposals sorted by quality (descending).
std::vector<GraspProposal> sample_antipodal_grasps(const DepthImage& depth, const BinaryMask& mask,
                                                   const CameraModel& cam, std::size_t n,
                                                   std::uint64_t seed,
                                                   const GraspSamplerConfig& config = {});

// Proposal whose center is closest to `predicted`; ties prefer higher quality,
// then the lower index.
const GraspProposal& nearest_grasp(std::span<const GraspProposal> proposals, const Point3& predicted);

}  // namespace keymark::geometry
