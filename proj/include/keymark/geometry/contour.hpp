#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "keymark/geometry/image.hpp"

namespace keymark::geometry {

// Closed boundary trace of one connected foreground component. Consecutive
// points are 8-neighbours and the last point is adjacent to the first.
struct Contour {
  std::vector<Pixel> points;
  // Arithmetic mean of the traced component's foreground pixels.
  Eigen::Vector2d centroid{0.0, 0.0};

  std::size_t size() const { return points.size(); }
};

// Moore-neighbour trace of the largest 8-connected component, counter-clockwise
// on screen, starting at its topmost-then-leftmost pixel. Ties in component area
// go to the component whose first pixel comes first in raster order.
Contour extract_contour(const BinaryMask& mask);

// Label 8-connected components and return the largest one as its own mask.
BinaryMask largest_component(const BinaryMask& mask);

// Mean of foreground coordinates, rounded; snapped to the nearest foreground
// pixel when the rounded mean falls outside the mask.
Pixel mask_centroid(const BinaryMask& mask);
Eigen::Vector2d mask_mean(const BinaryMask& mask);

// Greedy max-min selection in pixel space. The first pick is the point farthest
// from `reference`; every later pick maximises the minimum squared distance to
// the picks so far. Ties go to the lowest index. Returns indices into `points`.
std::vector<std::size_t> farthest_point_indices(std::span<const Pixel> points, std::size_t k,
                                                const Eigen::Vector2d& reference);

// FPS over a contour seeded from its mask centroid.
std::vector<Pixel> farthest_point_sampling(const Contour& contour, std::size_t k);

}  // namespace keymark::geometry
