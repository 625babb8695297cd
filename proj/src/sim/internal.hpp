#pragma once

#include <string_view>

#include "keymark/sim/sim.hpp"
#include "polygon.hpp"

namespace keymark::sim::detail {

// Inner outline of a receptacle part, empty for solid parts.
poly::Polygon cavity(const WorldPart& part);

// Height of the highest surface under any of the points, among every object
// except `skip`. The table is at 0.
double support_height(const std::vector<Eigen::Vector2d>& points, const SimState& state, const SceneSpec& spec,
                      std::string_view skip);

// Probe points for resting an object: part vertices pulled slightly inward plus the centroid.
std::vector<Eigen::Vector2d> footprint_probes(const std::vector<WorldPart>& parts);

}  // namespace keymark::sim::detail
