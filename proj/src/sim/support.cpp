#include <algorithm>

#include "internal.hpp"

namespace keymark::sim::detail {

poly::Polygon cavity(const WorldPart& part) {
  if (part.wall <= 0.0) return {};
  return poly::inset(part.polygon, part.wall);
}

double support_height(const std::vector<Eigen::Vector2d>& points, const SimState& state, const SceneSpec& spec,
                      std::string_view skip) {
  double best = 0.0;
  for (const auto& object : state.objects) {
    if (object.name == skip) continue;
    const ObjectSpec* os = spec.find(object.name);
    if (!os) continue;
    for (const auto& part : world_parts(object, *os)) {
      const auto inner = cavity(part);
      for (const auto& q : points) {
        if (!poly::contains(part.polygon, q, 1e-9)) continue;
        const bool in_cavity = !inner.empty() && poly::contains(inner, q, 1e-9);
        best = std::max(best, in_cavity ? part.base + part.floor : part.top);
      }
    }
  }
  return best;
}

std::vector<Eigen::Vector2d> footprint_probes(const std::vector<WorldPart>& parts) {
  std::vector<Eigen::Vector2d> out;
  for (const auto& part : parts) {
    const Eigen::Vector2d c = poly::centroid(part.polygon);
    out.push_back(c);
    for (const auto& v : part.polygon) out.push_back(c + 0.9 * (v - c));
  }
  return out;
}

}  // namespace keymark::sim::detail
