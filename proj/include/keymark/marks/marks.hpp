#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "keymark/geometry/image.hpp"

namespace keymark::marks {

using geometry::BinaryMask;
using geometry::Pixel;
using geometry::PixelRect;
using geometry::RgbImage;

enum class ObjectRole { grasped, unattached };
enum class KeypointSource { boundary, center };

std::string_view to_string(ObjectRole role);
std::string_view to_string(KeypointSource source);
ObjectRole parse_role(std::string_view s);
char label_prefix(ObjectRole role);  // 'P' or 'Q'

struct KeypointCandidate {
  std::string label;
  Pixel pixel;
  ObjectRole role{ObjectRole::grasped};
  KeypointSource source{KeypointSource::boundary};
  std::string object;  // name of the object whose mask produced the point
  friend bool operator==(const KeypointCandidate&, const KeypointCandidate&) = default;
};

// m rows by n columns over a width x height image.
struct GridSpec {
  int rows{5};
  int cols{5};
  int width{0};
  int height{0};
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Chess-style tile: col 0 is 'a' (leftmost), row 1 is the bottom row.
struct TileId {
  int col{0};
  int row{1};
  friend bool operator==(const TileId&, const TileId&) = default;
};

std::string tile_name(TileId tile);

// Integer tiling; the remainder of a non-divisible size goes to the last
// column and to the bottom row.
GridSpec build_grid(int image_width, int image_height, int m = 5, int n = 5);
PixelRect tile_bounds(const GridSpec& grid, TileId tile);
TileId tile_at(const GridSpec& grid, Pixel pixel);

// Case-insensitive "c4". MalformedTile for bad syntax, TileOutOfRange when the
// tile does not exist on this grid.
TileId parse_tile_name(std::string_view s, const GridSpec& grid);

Pixel sample_point_in_tile(const GridSpec& grid, TileId tile, std::uint64_t seed);

// k FPS boundary points in selection order, then the mask center. Labels run
// from `first_index`, so several objects of one role share one numbering.
std::vector<KeypointCandidate> propose_keypoints(const BinaryMask& mask, ObjectRole role, std::size_t k,
                                                 std::size_t first_index = 0, const std::string& object = {});

struct MarkSet {
  std::vector<KeypointCandidate> candidates;
  GridSpec grid;
  std::string base_image_id;

  const KeypointCandidate* find(std::string_view label) const;
  std::vector<std::string> labels() const;
  std::vector<std::string> labels(ObjectRole role) const;
  bool has_role(ObjectRole role) const;
  friend bool operator==(const MarkSet&, const MarkSet&) = default;
};

void to_json(nlohmann::json& j, const MarkSet& ms);
void from_json(const nlohmann::json& j, MarkSet& ms);

// Candidate pixel for a label; UnknownLabel carries every valid label.
Pixel resolve_selection(const MarkSet& markset, std::string_view label);

struct MarkedObject {
  std::string name;
  const BinaryMask* mask{nullptr};
  ObjectRole role{ObjectRole::grasped};
};

// Candidates for several objects at once, labels contiguous per role.
MarkSet build_markset(const std::vector<MarkedObject>& objects, std::size_t k, const GridSpec& grid,
                      std::string base_image_id);

struct RenderStyle {
  int dot_radius{6};
  int caption_scale{2};  // 5x7 glyphs, so 14 px tall captions
  int tile_label_scale{1};
  geometry::Rgb grasped_color{230, 25, 25};
  geometry::Rgb unattached_color{25, 60, 230};
  geometry::Rgb grid_color{0, 0, 0};
};

struct CaptionPlacement {
  std::string label;
  PixelRect box;
};

struct AnnotatedImage {
  RgbImage pixels;
  MarkSet markset;
  std::vector<CaptionPlacement> captions;
};

AnnotatedImage render_marks(const RgbImage& image, const MarkSet& markset, const RenderStyle& style = {});

// Text rasteriser shared with the simulator's debug views.
int text_width(std::string_view text, int scale);
int text_height(int scale);
void draw_text(RgbImage& image, int u, int v, std::string_view text, int scale, geometry::Rgb color);

}  // namespace keymark::marks
