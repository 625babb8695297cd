#include "keymark/marks/marks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <random>

#include "font.hpp"
#include "keymark/geometry/contour.hpp"

namespace keymark::marks {

using geometry::Rgb;

std::string_view to_string(ObjectRole role) {
  return role == ObjectRole::grasped ? "grasped" : "unattached";
}

std::string_view to_string(KeypointSource source) {
  return source == KeypointSource::boundary ? "boundary" : "center";
}

ObjectRole parse_role(std::string_view s) {
  if (s == "grasped") return ObjectRole::grasped;
  if (s == "unattached") return ObjectRole::unattached;
  throw MalformedJson("unknown object role \"" + std::string(s) + "\"");
}

char label_prefix(ObjectRole role) { return role == ObjectRole::grasped ? 'P' : 'Q'; }

std::string tile_name(TileId tile) {
  return std::string(1, static_cast<char>('a' + tile.col)) + std::to_string(tile.row);
}

GridSpec build_grid(int image_width, int image_height, int m, int n) {
  if (image_width <= 0 || image_height <= 0 || m < 1 || n < 1) {
    throw DimensionMismatch("grid needs positive image size and tile counts");
  }
  if (m > image_height || n > image_width) throw DimensionMismatch("more tiles than pixels");
  if (n > 26) throw DimensionMismatch("at most 26 grid columns can be named");
  return GridSpec{m, n, image_width, image_height};
}

namespace {

void check_tile(const GridSpec& grid, TileId tile) {
  if (tile.col < 0 || tile.col >= grid.cols || tile.row < 1 || tile.row > grid.rows) {
    throw TileOutOfRange("tile " + tile_name(tile) + " is outside the " + std::to_string(grid.rows) + "x" +
                         std::to_string(grid.cols) + " grid");
  }
}

}  // namespace

PixelRect tile_bounds(const GridSpec& grid, TileId tile) {
  check_tile(grid, tile);
  const int tw = grid.width / grid.cols;
  const int th = grid.height / grid.rows;
  const int top_index = grid.rows - tile.row;  // 0 is the top image row band
  PixelRect r;
  r.u0 = tile.col * tw;
  r.u1 = tile.col == grid.cols - 1 ? grid.width : r.u0 + tw;
  r.v0 = top_index * th;
  r.v1 = top_index == grid.rows - 1 ? grid.height : r.v0 + th;
  return r;
}

TileId tile_at(const GridSpec& grid, Pixel pixel) {
  if (pixel.u < 0 || pixel.v < 0 || pixel.u >= grid.width || pixel.v >= grid.height) {
    throw TileOutOfRange("pixel (" + std::to_string(pixel.u) + ", " + std::to_string(pixel.v) +
                         ") is outside the image");
  }
  const int col = std::min(pixel.u / (grid.width / grid.cols), grid.cols - 1);
  const int top_index = std::min(pixel.v / (grid.height / grid.rows), grid.rows - 1);
  return TileId{col, grid.rows - top_index};
}

TileId parse_tile_name(std::string_view s, const GridSpec& grid) {
  if (s.size() < 2 || !std::isalpha(static_cast<unsigned char>(s[0]))) {
    throw MalformedTile("tile name \"" + std::string(s) + "\" is not a letter followed by a row number");
  }
  int row = 0;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(s[i])) || i > 4) {
      throw MalformedTile("tile name \"" + std::string(s) + "\" is not a letter followed by a row number");
    }
    row = row * 10 + (s[i] - '0');
  }
  const TileId tile{std::tolower(static_cast<unsigned char>(s[0])) - 'a', row};
  check_tile(grid, tile);
  return tile;
}

Pixel sample_point_in_tile(const GridSpec& grid, TileId tile, std::uint64_t seed) {
  const PixelRect r = tile_bounds(grid, tile);
  std::mt19937_64 rng(seed);
  const int u = std::uniform_int_distribution<int>(r.u0, r.u1 - 1)(rng);
  const int v = std::uniform_int_distribution<int>(r.v0, r.v1 - 1)(rng);
  return {u, v};
}

std::vector<KeypointCandidate> propose_keypoints(const BinaryMask& mask, ObjectRole role, std::size_t k,
                                                 std::size_t first_index, const std::string& object) {
  if (k < 1) throw DegenerateContour("at least one boundary keypoint is required");
  const geometry::Contour contour = geometry::extract_contour(mask);
  const std::vector<Pixel> boundary = geometry::farthest_point_sampling(contour, k);
  const Pixel center = geometry::mask_centroid(mask);

  std::vector<KeypointCandidate> out;
  out.reserve(k + 1);
  const char prefix = label_prefix(role);
  std::size_t index = first_index;
  for (const Pixel& p : boundary) {
    out.push_back({prefix + std::to_string(index++), p, role, KeypointSource::boundary, object});
  }
  out.push_back({prefix + std::to_string(index), center, role, KeypointSource::center, object});
  return out;
}

const KeypointCandidate* MarkSet::find(std::string_view label) const {
  for (const auto& c : candidates) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

std::vector<std::string> MarkSet::labels() const {
  std::vector<std::string> out;
  for (const auto& c : candidates) out.push_back(c.label);
  return out;
}

std::vector<std::string> MarkSet::labels(ObjectRole role) const {
  std::vector<std::string> out;
  for (const auto& c : candidates) {
    if (c.role == role) out.push_back(c.label);
  }
  return out;
}

bool MarkSet::has_role(ObjectRole role) const {
  return std::any_of(candidates.begin(), candidates.end(), [&](const auto& c) { return c.role == role; });
}

void to_json(nlohmann::json& j, const MarkSet& ms) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : ms.candidates) {
    cands.push_back({{"label", c.label},
                     {"u", c.pixel.u},
                     {"v", c.pixel.v},
                     {"role", to_string(c.role)},
                     {"source", to_string(c.source)},
                     {"object", c.object}});
  }
  j = {{"candidates", cands},
       {"grid", {{"m", ms.grid.rows}, {"n", ms.grid.cols}, {"w", ms.grid.width}, {"h", ms.grid.height}}},
       {"base_image_id", ms.base_image_id}};
}

void from_json(const nlohmann::json& j, MarkSet& ms) {
  try {
    ms.candidates.clear();
    for (const auto& c : j.at("candidates")) {
      KeypointCandidate k;
      k.label = c.at("label").get<std::string>();
      k.pixel = {c.at("u").get<int>(), c.at("v").get<int>()};
      k.role = parse_role(c.at("role").get<std::string>());
      const auto source = c.at("source").get<std::string>();
      if (source != "boundary" && source != "center") throw MalformedJson("unknown keypoint source " + source);
      k.source = source == "boundary" ? KeypointSource::boundary : KeypointSource::center;
      k.object = c.value("object", std::string{});
      ms.candidates.push_back(std::move(k));
    }
    const auto& g = j.at("grid");
    ms.grid = {g.at("m").get<int>(), g.at("n").get<int>(), g.at("w").get<int>(), g.at("h").get<int>()};
    ms.base_image_id = j.value("base_image_id", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw MalformedJson(std::string("bad MarkSet JSON: ") + e.what());
  }
}

Pixel resolve_selection(const MarkSet& markset, std::string_view label) {
  if (const auto* c = markset.find(label)) return c->pixel;
  throw UnknownLabel(std::string(label), markset.labels());
}

MarkSet build_markset(const std::vector<MarkedObject>& objects, std::size_t k, const GridSpec& grid,
                      std::string base_image_id) {
  MarkSet ms;
  ms.grid = grid;
  ms.base_image_id = std::move(base_image_id);
  std::size_t next_p = 0;
  std::size_t next_q = 0;
  for (const auto& obj : objects) {
    if (!obj.mask->same_shape(grid.width, grid.height)) {
      throw DimensionMismatch("mask for \"" + obj.name + "\" does not match the grid image size");
    }
    std::size_t& next = obj.role == ObjectRole::grasped ? next_p : next_q;
    auto cands = propose_keypoints(*obj.mask, obj.role, k, next, obj.name);
    next += cands.size();
    ms.candidates.insert(ms.candidates.end(), cands.begin(), cands.end());
  }
  return ms;
}

int text_width(std::string_view text, int scale) {
  if (text.empty()) return 0;
  const int n = static_cast<int>(text.size());
  return scale * (n * detail::kGlyphWidth + (n - 1) * detail::kGlyphSpacing);
}

int text_height(int scale) { return scale * detail::kGlyphHeight; }

void draw_text(RgbImage& image, int u, int v, std::string_view text, int scale, Rgb color) {
  int pen = u;
  for (char c : text) {
    const auto& rows = detail::glyph(c);
    for (int gy = 0; gy < detail::kGlyphHeight; ++gy) {
      for (int gx = 0; gx < detail::kGlyphWidth; ++gx) {
        if (!(rows[gy] >> (detail::kGlyphWidth - 1 - gx) & 1)) continue;
        for (int sy = 0; sy < scale; ++sy) {
          for (int sx = 0; sx < scale; ++sx) {
            const int x = pen + gx * scale + sx;
            const int y = v + gy * scale + sy;
            if (image.contains(x, y)) image.at(x, y) = color;
          }
        }
      }
    }
    pen += scale * (detail::kGlyphWidth + detail::kGlyphSpacing);
  }
}

namespace {

constexpr Rgb kWhite{255, 255, 255};

void fill_rect(RgbImage& image, const PixelRect& r, Rgb color) {
  for (int v = std::max(0, r.v0); v < std::min(image.height(), r.v1); ++v)
    for (int u = std::max(0, r.u0); u < std::min(image.width(), r.u1); ++u) image.at(u, v) = color;
}

void fill_disc(RgbImage& image, Pixel c, int radius, Rgb color) {
  for (int dv = -radius; dv <= radius; ++dv)
    for (int du = -radius; du <= radius; ++du)
      if (du * du + dv * dv <= radius * radius && image.contains(c.u + du, c.v + dv)) {
        image.at(c.u + du, c.v + dv) = color;
      }
}

bool overlaps(const PixelRect& a, const PixelRect& b) {
  return a.u0 < b.u1 && b.u0 < a.u1 && a.v0 < b.v1 && b.v0 < a.v1;
}

bool inside(const PixelRect& r, int w, int h) { return r.u0 >= 0 && r.v0 >= 0 && r.u1 <= w && r.v1 <= h; }

// Offsets tried in order: the preferred spot, then rings of growing radius,
// each ring walked counter-clockwise from the right.
std::vector<Pixel> spiral_offsets() {
  std::vector<Pixel> out{{0, 0}};
  for (int r = 4; r <= 160; r += 4) {
    const int steps = 16;
    for (int i = 0; i < steps; ++i) {
      const double a = 2.0 * std::numbers::pi * i / steps;
      out.push_back({static_cast<int>(std::lround(r * std::cos(a))), static_cast<int>(std::lround(-r * std::sin(a)))});
    }
  }
  return out;
}

}  // namespace

AnnotatedImage render_marks(const RgbImage& image, const MarkSet& markset, const RenderStyle& style) {
  const GridSpec& grid = markset.grid;
  if (!image.same_shape(grid.width, grid.height)) {
    throw DimensionMismatch("image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                            " but the mark set expects " + std::to_string(grid.width) + "x" +
                            std::to_string(grid.height));
  }
  for (const auto& c : markset.candidates) {
    if (!image.contains(c.pixel)) throw DimensionMismatch("candidate " + c.label + " lies outside the image");
  }

  AnnotatedImage out{image, markset, {}};
  RgbImage& px = out.pixels;

  for (int col = 1; col < grid.cols; ++col) {
    const int u = tile_bounds(grid, {col, 1}).u0;
    for (int v = 0; v < grid.height; ++v) px.at(u, v) = style.grid_color;
  }
  for (int row = 1; row < grid.rows; ++row) {
    const int v = tile_bounds(grid, {0, row}).v0;
    for (int u = 0; u < grid.width; ++u) px.at(u, v) = style.grid_color;
  }
  for (int row = 1; row <= grid.rows; ++row) {
    for (int col = 0; col < grid.cols; ++col) {
      const PixelRect t = tile_bounds(grid, {col, row});
      const std::string name = tile_name({col, row});
      const int s = style.tile_label_scale;
      const PixelRect box{t.u0 + 1, t.v0 + 1, t.u0 + 3 + text_width(name, s), t.v0 + 3 + text_height(s)};
      fill_rect(px, box, kWhite);
      draw_text(px, box.u0 + 1, box.v0 + 1, name, s, style.grid_color);
    }
  }

  for (const auto& c : markset.candidates) {
    fill_disc(px, c.pixel, style.dot_radius + 1, kWhite);
    fill_disc(px, c.pixel, style.dot_radius,
              c.role == ObjectRole::grasped ? style.grasped_color : style.unattached_color);
  }

  std::vector<PixelRect> dots;
  for (const auto& c : markset.candidates) {
    const int r = style.dot_radius;
    dots.push_back({c.pixel.u - r, c.pixel.v - r, c.pixel.u + r + 1, c.pixel.v + r + 1});
  }

  static const std::vector<Pixel> offsets = spiral_offsets();
  for (const auto& c : markset.candidates) {
    const int tw = text_width(c.label, style.caption_scale) + 4;
    const int th = text_height(style.caption_scale) + 4;
    const Pixel preferred{c.pixel.u + style.dot_radius + 2, c.pixel.v - th / 2};

    auto box_at = [&](Pixel off) {
      return PixelRect{preferred.u + off.u, preferred.v + off.v, preferred.u + off.u + tw, preferred.v + off.v + th};
    };
    auto clear_of = [&](const PixelRect& b, bool check_dots) {
      for (const auto& placed : out.captions)
        if (overlaps(b, placed.box)) return false;
      if (check_dots)
        for (const auto& d : dots)
          if (overlaps(b, d)) return false;
      return true;
    };

    std::optional<PixelRect> chosen;
    for (int pass = 0; pass < 2 && !chosen; ++pass) {
      for (const Pixel& off : offsets) {
        const PixelRect b = box_at(off);
        if (inside(b, grid.width, grid.height) && clear_of(b, pass == 0)) {
          chosen = b;
          break;
        }
      }
    }
    if (!chosen) {
      // Nothing free: clamp the preferred box into the frame.
      PixelRect b = box_at({0, 0});
      const int du = std::clamp(b.u0, 0, std::max(0, grid.width - tw)) - b.u0;
      const int dv = std::clamp(b.v0, 0, std::max(0, grid.height - th)) - b.v0;
      chosen = PixelRect{b.u0 + du, b.v0 + dv, b.u1 + du, b.v1 + dv};
    }
    fill_rect(px, *chosen, kWhite);
    draw_text(px, chosen->u0 + 2, chosen->v0 + 2, c.label, style.caption_scale,
              c.role == ObjectRole::grasped ? style.grasped_color : style.unattached_color);
    out.captions.push_back({c.label, *chosen});
  }
  return out;
}

}  // namespace keymark::marks
