#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "keymark/geometry/contour.hpp"
#include "keymark/geometry/image_io.hpp"
#include "keymark/marks/marks.hpp"
#include "test_support.hpp"

using namespace keymark;
using namespace keymark::marks;
using keymark::testing::brute_force_fps;
using keymark::testing::rect_mask;

TEST_CASE("keypoint proposal on a square") {
  const BinaryMask m = rect_mask(60, 60, 10, 10, 40, 40);
  const auto cands = propose_keypoints(m, ObjectRole::grasped, 4);
  REQUIRE(cands.size() == 5);
  const auto contour = geometry::extract_contour(m);
  const auto oracle = brute_force_fps(contour.points, 4, contour.centroid.x(), contour.centroid.y());
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(cands[i].label == "P" + std::to_string(i));
    CHECK(cands[i].source == KeypointSource::boundary);
    CHECK(cands[i].pixel == contour.points[oracle[i]]);
  }
  CHECK(cands[4].label == "P4");
  CHECK(cands[4].source == KeypointSource::center);
  CHECK(cands[4].pixel == Pixel{25, 25});

  CHECK(propose_keypoints(m, ObjectRole::grasped, 8).size() == 9);
  const auto q = propose_keypoints(m, ObjectRole::unattached, 8);
  for (std::size_t i = 0; i < q.size(); ++i) {
    CHECK(q[i].label == "Q" + std::to_string(i));
    CHECK(q[i].role == ObjectRole::unattached);
  }
  CHECK_THROWS_AS(propose_keypoints(BinaryMask(5, 5, 0), ObjectRole::grasped, 4), EmptyMask);
  BinaryMask dot(5, 5, 0);
  dot.at(2, 2) = 1;
  CHECK_THROWS_AS(propose_keypoints(dot, ObjectRole::grasped, 4), DegenerateContour);
}

TEST_CASE("candidate invariants on random masks") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    BinaryMask m(80, 60, 0);
    std::uniform_int_distribution<int> U(0, 79), V(0, 59);
    for (int r = 0; r < 3; ++r) {
      int u0 = U(rng), v0 = V(rng), u1 = U(rng), v1 = V(rng);
      if (u0 > u1) std::swap(u0, u1);
      if (v0 > v1) std::swap(v0, v1);
      for (int v = v0; v <= std::min(v1, v0 + 20); ++v)
        for (int u = u0; u <= std::min(u1, u0 + 25); ++u) m.at(u, v) = 1;
    }
    const auto contour = geometry::extract_contour(m);
    const std::size_t k = std::min<std::size_t>(8, contour.size());
    if (contour.size() < 3) continue;
    const auto cands = propose_keypoints(m, ObjectRole::unattached, k);
    std::set<int> indices;
    for (const auto& c : cands) {
      CHECK(m.at(c.pixel));
      CHECK(c.label[0] == 'Q');
      indices.insert(std::stoi(c.label.substr(1)));
      if (c.source == KeypointSource::boundary) {
        CHECK(std::find(contour.points.begin(), contour.points.end(), c.pixel) != contour.points.end());
      }
    }
    CHECK(indices.size() == k + 1);
    CHECK(*indices.begin() == 0);
    CHECK(*indices.rbegin() == static_cast<int>(k));
  }
}

TEST_CASE("grid construction and tile bounds") {
  const GridSpec g = build_grid(500, 500);
  CHECK(g.rows == 5);
  CHECK(g.cols == 5);
  for (int c = 0; c < 5; ++c) {
    const auto r = tile_bounds(g, {c, 1});
    CHECK(r.u0 == 100 * c);
    CHECK(r.u1 == 100 * (c + 1));
  }
  CHECK(tile_bounds(g, {0, 1}) == geometry::PixelRect{0, 400, 100, 500});
  CHECK(tile_bounds(g, {4, 5}) == geometry::PixelRect{400, 0, 500, 100});
  const auto c3 = tile_bounds(g, parse_tile_name("c3", g));
  CHECK((c3.u0 + c3.u1) / 2 == 250);
  CHECK((c3.v0 + c3.v1) / 2 == 250);

  const GridSpec wide = build_grid(501, 500);
  CHECK(tile_bounds(wide, {4, 3}).width() == 101);
  CHECK(tile_bounds(wide, {3, 3}).width() == 100);
  const GridSpec tall = build_grid(500, 503);
  CHECK(tile_bounds(tall, {0, 1}).height() == 103);
  CHECK(tile_bounds(tall, {0, 1}).v1 == 503);
  CHECK_THROWS_AS(tile_bounds(g, {5, 1}), TileOutOfRange);
  CHECK_THROWS_AS(tile_bounds(g, {0, 0}), TileOutOfRange);
}

TEST_CASE("tile names") {
  const GridSpec g = build_grid(500, 500);
  CHECK(parse_tile_name("c4", g) == TileId{2, 4});
  CHECK(parse_tile_name("C4", g) == parse_tile_name("c4", g));
  CHECK_THROWS_AS(parse_tile_name("f1", g), TileOutOfRange);
  CHECK_THROWS_AS(parse_tile_name("a6", g), TileOutOfRange);
  CHECK_THROWS_AS(parse_tile_name("a0", g), TileOutOfRange);
  CHECK_THROWS_AS(parse_tile_name("4c", g), MalformedTile);
  CHECK_THROWS_AS(parse_tile_name("", g), MalformedTile);
  CHECK_THROWS_AS(parse_tile_name("c", g), MalformedTile);
  CHECK_THROWS_AS(parse_tile_name("c4 ", g), MalformedTile);
  CHECK(tile_name({2, 4}) == "c4");
}

TEST_CASE("tiles partition the image and names round-trip") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = std::uniform_int_distribution<int>(20, 90)(rng);
    const int h = std::uniform_int_distribution<int>(20, 90)(rng);
    const int m = std::uniform_int_distribution<int>(1, 9)(rng);
    const int n = std::uniform_int_distribution<int>(1, 9)(rng);
    const GridSpec g = build_grid(w, h, m, n);
    std::vector<int> hits(static_cast<std::size_t>(w) * h, 0);
    for (int row = 1; row <= m; ++row) {
      for (int col = 0; col < n; ++col) {
        const TileId t{col, row};
        CHECK(parse_tile_name(tile_name(t), g) == t);
        const auto r = tile_bounds(g, t);
        CHECK(r.width() > 0);
        CHECK(r.height() > 0);
        for (int v = r.v0; v < r.v1; ++v)
          for (int u = r.u0; u < r.u1; ++u) {
            ++hits[static_cast<std::size_t>(v) * w + u];
            CHECK(tile_at(g, {u, v}) == t);
          }
      }
    }
    CHECK(std::all_of(hits.begin(), hits.end(), [](int x) { return x == 1; }));
  }
}

TEST_CASE("sampling inside a tile") {
  const GridSpec g = build_grid(500, 500);
  const TileId a1 = parse_tile_name("a1", g);
  const auto r = tile_bounds(g, a1);
  CHECK(sample_point_in_tile(g, a1, 9) == sample_point_in_tile(g, a1, 9));
  double su = 0, sv = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Pixel p = sample_point_in_tile(g, a1, static_cast<std::uint64_t>(i));
    CHECK(r.contains(p));
    su += p.u;
    sv += p.v;
  }
  CHECK(std::abs(su / n - (r.u0 + r.u1 - 1) / 2.0) < 3.0);
  CHECK(std::abs(sv / n - (r.v0 + r.v1 - 1) / 2.0) < 3.0);
  CHECK_THROWS_AS(sample_point_in_tile(g, {7, 1}, 0), TileOutOfRange);
}

namespace {

MarkSet two_object_markset(const BinaryMask& a, const BinaryMask& b) {
  return build_markset({{"cup", &a, ObjectRole::grasped}, {"tray", &b, ObjectRole::unattached}}, 8,
                       build_grid(a.width(), a.height()), "obs-0");
}

}  // namespace

TEST_CASE("selection resolution") {
  const BinaryMask a = rect_mask(200, 150, 20, 20, 60, 60);
  const BinaryMask b = rect_mask(200, 150, 100, 60, 180, 130);
  const MarkSet ms = two_object_markset(a, b);
  CHECK(resolve_selection(ms, "P3") == ms.find("P3")->pixel);
  CHECK(ms.find("P3")->object == "cup");
  CHECK(ms.find("Q8")->source == KeypointSource::center);
  try {
    resolve_selection(ms, "P9");
    FAIL("expected UnknownLabel");
  } catch (const UnknownLabel& e) {
    CHECK(e.label == "P9");
    CHECK(e.valid.size() == 18);
  }
  const MarkSet grasp_only =
      build_markset({{"cup", &a, ObjectRole::grasped}}, 8, build_grid(200, 150), "obs-1");
  CHECK_THROWS_AS(resolve_selection(grasp_only, "Q0"), UnknownLabel);
  CHECK_FALSE(grasp_only.has_role(ObjectRole::unattached));
}

TEST_CASE("labels stay contiguous across objects of one role") {
  const BinaryMask a = rect_mask(200, 150, 20, 20, 60, 60);
  const BinaryMask b = rect_mask(200, 150, 100, 60, 180, 130);
  const MarkSet ms = build_markset({{"cup", &a, ObjectRole::grasped}, {"tray", &b, ObjectRole::grasped}}, 4,
                                   build_grid(200, 150), "x");
  const auto labels = ms.labels(ObjectRole::grasped);
  REQUIRE(labels.size() == 10);
  for (std::size_t i = 0; i < labels.size(); ++i) CHECK(labels[i] == "P" + std::to_string(i));
  CHECK(ms.find("P5")->object == "tray");
}

TEST_CASE("mark set JSON round trip") {
  const BinaryMask a = rect_mask(200, 150, 20, 20, 60, 60);
  const BinaryMask b = rect_mask(200, 150, 100, 60, 180, 130);
  const MarkSet ms = two_object_markset(a, b);
  const nlohmann::json j = ms;
  CHECK(j["grid"]["m"] == 5);
  CHECK(j["candidates"][0]["role"] == "grasped");
  CHECK(j.get<MarkSet>() == ms);
  CHECK_THROWS_AS(nlohmann::json({{"candidates", 3}}).get<MarkSet>(), MalformedJson);
}

TEST_CASE("rendering") {
  const BinaryMask a = rect_mask(200, 150, 20, 20, 60, 60);
  const BinaryMask b = rect_mask(200, 150, 100, 60, 180, 130);
  const RgbImage base(200, 150, geometry::Rgb{200, 200, 200});
  const MarkSet ms = two_object_markset(a, b);

  SUBCASE("deterministic") {
    const auto r1 = render_marks(base, ms);
    const auto r2 = render_marks(base, ms);
    CHECK(geometry::encode_png(r1.pixels) == geometry::encode_png(r2.pixels));
    CHECK(r1.pixels.width() == 200);
    CHECK(r1.pixels.height() == 150);
  }
  SUBCASE("dots carry role colors and captions do not collide") {
    const auto r = render_marks(base, ms);
    RenderStyle style;
    for (const auto& c : ms.candidates) {
      const auto expected = c.role == ObjectRole::grasped ? style.grasped_color : style.unattached_color;
      bool found = false;
      for (int dv = -6; dv <= 6 && !found; ++dv)
        for (int du = -6; du <= 6 && !found; ++du)
          if (r.pixels.contains(c.pixel.u + du, c.pixel.v + dv))
            found = r.pixels.at(c.pixel.u + du, c.pixel.v + dv) == expected;
      CHECK(found);
    }
    REQUIRE(r.captions.size() == ms.candidates.size());
    for (std::size_t i = 0; i < r.captions.size(); ++i) {
      const auto& bi = r.captions[i].box;
      CHECK(bi.u0 >= 0);
      CHECK(bi.v0 >= 0);
      CHECK(bi.u1 <= 200);
      CHECK(bi.v1 <= 150);
      CHECK(bi.height() >= 14);
      for (std::size_t j = i + 1; j < r.captions.size(); ++j) {
        const auto& bj = r.captions[j].box;
        const bool disjoint = bi.u1 <= bj.u0 || bj.u1 <= bi.u0 || bi.v1 <= bj.v0 || bj.v1 <= bi.v0;
        CHECK(disjoint);
      }
    }
  }
  SUBCASE("empty candidate list only draws the grid") {
    MarkSet empty;
    empty.grid = build_grid(200, 150);
    const auto r = render_marks(base, empty);
    CHECK(r.captions.empty());
    RenderStyle style;
    for (const auto& px : r.pixels.data()) {
      CHECK(px != style.grasped_color);
      CHECK(px != style.unattached_color);
    }
    CHECK(r.pixels.at(40, 75) == style.grid_color);  // first vertical line
    CHECK(r.pixels.at(100, 90) == style.grid_color);  // horizontal line between rows 2 and 3
    CHECK(r.pixels.at(20, 50) == base.at(20, 50));
  }
  SUBCASE("corner candidates keep their captions in frame") {
    MarkSet corners;
    corners.grid = build_grid(200, 150);
    const std::vector<Pixel> pts{{0, 0}, {199, 0}, {0, 149}, {199, 149}, {198, 148}};
    for (std::size_t i = 0; i < pts.size(); ++i)
      corners.candidates.push_back({"P" + std::to_string(i), pts[i], ObjectRole::grasped, KeypointSource::boundary, "x"});
    const auto r = render_marks(base, corners);
    for (const auto& cap : r.captions) {
      CHECK(cap.box.u0 >= 0);
      CHECK(cap.box.v0 >= 0);
      CHECK(cap.box.u1 <= 200);
      CHECK(cap.box.v1 <= 150);
    }
  }
  SUBCASE("size mismatch") {
    CHECK_THROWS_AS(render_marks(RgbImage(100, 100), ms), DimensionMismatch);
  }
}
