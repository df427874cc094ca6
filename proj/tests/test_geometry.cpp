#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <random>

#include "polyseq/geometry.hpp"

using namespace polyseq::geometry;

namespace {

Polygon square(double x0, double y0, double x1, double y1) { return Polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}); }

// Crossing-number test written from scratch, without the boundary rule.
bool naive_inside(const std::vector<Vertex2>& v, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > y) != (v[j].y > y)) {
      const double cross = v[j].x + (y - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y);
      if (x < cross) in = !in;
    }
  }
  return in;
}

double distance_to_chain(Vertex2 p, const std::vector<Vertex2>& chain) {
  double best = 1e300;
  for (std::size_t i = 0; i + 1 < chain.size(); ++i) best = std::min(best, point_segment_distance(p, chain[i], chain[i + 1]));
  return best;
}

}  // namespace

TEST_CASE("polygon invariants are enforced") {
  CHECK_THROWS_AS(Polygon({{0, 0}, {1, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(Polygon({{0, 0}, {1, 0}, {1, 0}, {0, 1}}), std::invalid_argument);
  CHECK_THROWS_AS(Polygon({{0, 0}, {1, 1}, {2, 2}}), std::invalid_argument);
  CHECK_THROWS_AS(Polygon({{0, 0}, {NAN, 0}, {0, 1}}), std::invalid_argument);
  const double flat[] = {0, 0, 2, 0, 2, 1};
  CHECK(Polygon::from_flat(flat).to_flat() == std::vector<double>(std::begin(flat), std::end(flat)));
  const double odd[] = {0, 0, 2, 0, 2};
  CHECK_THROWS(Polygon::from_flat(odd));
}

TEST_CASE("signed area") {
  const Polygon unit = square(0, 0, 1, 1);
  CHECK(signed_area(unit) == 1.0);
  CHECK(signed_area(unit.reversed()) == -1.0);
  CHECK(signed_area(Polygon({{0, 0}, {4, 0}, {0, 3}})) == 6.0);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 50; ++i) {
    const Polygon p({{u(rng), u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng)}});
    CHECK(signed_area(p.reversed()) == doctest::Approx(-signed_area(p)).epsilon(1e-12));
  }
}

TEST_CASE("normalize orientation") {
  const Polygon ccw = square(0, 0, 2, 2);
  CHECK(normalize_orientation(ccw, true) == ccw);
  const Polygon cw = normalize_orientation(ccw, false);
  CHECK(cw == ccw.reversed());
  CHECK(signed_area(cw) < 0);
  CHECK(normalize_orientation(normalize_orientation(cw, true), true) == normalize_orientation(cw, true));
}

TEST_CASE("rasterize by pixel centres") {
  const Polygon sq = square(0, 0, 4, 4);
  CHECK(rasterize(sq, 4, 4).count() == 16);
  const RasterMask big = rasterize(sq, 8, 8);
  CHECK(big.count() == 16);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(big.at(r, c));
  }
  CHECK(rasterize(Polygon({{0.1, 0.0}, {0.3, 0.0}, {0.3, 8.0}, {0.1, 8.0}}), 8, 8).count() == 0);

  SUBCASE("edge points count as inside") {
    const RasterMask m = rasterize(square(0.5, 0.5, 2.5, 2.5), 4, 4);
    CHECK(m.count() == 9);
  }

  SUBCASE("agrees with a crossing-number oracle off the boundary") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.13, 15.87);
    for (int t = 0; t < 40; ++t) {
      std::vector<Vertex2> v;
      for (int i = 0; i < 6; ++i) v.push_back({std::round(u(rng) * 8) / 8 + 0.01, std::round(u(rng) * 8) / 8 + 0.01});
      if (!is_valid_ring(v)) continue;
      const RasterMask m = rasterize_ring(v, 16, 16);
      for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
          std::vector<Vertex2> closed = v;
          closed.push_back(v.front());
          if (distance_to_chain({c + 0.5, r + 0.5}, closed) < 1e-9) {
            CHECK(m.at(r, c));
            continue;
          }
          CHECK(m.at(r, c) == naive_inside(v, c + 0.5, r + 0.5));
        }
      }
    }
  }

  SUBCASE("integer translation shifts bits") {
    const Polygon tri({{1.2, 0.7}, {6.9, 2.1}, {3.3, 5.6}});
    const RasterMask a = rasterize(tri, 12, 12);
    const RasterMask b = rasterize(tri.translated(3, 2), 12, 12);
    for (int r = 0; r < 10; ++r) {
      for (int c = 0; c < 9; ++c) CHECK(a.at(r, c) == b.at(r + 2, c + 3));
    }
  }
}

TEST_CASE("mask iou") {
  RasterMask a(3, 1), b(3, 1), empty(3, 1);
  a.set(0, 0);
  a.set(0, 1);
  b.set(0, 1);
  b.set(0, 2);
  CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(mask_iou(a, b) == mask_iou(b, a));
  CHECK(mask_iou(a, a) == 1.0);
  CHECK(mask_iou(empty, empty) == 0.0);
  RasterMask c(3, 1);
  c.set(0, 2);
  CHECK(mask_iou(a, c) == 0.0);
  CHECK_THROWS_AS(mask_iou(a, RasterMask(2, 2)), std::invalid_argument);
}

TEST_CASE("polygon iou") {
  const Polygon sq = square(0, 0, 1, 1);
  CHECK(polygon_iou(sq, sq) == 1.0);
  CHECK(polygon_iou(sq, sq.translated(3, 0)) == 0.0);
  CHECK(std::abs(polygon_iou(sq, sq.translated(0.5, 0), 256) - 1.0 / 3.0) <= 0.02);
  CHECK(std::abs(polygon_iou(sq, sq.translated(0.5, 0), 1024) - 1.0 / 3.0) <=
        std::abs(polygon_iou(sq, sq.translated(0.5, 0), 64) - 1.0 / 3.0));
  CHECK_THROWS_AS(polygon_iou(sq, sq, 8), std::invalid_argument);
}

TEST_CASE("douglas-peucker") {
  const std::vector<Vertex2> collinear{{0, 0}, {1, 0}, {2, 0}};
  CHECK(douglas_peucker(collinear, 0.1) == std::vector<Vertex2>{{0, 0}, {2, 0}});
  const std::vector<Vertex2> zigzag{{0, 0}, {1, 0.4}, {2, 0}, {3, 0.4}, {4, 0}};
  CHECK(douglas_peucker(zigzag, 0.0) == zigzag);
  CHECK(douglas_peucker(zigzag, 0.5) == std::vector<Vertex2>{{0, 0}, {4, 0}});
  // the first deviation equal to epsilon is kept, the rest fall below it
  CHECK(douglas_peucker(zigzag, 0.4) == std::vector<Vertex2>{{0, 0}, {1, 0.4}, {4, 0}});
  CHECK_THROWS(douglas_peucker(std::vector<Vertex2>{{0, 0}}, 1.0));
  CHECK_THROWS(douglas_peucker(zigzag, -1.0));

  SUBCASE("output is a subsequence and dropped points stay within epsilon") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 30; ++t) {
      std::vector<Vertex2> line;
      for (int i = 0; i < 25; ++i) line.push_back({i + 0.1 * n(rng), n(rng)});
      const double eps = 0.2 + 0.1 * t;
      const auto out = douglas_peucker(line, eps);
      CHECK(out.front() == line.front());
      CHECK(out.back() == line.back());
      std::size_t j = 0;
      for (const Vertex2& p : line) {
        if (j < out.size() && p == out[j]) {
          ++j;
        } else {
          CHECK(distance_to_chain(p, out) < eps);
        }
      }
      CHECK(j == out.size());
    }
  }

  SUBCASE("closed ring") {
    const Polygon split({{0, 0}, {5, 0}, {10, 0}, {10, 10}, {0, 10}});
    CHECK(simplify_polygon(split, 0.0) == split);
    CHECK(simplify_polygon(split, 0.5).size() == 4);
  }
}

TEST_CASE("marching squares") {
  CHECK(marching_squares(RasterMask(5, 5)).empty());

  RasterMask one(3, 3);
  one.set(1, 1);
  const auto rings = marching_squares(one);
  REQUIRE(rings.size() == 1);
  CHECK(rings[0].size() == 4);
  CHECK(signed_area(rings[0]) > 0);
  for (const Vertex2& v : rings[0].vertices()) {
    const bool on_cell_edge = (v.x == 1.5 && (v.y == 1.0 || v.y == 2.0)) || (v.y == 1.5 && (v.x == 1.0 || v.x == 2.0));
    CHECK(on_cell_edge);
  }

  SUBCASE("ring with a hole") {
    RasterMask m(5, 5);
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 5; ++c) m.set(r, c, !(r == 2 && c == 2));
    }
    const auto out = marching_squares(m);
    REQUIRE(out.size() == 2);
    int outer = 0, hole = 0;
    for (const auto& p : out) (signed_area(p) > 0 ? outer : hole)++;
    CHECK(outer == 1);
    CHECK(hole == 1);
  }

  SUBCASE("raster round trip") {
    const Polygon sq = square(10.3, 12.7, 50.2, 41.9);
    const RasterMask m = rasterize(sq, 64, 64);
    const auto out = marching_squares(m);
    REQUIRE(out.size() == 1);
    CHECK(mask_iou(m, rasterize(out[0], 64, 64)) >= 0.95);
  }

  SUBCASE("contours are closed simple rings on random masks") {
    std::mt19937_64 rng(4);
    std::bernoulli_distribution bit(0.45);
    for (int t = 0; t < 40; ++t) {
      RasterMask m(16, 16);
      for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) m.set(r, c, bit(rng));
      }
      for (const Polygon& p : marching_squares(m)) {
        const auto& v = p.vertices();
        const std::size_t n = v.size();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) {
            if (j == i + 1 || (i == 0 && j == n - 1)) continue;
            CHECK_FALSE(segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]));
          }
        }
      }
    }
  }
}

TEST_CASE("bbox") {
  const BBox b = BBox::from_xywh(1, 2, 4, 6);
  CHECK(b.cx == 3.0);
  CHECK(b.cy == 5.0);
  CHECK(b.x1() == 5.0);
  const std::vector<Vertex2> ring{{1, 2}, {5, 2}, {5, 8}};
  CHECK(bounding_box(ring) == b);
  CHECK_FALSE(BBox{0, 0, 0, 1}.valid());
}
