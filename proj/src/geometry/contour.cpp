#include "polyseq/geometry.hpp"

#include <array>
#include <cstdint>

namespace polyseq::geometry {

namespace {

// Crossing points live on half-integer pixel coordinates; doubling them makes
// every contour vertex an exact integer pair.
struct IPoint {
  std::int64_t x;
  std::int64_t y;
};

enum Edge { kTop = 0, kRight = 1, kBottom = 2, kLeft = 3 };

IPoint edge_midpoint(Edge e, int ci, int cj) {
  switch (e) {
    case kTop: return {2 * cj + 2, 2 * ci + 1};
    case kRight: return {2 * cj + 3, 2 * ci + 2};
    case kBottom: return {2 * cj + 2, 2 * ci + 3};
    case kLeft: return {2 * cj + 1, 2 * ci + 2};
  }
  return {0, 0};
}

std::int64_t cross(IPoint o, IPoint a, IPoint b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<Polygon> marching_squares(const RasterMask& m) {
  const int h = m.height();
  const int w = m.width();
  auto sample = [&](int i, int j) -> int {
    if (i < 0 || j < 0 || i >= h || j >= w) return 0;
    return m.at(i, j) ? 1 : 0;
  };

  // Doubled coordinates are shifted by +2 so the padding ring maps to >= 0.
  const std::int64_t stride = 2 * static_cast<std::int64_t>(w) + 5;
  auto key = [&](IPoint p) { return (p.y + 2) * stride + (p.x + 2); };
  const std::size_t slots = static_cast<std::size_t>((2 * static_cast<std::int64_t>(h) + 5) * stride);

  struct Segment {
    IPoint from;
    IPoint to;
  };
  std::vector<Segment> segments;
  std::vector<std::int64_t> next_of(slots, -1);

  auto emit = [&](Edge from, Edge to, int ci, int cj) {
    const Segment s{edge_midpoint(from, ci, cj), edge_midpoint(to, ci, cj)};
    next_of[static_cast<std::size_t>(key(s.from))] = static_cast<std::int64_t>(segments.size());
    segments.push_back(s);
  };

  for (int ci = -1; ci < h; ++ci) {
    for (int cj = -1; cj < w; ++cj) {
      // Corners in clockwise (screen) order: TL, TR, BR, BL.
      const std::array<int, 4> c{sample(ci, cj), sample(ci, cj + 1), sample(ci + 1, cj + 1),
                                 sample(ci + 1, cj)};
      const int sum = c[0] + c[1] + c[2] + c[3];
      if (sum == 0 || sum == 4) continue;

      // Edge k runs from corner k to corner k+1. Segments go from the edge
      // where the clockwise walk leaves the foreground to the edge where it
      // re-enters, which yields positive area for outer boundaries.
      if (sum == 2 && c[0] == c[2]) {
        // Saddle: corner average is exactly 0.5, which counts as foreground,
        // so the two diagonal foreground pixels are joined.
        if (c[0] == 1) {
          emit(kTop, kRight, ci, cj);
          emit(kBottom, kLeft, ci, cj);
        } else {
          emit(kLeft, kTop, ci, cj);
          emit(kRight, kBottom, ci, cj);
        }
        continue;
      }
      Edge exit_edge = kTop, enter_edge = kTop;
      for (int k = 0; k < 4; ++k) {
        const int a = c[static_cast<std::size_t>(k)];
        const int b = c[static_cast<std::size_t>((k + 1) % 4)];
        if (a == 1 && b == 0) exit_edge = static_cast<Edge>(k);
        if (a == 0 && b == 1) enter_edge = static_cast<Edge>(k);
      }
      emit(exit_edge, enter_edge, ci, cj);
    }
  }

  std::vector<bool> used(segments.size(), false);
  std::vector<Polygon> out;
  for (std::size_t s0 = 0; s0 < segments.size(); ++s0) {
    if (used[s0]) continue;
    std::vector<IPoint> ring;
    std::size_t s = s0;
    while (!used[s]) {
      used[s] = true;
      ring.push_back(segments[s].from);
      const std::int64_t nx = next_of[static_cast<std::size_t>(key(segments[s].to))];
      if (nx < 0) break;
      s = static_cast<std::size_t>(nx);
    }

    std::vector<Vertex2> verts;
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
      const IPoint prev = ring[(i + n - 1) % n];
      const IPoint next = ring[(i + 1) % n];
      if (cross(prev, ring[i], next) == 0) continue;
      verts.push_back({0.5 * static_cast<double>(ring[i].x), 0.5 * static_cast<double>(ring[i].y)});
    }
    if (is_valid_ring(verts)) out.emplace_back(std::move(verts));
  }
  return out;
}

}  // namespace polyseq::geometry
