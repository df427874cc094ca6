#include "polyseq/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace polyseq::geometry {

bool is_valid_ring(std::span<const Vertex2> ring) {
  const std::size_t n = ring.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(ring[i].x) || !std::isfinite(ring[i].y)) return false;
    if (ring[i] == ring[(i + 1) % n]) return false;
  }
  return signed_area(ring) != 0.0;
}

std::vector<Vertex2> dedupe_ring(std::span<const Vertex2> ring) {
  std::vector<Vertex2> out;
  out.reserve(ring.size());
  for (const Vertex2& v : ring) {
    if (out.empty() || !(out.back() == v)) out.push_back(v);
  }
  while (out.size() > 1 && out.back() == out.front()) out.pop_back();
  return out;
}

Polygon::Polygon(std::vector<Vertex2> vertices) : vertices_(std::move(vertices)) {
  if (vertices_.size() < 3) {
    throw std::invalid_argument("polygon needs at least 3 vertices, got " +
                                std::to_string(vertices_.size()));
  }
  if (!is_valid_ring(vertices_)) {
    throw std::invalid_argument(
        "polygon has non-finite coordinates, repeated consecutive vertices or zero area");
  }
}

Polygon Polygon::from_flat(std::span<const double> coords) {
  if (coords.size() % 2 != 0) {
    throw std::invalid_argument("flat coordinate list has odd length " +
                                std::to_string(coords.size()));
  }
  std::vector<Vertex2> v;
  v.reserve(coords.size() / 2);
  for (std::size_t i = 0; i < coords.size(); i += 2) v.push_back({coords[i], coords[i + 1]});
  return Polygon(std::move(v));
}

std::vector<double> Polygon::to_flat() const {
  std::vector<double> out;
  out.reserve(vertices_.size() * 2);
  for (const Vertex2& v : vertices_) {
    out.push_back(v.x);
    out.push_back(v.y);
  }
  return out;
}

Polygon Polygon::translated(double dx, double dy) const {
  std::vector<Vertex2> v = vertices_;
  for (Vertex2& p : v) {
    p.x += dx;
    p.y += dy;
  }
  return Polygon(std::move(v));
}

Polygon Polygon::reversed() const {
  std::vector<Vertex2> v(vertices_.rbegin(), vertices_.rend());
  return Polygon(std::move(v));
}

BBox BBox::from_corners(double x0, double y0, double x1, double y1) {
  return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
}

BBox BBox::from_xywh(double x, double y, double w, double h) {
  return {x + 0.5 * w, y + 0.5 * h, w, h};
}

bool BBox::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) &&
         w > 0.0 && h > 0.0;
}

BBox bounding_box(std::span<const Vertex2> ring) {
  if (ring.empty()) throw std::invalid_argument("bounding_box of empty ring");
  double x0 = ring[0].x, x1 = ring[0].x, y0 = ring[0].y, y1 = ring[0].y;
  for (const Vertex2& v : ring) {
    x0 = std::min(x0, v.x);
    x1 = std::max(x1, v.x);
    y0 = std::min(y0, v.y);
    y1 = std::max(y1, v.y);
  }
  return BBox::from_corners(x0, y0, x1, y1);
}

double signed_area(std::span<const Vertex2> ring) {
  const std::size_t n = ring.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vertex2& a = ring[i];
    const Vertex2& b = ring[(i + 1) % n];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * acc;
}

double signed_area(const Polygon& p) { return signed_area(p.vertices()); }

Polygon normalize_orientation(const Polygon& p, bool ccw) {
  const bool is_ccw = signed_area(p) > 0.0;
  return is_ccw == ccw ? p : p.reversed();
}

double point_segment_distance(Vertex2 p, Vertex2 a, Vertex2 b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  const double qx = a.x + t * dx - p.x;
  const double qy = a.y + t * dy - p.y;
  return std::hypot(qx, qy);
}

namespace {

double cross(Vertex2 o, Vertex2 a, Vertex2 b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(Vertex2 p, Vertex2 a, Vertex2 b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

bool segments_intersect(Vertex2 a, Vertex2 b, Vertex2 c, Vertex2 d) {
  const int d1 = sign(cross(c, d, a));
  const int d2 = sign(cross(c, d, b));
  const int d3 = sign(cross(a, b, c));
  const int d4 = sign(cross(a, b, d));
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  if (d1 == 0 && on_segment(a, c, d)) return true;
  if (d2 == 0 && on_segment(b, c, d)) return true;
  if (d3 == 0 && on_segment(c, a, b)) return true;
  if (d4 == 0 && on_segment(d, a, b)) return true;
  return false;
}

}  // namespace polyseq::geometry
