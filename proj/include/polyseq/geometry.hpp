#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace polyseq::geometry {

struct Vertex2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vertex2&, const Vertex2&) = default;
};

/// Closed vertex ring in continuous pixel coordinates. The ring is implicitly
/// closed from the last vertex back to the first.
///
/// Construction enforces: at least three vertices, all finite, no two
/// cyclically consecutive vertices equal, non-zero signed area.
class Polygon {
 public:
  explicit Polygon(std::vector<Vertex2> vertices);

  /// Builds from a COCO style flat list `[x1, y1, x2, y2, ...]`.
  static Polygon from_flat(std::span<const double> coords);

  std::vector<double> to_flat() const;

  const std::vector<Vertex2>& vertices() const { return vertices_; }
  std::size_t size() const { return vertices_.size(); }
  const Vertex2& operator[](std::size_t i) const { return vertices_[i]; }

  Polygon translated(double dx, double dy) const;
  Polygon reversed() const;

  friend bool operator==(const Polygon&, const Polygon&) = default;

 private:
  std::vector<Vertex2> vertices_;
};

/// Returns true when `ring` satisfies the Polygon invariants.
bool is_valid_ring(std::span<const Vertex2> ring);

/// Drops cyclically consecutive duplicates (including a repeated closing vertex).
std::vector<Vertex2> dedupe_ring(std::span<const Vertex2> ring);

/// Axis-aligned box in centre/size form.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  static BBox from_corners(double x0, double y0, double x1, double y1);
  /// COCO `[x, y, w, h]` with (x, y) the top-left corner.
  static BBox from_xywh(double x, double y, double w, double h);

  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  bool valid() const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

BBox bounding_box(std::span<const Vertex2> ring);

/// Row-major binary raster. Pixel (row, col) has its centre at
/// (col + 0.5, row + 0.5).
class RasterMask {
 public:
  RasterMask(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }

  bool at(int row, int col) const { return bits_[index(row, col)] != 0; }
  void set(int row, int col, bool value = true) { bits_[index(row, col)] = value ? 1 : 0; }

  std::size_t count() const;
  std::span<const std::uint8_t> bits() const { return bits_; }
  std::span<std::uint8_t> bits() { return bits_; }

  friend bool operator==(const RasterMask&, const RasterMask&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
};

/// Shoelace area. Positive for counter-clockwise rings in a y-up frame.
double signed_area(std::span<const Vertex2> ring);
double signed_area(const Polygon& p);

/// Returns `p` with the requested orientation (positive signed area for ccw).
Polygon normalize_orientation(const Polygon& p, bool ccw);

/// Even-odd pixel-centre rasterization; centres lying exactly on an edge are
/// inside. Parts of the ring outside the window are ignored.
RasterMask rasterize(const Polygon& p, int width, int height);
RasterMask rasterize_ring(std::span<const Vertex2> ring, int width, int height);

/// |a ∩ b| / |a ∪ b|, zero when both masks are empty. Throws
/// std::invalid_argument on a dimension mismatch.
double mask_iou(const RasterMask& a, const RasterMask& b);

inline constexpr int kDefaultIouResolution = 256;

/// IoU of two polygons rasterized on their joint bounding box, scaled so the
/// long side spans `resolution` pixels.
double polygon_iou(const Polygon& a, const Polygon& b, int resolution = kDefaultIouResolution);

/// Distance from `p` to the closed segment [a, b].
double point_segment_distance(Vertex2 p, Vertex2 a, Vertex2 b);

/// Recursive Douglas-Peucker on an open chain. A point is dropped only when it
/// lies strictly closer than `epsilon` to the simplified chain, so epsilon = 0
/// returns the input unchanged.
std::vector<Vertex2> douglas_peucker(std::span<const Vertex2> line, double epsilon);

/// Douglas-Peucker on a closed ring: split at vertex 0 and the vertex farthest
/// from it, simplify both chains. Falls back to the input when the result
/// would no longer form a valid polygon.
Polygon simplify_polygon(const Polygon& p, double epsilon);

/// Contours of the 0.5 iso-level of a binary mask. Outer boundaries come out
/// with positive signed area, holes with negative. Saddle cells are resolved
/// by the average of their corners (which joins diagonal neighbours).
/// Exactly collinear consecutive vertices are merged.
std::vector<Polygon> marching_squares(const RasterMask& m);

/// True when two closed segments share at least one point.
bool segments_intersect(Vertex2 a, Vertex2 b, Vertex2 c, Vertex2 d);

}  // namespace polyseq::geometry
