#include "polyseq/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace polyseq::geometry {

RasterMask::RasterMask(int width, int height) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("raster dimensions must be positive");
  }
  bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
}

std::size_t RasterMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

RasterMask rasterize(const Polygon& p, int width, int height) {
  return rasterize_ring(p.vertices(), width, height);
}

RasterMask rasterize_ring(std::span<const Vertex2> ring, int width, int height) {
  RasterMask mask(width, height);
  const std::size_t n = ring.size();
  if (n < 3) return mask;

  double ymin = ring[0].y, ymax = ring[0].y;
  for (const Vertex2& v : ring) {
    ymin = std::min(ymin, v.y);
    ymax = std::max(ymax, v.y);
  }
  const int row0 = std::max(0, static_cast<int>(std::ceil(ymin - 0.5)));
  const int row1 = std::min(height - 1, static_cast<int>(std::floor(ymax - 0.5)));

  auto set_centre = [&](int row, double x) {
    // x must be exactly a pixel-centre abscissa
    const double j = x - 0.5;
    if (j != std::floor(j)) return;
    if (j < 0.0 || j > static_cast<double>(width - 1)) return;
    mask.set(row, static_cast<int>(j));
  };

  std::vector<double> xs;
  for (int row = row0; row <= row1; ++row) {
    const double yc = row + 0.5;
    xs.clear();
    for (std::size_t k = 0; k < n; ++k) {
      const Vertex2& a = ring[k];
      const Vertex2& b = ring[(k + 1) % n];
      if ((a.y <= yc && yc < b.y) || (b.y <= yc && yc < a.y)) {
        xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const double lo = std::ceil(xs[k] - 0.5);
      const double hi = std::floor(xs[k + 1] - 0.5);
      const int j0 = static_cast<int>(std::max(0.0, lo));
      const int j1 = static_cast<int>(std::min(static_cast<double>(width - 1), hi));
      for (int j = j0; j <= j1; ++j) mask.set(row, j);
    }

    // Centres lying exactly on an edge belong to the polygon.
    for (std::size_t k = 0; k < n; ++k) {
      const Vertex2& a = ring[k];
      const Vertex2& b = ring[(k + 1) % n];
      if (a.y == yc && b.y == yc) {
        const double lo = std::ceil(std::min(a.x, b.x) - 0.5);
        const double hi = std::floor(std::max(a.x, b.x) - 0.5);
        const int j0 = static_cast<int>(std::max(0.0, lo));
        const int j1 = static_cast<int>(std::min(static_cast<double>(width - 1), hi));
        for (int j = j0; j <= j1; ++j) mask.set(row, j);
      } else if (std::min(a.y, b.y) <= yc && yc <= std::max(a.y, b.y)) {
        const double x = a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y);
        set_centre(row, x);
      }
    }
  }
  return mask;
}

double mask_iou(const RasterMask& a, const RasterMask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw std::invalid_argument("mask_iou: dimension mismatch");
  }
  const auto ab = a.bits();
  const auto bb = b.bits();
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += static_cast<std::size_t>(ab[i] & bb[i]);
    uni += static_cast<std::size_t>(ab[i] | bb[i]);
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double polygon_iou(const Polygon& a, const Polygon& b, int resolution) {
  if (resolution < 16) throw std::invalid_argument("polygon_iou: resolution must be >= 16");
  const BBox ba = bounding_box(a.vertices());
  const BBox bb = bounding_box(b.vertices());
  const double x0 = std::min(ba.x0(), bb.x0());
  const double y0 = std::min(ba.y0(), bb.y0());
  const double x1 = std::max(ba.x1(), bb.x1());
  const double y1 = std::max(ba.y1(), bb.y1());
  const double span = std::max(x1 - x0, y1 - y0);
  const double scale = static_cast<double>(resolution) / span;
  const int w = std::max(1, static_cast<int>(std::ceil((x1 - x0) * scale)));
  const int h = std::max(1, static_cast<int>(std::ceil((y1 - y0) * scale)));

  auto to_window = [&](const Polygon& p) {
    std::vector<Vertex2> out;
    out.reserve(p.size());
    for (const Vertex2& v : p.vertices()) out.push_back({(v.x - x0) * scale, (v.y - y0) * scale});
    return rasterize_ring(out, w, h);
  };
  return mask_iou(to_window(a), to_window(b));
}

}  // namespace polyseq::geometry
