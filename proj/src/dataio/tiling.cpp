#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "polyseq/dataio.hpp"

namespace polyseq::dataio {

namespace {

// Pixel area of `p` counted on its own integer-aligned bounding window.
std::size_t pixel_area(const geometry::Polygon& p) {
  const geometry::BBox box = geometry::bounding_box(p.vertices());
  const double ox = std::floor(box.x0()), oy = std::floor(box.y0());
  const int w = static_cast<int>(std::ceil(box.x1() - ox)) + 1;
  const int h = static_cast<int>(std::ceil(box.y1() - oy)) + 1;
  return geometry::rasterize(p.translated(-ox, -oy), w, h).count();
}

// `local` is already in tile coordinates.
std::optional<geometry::Polygon> clip_to_tile(const geometry::Polygon& local, int tw, int th,
                                              double min_fraction) {
  const std::size_t original = pixel_area(local);
  if (original == 0) return std::nullopt;
  const geometry::RasterMask clipped = geometry::rasterize(local, tw, th);
  const std::size_t kept = clipped.count();
  if (kept == 0 || static_cast<double>(kept) < min_fraction * static_cast<double>(original)) return std::nullopt;

  std::optional<geometry::Polygon> best;
  double best_area = 0.0;
  for (geometry::Polygon& ring : geometry::marching_squares(clipped)) {
    const double area = geometry::signed_area(ring);
    if (area > best_area) {
      best_area = area;
      best = std::move(ring);
    }
  }
  return best;
}

}  // namespace

void TileSpec::validate() const {
  if (tile_size <= 0) throw std::invalid_argument("tile size must be positive");
  if (overlap <= 0 || overlap >= tile_size) throw std::invalid_argument("overlap must lie in (0, tile size)");
  if (!(min_area_fraction > 0.0 && min_area_fraction <= 1.0)) {
    throw std::invalid_argument("minimum area fraction must lie in (0, 1]");
  }
}

std::vector<int> tile_positions(int extent, const TileSpec& spec) {
  spec.validate();
  if (extent <= 0) throw std::invalid_argument("tile_positions: extent must be positive");
  if (extent <= spec.tile_size) return {0};
  const int span = extent - spec.tile_size;
  const int count = (span + spec.stride() - 1) / spec.stride() + 1;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) out.push_back(std::min(k * spec.stride(), span));
  return out;
}

CocoDoc tile_dataset(const CocoDoc& doc, const TileSpec& spec, int threads) {
  spec.validate();
  struct Tile {
    const CocoImage* source;
    int x, y, w, h;
  };
  std::vector<Tile> tiles;
  for (const CocoImage& im : doc.images) {
    for (int y : tile_positions(im.height, spec)) {
      for (int x : tile_positions(im.width, spec)) {
        tiles.push_back({&im, x, y, std::min(spec.tile_size, im.width), std::min(spec.tile_size, im.height)});
      }
    }
  }

  std::vector<std::vector<const CocoAnnotation*>> by_image(doc.images.size());
  std::vector<std::vector<geometry::Polygon>> polys(doc.images.size());
  std::unordered_map<std::int64_t, std::size_t> image_index;
  for (std::size_t i = 0; i < doc.images.size(); ++i) image_index[doc.images[i].id] = i;
  for (const CocoAnnotation& a : doc.annotations) {
    const std::size_t i = image_index.at(a.image_id);
    by_image[i].push_back(&a);
    polys[i].push_back(annotation_polygon(a));
  }

  // kept[t] = (annotation, tile-local polygon)
  std::vector<std::vector<std::pair<const CocoAnnotation*, geometry::Polygon>>> kept(tiles.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
  for (std::ptrdiff_t ti = 0; ti < static_cast<std::ptrdiff_t>(tiles.size()); ++ti) {
    const Tile& t = tiles[static_cast<std::size_t>(ti)];
    const std::size_t img = static_cast<std::size_t>(t.source - doc.images.data());
    for (std::size_t k = 0; k < polys[img].size(); ++k) {
      const geometry::Polygon& p = polys[img][k];
      const geometry::BBox box = geometry::bounding_box(p.vertices());
      if (box.x1() <= t.x || box.y1() <= t.y || box.x0() >= t.x + t.w || box.y0() >= t.y + t.h) continue;
      geometry::Polygon local = p.translated(-t.x, -t.y);
      if (box.x0() >= t.x && box.y0() >= t.y && box.x1() <= t.x + t.w && box.y1() <= t.y + t.h) {
        kept[static_cast<std::size_t>(ti)].emplace_back(by_image[img][k], std::move(local));
        continue;
      }
      if (auto clipped = clip_to_tile(local, t.w, t.h, spec.min_area_fraction)) {
        kept[static_cast<std::size_t>(ti)].emplace_back(by_image[img][k], std::move(*clipped));
      }
    }
  }

  CocoDoc out;
  out.categories = doc.categories;
  out.extra = doc.extra;
  std::int64_t next_ann = 1;
  for (std::size_t ti = 0; ti < tiles.size(); ++ti) {
    const Tile& t = tiles[ti];
    CocoImage im;
    im.id = static_cast<std::int64_t>(ti) + 1;
    im.width = t.w;
    im.height = t.h;
    im.file_name = t.source->file_name + "@" + std::to_string(t.x) + "_" + std::to_string(t.y);
    im.extra["tile"] = {{"source_image", t.source->id}, {"x", t.x}, {"y", t.y}};
    out.images.push_back(std::move(im));
    for (const auto& [src, poly] : kept[ti]) {
      CocoAnnotation a = make_annotation(next_ann++, static_cast<std::int64_t>(ti) + 1, poly);
      a.category_id = src->category_id;
      a.extra["source_annotation"] = src->id;
      out.annotations.push_back(std::move(a));
    }
  }
  return out;
}

}  // namespace polyseq::dataio
