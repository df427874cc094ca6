#pragma once

// COCO-subset annotation files, dataset tiling and the synthetic building
// corpus used by the toy experiments.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "polyseq/geometry.hpp"
#include "polyseq/metrics.hpp"

namespace polyseq::dataio {

struct CocoImage {
  std::int64_t id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;
  nlohmann::json extra = nlohmann::json::object();  // fields we do not interpret
};

struct CocoAnnotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::vector<std::vector<double>> segmentation;  // flat x, y rings
  std::array<double, 4> bbox{};                   // x, y, w, h
  std::int64_t category_id = 1;
  std::optional<double> score;
  nlohmann::json extra = nlohmann::json::object();
};

struct CocoDoc {
  std::vector<CocoImage> images;
  std::vector<CocoAnnotation> annotations;
  nlohmann::json categories = nlohmann::json::array();
  nlohmann::json extra = nlohmann::json::object();

  const CocoImage* find_image(std::int64_t id) const;
};

/// Throws std::invalid_argument on malformed JSON, dangling image references
/// or bad segmentation, naming the offending annotation id.
CocoDoc parse_coco(std::string_view bytes);
std::string serialize_coco(const CocoDoc& doc);

/// Largest valid ring of the annotation after dropping repeated and closing
/// vertices. Throws naming the annotation when no ring is a valid polygon.
geometry::Polygon annotation_polygon(const CocoAnnotation& a);
CocoAnnotation make_annotation(std::int64_t id, std::int64_t image_id, const geometry::Polygon& p,
                               std::optional<double> score = std::nullopt);

std::vector<metrics::GtInstance> gt_instances(const CocoDoc& doc);
/// Accepts a bare annotation array or a full document; every entry must carry
/// a numeric `score` unless `missing_score` supplies one.
std::vector<metrics::PredInstance> parse_predictions(std::string_view bytes,
                                                     std::optional<double> missing_score = std::nullopt);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

struct TileSpec {
  int tile_size = 512;
  int overlap = 128;
  double min_area_fraction = 0.5;

  int stride() const { return tile_size - overlap; }
  void validate() const;
};

/// Tile origins along one axis: stride steps with the last tile clamped to
/// the far edge. An extent no larger than the tile yields the single origin 0.
std::vector<int> tile_positions(int extent, const TileSpec& spec);

/// Splits every image into tiles. Instances whose bounding box lies inside a
/// tile are copied exactly; straddling instances are clipped on the raster
/// and re-polygonized, and dropped when they keep less than
/// min_area_fraction of their pixel area.
CocoDoc tile_dataset(const CocoDoc& doc, const TileSpec& spec, int threads = 1);

struct SynthSpec {
  int width = 64;
  int height = 64;
  int images = 16;
  int min_count = 1;
  int max_count = 3;
  bool axis_rect = true;
  bool rotated_rect = true;
  bool l_shape = true;
  int min_size = 12;
  int max_size = 26;
  int gap = 3;  // minimum empty pixels between bounding boxes
  int max_retries = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row * width + col)]; }
};

struct SynthCorpus {
  CocoDoc doc;
  std::vector<GrayImage> images;  // parallel to doc.images
};

/// Deterministic for a given spec regardless of `threads`.
SynthCorpus gen_synthetic(const SynthSpec& spec, int threads = 1);

void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace polyseq::dataio
