#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "polyseq/dataio.hpp"

namespace polyseq::dataio {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("coco: " + what); }

std::string annotation_label(const json& a, std::size_t index) {
  if (a.is_object() && a.contains("id") && a["id"].is_number_integer()) {
    return "annotation id " + std::to_string(a["id"].get<std::int64_t>());
  }
  return "annotation #" + std::to_string(index);
}

std::vector<double> parse_ring(const json& ring, const std::string& label) {
  if (!ring.is_array()) fail(label + ": segmentation ring is not an array");
  std::vector<double> out;
  out.reserve(ring.size());
  for (const json& v : ring) {
    if (!v.is_number()) fail(label + ": segmentation holds a non-numeric value");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(label + ": segmentation holds a non-finite value");
    out.push_back(d);
  }
  if (out.size() % 2 != 0) fail(label + ": segmentation has odd length " + std::to_string(out.size()));
  if (out.size() < 6) fail(label + ": segmentation needs at least 3 vertices");
  return out;
}

std::array<double, 4> ring_bbox(const std::vector<std::vector<double>>& rings) {
  double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
  for (const auto& r : rings) {
    for (std::size_t i = 0; i + 1 < r.size(); i += 2) {
      x0 = std::min(x0, r[i]);
      x1 = std::max(x1, r[i]);
      y0 = std::min(y0, r[i + 1]);
      y1 = std::max(y1, r[i + 1]);
    }
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

CocoAnnotation parse_annotation(const json& a, std::size_t index, bool require_id) {
  const std::string label = annotation_label(a, index);
  if (!a.is_object()) fail(label + ": not an object");
  CocoAnnotation out;
  if (a.contains("id")) {
    if (!a["id"].is_number_integer()) fail(label + ": id must be an integer");
    out.id = a["id"].get<std::int64_t>();
  } else if (require_id) {
    fail(label + ": missing id");
  } else {
    out.id = static_cast<std::int64_t>(index) + 1;
  }
  if (!a.contains("image_id") || !a["image_id"].is_number_integer()) fail(label + ": missing integer image_id");
  out.image_id = a["image_id"].get<std::int64_t>();
  if (!a.contains("segmentation")) fail(label + ": missing segmentation");
  const json& seg = a["segmentation"];
  if (!seg.is_array() || seg.empty()) fail(label + ": segmentation must be a non-empty array");
  if (seg.front().is_array()) {
    for (const json& ring : seg) out.segmentation.push_back(parse_ring(ring, label));
  } else {
    out.segmentation.push_back(parse_ring(seg, label));
  }
  if (a.contains("bbox")) {
    const json& b = a["bbox"];
    if (!b.is_array() || b.size() != 4) fail(label + ": bbox must have 4 numbers");
    for (std::size_t i = 0; i < 4; ++i) {
      if (!b[i].is_number()) fail(label + ": bbox must have 4 numbers");
      out.bbox[i] = b[i].get<double>();
    }
  } else {
    out.bbox = ring_bbox(out.segmentation);
  }
  if (a.contains("category_id")) {
    if (!a["category_id"].is_number_integer()) fail(label + ": category_id must be an integer");
    out.category_id = a["category_id"].get<std::int64_t>();
  }
  if (a.contains("score")) {
    if (!a["score"].is_number()) fail(label + ": score must be a number");
    out.score = a["score"].get<double>();
    if (!std::isfinite(*out.score)) fail(label + ": score must be finite");
  }
  for (const auto& [key, value] : a.items()) {
    if (key != "id" && key != "image_id" && key != "segmentation" && key != "bbox" && key != "category_id" &&
        key != "score") {
      out.extra[key] = value;
    }
  }
  return out;
}

json annotation_to_json(const CocoAnnotation& a) {
  json out = a.extra;
  out["id"] = a.id;
  out["image_id"] = a.image_id;
  out["segmentation"] = a.segmentation;
  out["bbox"] = a.bbox;
  out["category_id"] = a.category_id;
  if (a.score) out["score"] = *a.score;
  return out;
}

json parse_json(std::string_view bytes) {
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    fail(std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

const CocoImage* CocoDoc::find_image(std::int64_t id) const {
  for (const CocoImage& im : images) {
    if (im.id == id) return &im;
  }
  return nullptr;
}

CocoDoc parse_coco(std::string_view bytes) {
  const json root = parse_json(bytes);
  if (!root.is_object()) fail("top level must be an object");
  CocoDoc doc;
  if (!root.contains("images") || !root["images"].is_array()) fail("missing images array");
  std::set<std::int64_t> image_ids;
  for (const json& im : root["images"]) {
    if (!im.is_object() || !im.contains("id") || !im["id"].is_number_integer()) fail("image entry without integer id");
    CocoImage out;
    out.id = im["id"].get<std::int64_t>();
    const std::string label = "image id " + std::to_string(out.id);
    if (!im.contains("width") || !im["width"].is_number_integer() || !im.contains("height") ||
        !im["height"].is_number_integer()) {
      fail(label + ": missing integer width/height");
    }
    out.width = im["width"].get<int>();
    out.height = im["height"].get<int>();
    if (out.width <= 0 || out.height <= 0) fail(label + ": non-positive size");
    if (im.contains("file_name")) {
      if (!im["file_name"].is_string()) fail(label + ": file_name must be a string");
      out.file_name = im["file_name"].get<std::string>();
    }
    for (const auto& [key, value] : im.items()) {
      if (key != "id" && key != "width" && key != "height" && key != "file_name") out.extra[key] = value;
    }
    if (!image_ids.insert(out.id).second) fail(label + ": duplicate image id");
    doc.images.push_back(std::move(out));
  }
  if (root.contains("annotations")) {
    if (!root["annotations"].is_array()) fail("annotations must be an array");
    std::size_t index = 0;
    for (const json& a : root["annotations"]) {
      CocoAnnotation ann = parse_annotation(a, index++, true);
      if (!image_ids.count(ann.image_id)) {
        fail("annotation id " + std::to_string(ann.id) + ": image_id " + std::to_string(ann.image_id) +
             " does not resolve");
      }
      doc.annotations.push_back(std::move(ann));
    }
  }
  if (root.contains("categories")) doc.categories = root["categories"];
  for (const auto& [key, value] : root.items()) {
    if (key != "images" && key != "annotations" && key != "categories") doc.extra[key] = value;
  }
  return doc;
}

std::string serialize_coco(const CocoDoc& doc) {
  json root = doc.extra;
  json images = json::array();
  for (const CocoImage& im : doc.images) {
    json j = im.extra;
    j["id"] = im.id;
    j["width"] = im.width;
    j["height"] = im.height;
    j["file_name"] = im.file_name;
    images.push_back(std::move(j));
  }
  json annotations = json::array();
  for (const CocoAnnotation& a : doc.annotations) annotations.push_back(annotation_to_json(a));
  root["images"] = std::move(images);
  root["annotations"] = std::move(annotations);
  root["categories"] = doc.categories;
  return root.dump(1) + "\n";
}

geometry::Polygon annotation_polygon(const CocoAnnotation& a) {
  std::optional<geometry::Polygon> best;
  double best_area = 0.0;
  for (const auto& flat : a.segmentation) {
    std::vector<geometry::Vertex2> ring;
    for (std::size_t i = 0; i + 1 < flat.size(); i += 2) ring.push_back({flat[i], flat[i + 1]});
    ring = geometry::dedupe_ring(ring);
    if (!geometry::is_valid_ring(ring)) continue;
    const double area = std::abs(geometry::signed_area(ring));
    if (!best || area > best_area) {
      best = geometry::Polygon(std::move(ring));
      best_area = area;
    }
  }
  if (!best) fail("annotation id " + std::to_string(a.id) + ": no valid polygon ring");
  return *best;
}

CocoAnnotation make_annotation(std::int64_t id, std::int64_t image_id, const geometry::Polygon& p,
                               std::optional<double> score) {
  CocoAnnotation a;
  a.id = id;
  a.image_id = image_id;
  a.segmentation.push_back(p.to_flat());
  a.bbox = ring_bbox(a.segmentation);
  a.score = score;
  a.extra["area"] = std::abs(geometry::signed_area(p));
  a.extra["iscrowd"] = 0;
  return a;
}

std::vector<metrics::GtInstance> gt_instances(const CocoDoc& doc) {
  std::vector<metrics::GtInstance> out;
  out.reserve(doc.annotations.size());
  for (const CocoAnnotation& a : doc.annotations) out.push_back({a.image_id, annotation_polygon(a)});
  return out;
}

std::vector<metrics::PredInstance> parse_predictions(std::string_view bytes, std::optional<double> missing_score) {
  const json root = parse_json(bytes);
  const json* list = &root;
  if (root.is_object()) {
    if (!root.contains("annotations")) fail("prediction document has no annotations");
    list = &root["annotations"];
  }
  if (!list->is_array()) fail("predictions must be an array of annotations");
  std::vector<metrics::PredInstance> out;
  std::size_t index = 0;
  for (const json& a : *list) {
    CocoAnnotation ann = parse_annotation(a, index++, false);
    if (!ann.score) ann.score = missing_score;
    if (!ann.score) fail("annotation id " + std::to_string(ann.id) + ": prediction without score");
    out.push_back({ann.image_id, annotation_polygon(ann), *ann.score});
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace polyseq::dataio
