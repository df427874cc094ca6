#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "polyseq/dataio.hpp"

namespace polyseq::dataio {

namespace {

using geometry::Polygon;
using geometry::Vertex2;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class Family { kAxisRect, kRotatedRect, kLShape };

Polygon axis_rect(std::mt19937_64& rng, const SynthSpec& s) {
  std::uniform_int_distribution<int> size(s.min_size, s.max_size);
  const double w = size(rng), h = size(rng);
  return Polygon({{0, 0}, {w, 0}, {w, h}, {0, h}});
}

Polygon rotated_rect(std::mt19937_64& rng, const SynthSpec& s) {
  std::uniform_int_distribution<int> size(s.min_size, std::max(s.min_size, s.max_size * 4 / 5));
  std::uniform_real_distribution<double> angle(15.0, 75.0);
  const double w = size(rng), h = size(rng);
  const double a = angle(rng) * std::numbers::pi / 180.0;
  const double c = std::cos(a), sn = std::sin(a);
  std::vector<Vertex2> v;
  for (const auto& [x, y] : {std::pair{-w / 2, -h / 2}, {w / 2, -h / 2}, {w / 2, h / 2}, {-w / 2, h / 2}}) {
    v.push_back({x * c - y * sn, x * sn + y * c});
  }
  const geometry::BBox box = geometry::bounding_box(v);
  for (Vertex2& p : v) {
    p.x -= box.x0();
    p.y -= box.y0();
  }
  return Polygon(std::move(v));
}

Polygon l_shape(std::mt19937_64& rng, const SynthSpec& s) {
  std::uniform_int_distribution<int> size(std::max(s.min_size, 14), std::max(s.max_size, 14));
  const int w = size(rng), h = size(rng);
  std::uniform_int_distribution<int> cut_w(w * 2 / 5, w * 3 / 5);
  std::uniform_int_distribution<int> cut_h(h * 2 / 5, h * 3 / 5);
  const double cw = cut_w(rng), ch = cut_h(rng);
  const double W = w, H = h;
  // The notch sits in one of the four corners.
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0:
      return Polygon({{0, 0}, {W - cw, 0}, {W - cw, ch}, {W, ch}, {W, H}, {0, H}});
    case 1:
      return Polygon({{0, 0}, {W, 0}, {W, H - ch}, {W - cw, H - ch}, {W - cw, H}, {0, H}});
    case 2:
      return Polygon({{0, 0}, {W, 0}, {W, H}, {cw, H}, {cw, H - ch}, {0, H - ch}});
    default:
      return Polygon({{cw, 0}, {W, 0}, {W, H}, {0, H}, {0, ch}, {cw, ch}});
  }
}

bool boxes_clear(const geometry::BBox& a, const geometry::BBox& b, double gap) {
  return a.x1() + gap <= b.x0() || b.x1() + gap <= a.x0() || a.y1() + gap <= b.y0() || b.y1() + gap <= a.y0();
}

struct ImageResult {
  std::vector<Polygon> polygons;
  GrayImage image;
};

ImageResult generate_image(const SynthSpec& s, std::size_t index) {
  std::mt19937_64 rng(splitmix64(s.seed ^ splitmix64(index + 1)));
  std::vector<Family> families;
  if (s.axis_rect) families.push_back(Family::kAxisRect);
  if (s.rotated_rect) families.push_back(Family::kRotatedRect);
  if (s.l_shape) families.push_back(Family::kLShape);

  const int count = std::uniform_int_distribution<int>(s.min_count, s.max_count)(rng);
  ImageResult out;
  std::vector<geometry::BBox> boxes;
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < s.max_retries && !placed; ++attempt) {
      const Family f = families[std::uniform_int_distribution<std::size_t>(0, families.size() - 1)(rng)];
      Polygon shape = f == Family::kAxisRect      ? axis_rect(rng, s)
                      : f == Family::kRotatedRect ? rotated_rect(rng, s)
                                                  : l_shape(rng, s);
      const geometry::BBox box = geometry::bounding_box(shape.vertices());
      const double max_x = s.width - 1 - box.w, max_y = s.height - 1 - box.h;
      if (max_x < 1 || max_y < 1) continue;
      const double ox = std::uniform_int_distribution<int>(1, static_cast<int>(max_x))(rng);
      const double oy = std::uniform_int_distribution<int>(1, static_cast<int>(max_y))(rng);
      Polygon placed_shape = shape.translated(ox, oy);
      const geometry::BBox placed_box = geometry::bounding_box(placed_shape.vertices());
      if (!std::all_of(boxes.begin(), boxes.end(),
                       [&](const geometry::BBox& b) { return boxes_clear(b, placed_box, s.gap); })) {
        continue;
      }
      boxes.push_back(placed_box);
      out.polygons.push_back(geometry::normalize_orientation(placed_shape, true));
      placed = true;
    }
    if (!placed) {
      if (k < s.min_count) {
        throw std::runtime_error("gen_synthetic: could not place " + std::to_string(s.min_count) +
                                 " shapes in image " + std::to_string(index) + " after " +
                                 std::to_string(s.max_retries) + " attempts");
      }
      break;
    }
  }

  out.image.width = s.width;
  out.image.height = s.height;
  out.image.pixels.resize(static_cast<std::size_t>(s.width * s.height));
  std::uniform_int_distribution<int> noise(0, 24);
  std::vector<std::uint8_t> inside(out.image.pixels.size(), 0);
  for (const Polygon& p : out.polygons) {
    const geometry::RasterMask m = geometry::rasterize(p, s.width, s.height);
    for (std::size_t i = 0; i < inside.size(); ++i) inside[i] |= m.bits()[i];
  }
  for (std::size_t i = 0; i < inside.size(); ++i) {
    out.image.pixels[i] = static_cast<std::uint8_t>((inside[i] ? 170 : 40) + noise(rng));
  }
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  if (width < 16 || height < 16) throw std::invalid_argument("synthetic images must be at least 16x16");
  if (images < 1) throw std::invalid_argument("synthetic corpus needs at least one image");
  if (min_count < 1 || max_count < min_count) throw std::invalid_argument("bad shape count range");
  if (!axis_rect && !rotated_rect && !l_shape) throw std::invalid_argument("no shape family enabled");
  if (min_size < 4 || max_size < min_size) throw std::invalid_argument("bad shape size range");
  if (gap < 0 || max_retries < 1) throw std::invalid_argument("bad packing parameters");
}

SynthCorpus gen_synthetic(const SynthSpec& spec, int threads) {
  spec.validate();
  std::vector<ImageResult> results(static_cast<std::size_t>(spec.images));
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
  for (int i = 0; i < spec.images; ++i) {
    try {
      results[static_cast<std::size_t>(i)] = generate_image(spec, static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  SynthCorpus corpus;
  corpus.doc.categories = nlohmann::json::array({{{"id", 1}, {"name", "building"}}});
  std::int64_t next_ann = 1;
  for (std::size_t i = 0; i < results.size(); ++i) {
    CocoImage im;
    im.id = static_cast<std::int64_t>(i) + 1;
    im.width = spec.width;
    im.height = spec.height;
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.pgm", i);
    im.file_name = name;
    corpus.doc.images.push_back(im);
    for (const Polygon& p : results[i].polygons) {
      corpus.doc.annotations.push_back(make_annotation(next_ann++, im.id, p));
    }
    corpus.images.push_back(std::move(results[i].image));
  }
  return corpus;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t += c;
      }
    }
    return t;
  };
  if (token() != "P5") throw std::invalid_argument(path.string() + ": not a binary PGM (P5)");
  GrayImage img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw std::invalid_argument("only 8-bit PGM is supported");
  } catch (const std::logic_error&) {
    throw std::invalid_argument(path.string() + ": malformed PGM header");
  }
  if (img.width <= 0 || img.height <= 0) throw std::invalid_argument(path.string() + ": bad PGM size");
  img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::invalid_argument(path.string() + ": truncated PGM data");
  return img;
}

}  // namespace polyseq::dataio
