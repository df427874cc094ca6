#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "polyseq/metrics.hpp"

namespace polyseq::metrics {

using geometry::Polygon;
using geometry::Vertex2;

double n_ratio(const std::vector<MatchedPair>& pairs) {
  if (pairs.empty()) throw std::domain_error("n_ratio is undefined without matched pairs");
  double pred_vertices = 0.0, gt_vertices = 0.0;
  for (const MatchedPair& p : pairs) {
    pred_vertices += static_cast<double>(p.pred->size());
    gt_vertices += static_cast<double>(p.gt->size());
  }
  return pred_vertices / gt_vertices;
}

double c_iou(const std::vector<MatchedPair>& pairs, int resolution) {
  if (pairs.empty()) throw std::domain_error("c_iou is undefined without matched pairs");
  double acc = 0.0;
  for (const MatchedPair& p : pairs) {
    const double vp = static_cast<double>(p.pred->size());
    const double vg = static_cast<double>(p.gt->size());
    const double rd = std::abs(vg - vp) / (vg + vp);
    acc += geometry::polygon_iou(*p.pred, *p.gt, resolution) * (1.0 - rd);
  }
  return acc / static_cast<double>(pairs.size());
}

ContourSamples resample_contour(const Polygon& p, std::size_t start, int samples) {
  if (samples < 2) throw std::invalid_argument("resample_contour: need at least 2 samples");
  const auto& v = p.vertices();
  const std::size_t n = v.size();
  std::vector<double> lengths(n);
  double perimeter = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vertex2 a = v[(start + i) % n];
    const Vertex2 b = v[(start + i + 1) % n];
    lengths[i] = std::hypot(b.x - a.x, b.y - a.y);
    perimeter += lengths[i];
  }
  if (!(perimeter > 0.0)) throw std::invalid_argument("resample_contour: zero-length boundary");

  ContourSamples out;
  out.points.reserve(static_cast<std::size_t>(samples));
  std::size_t edge = 0;
  double edge_start = 0.0;
  for (int k = 0; k < samples; ++k) {
    const double s = perimeter * k / samples;
    while (edge + 1 < n && s >= edge_start + lengths[edge]) {
      edge_start += lengths[edge];
      ++edge;
    }
    const Vertex2 a = v[(start + edge) % n];
    const Vertex2 b = v[(start + edge + 1) % n];
    const double t = lengths[edge] > 0.0 ? std::clamp((s - edge_start) / lengths[edge], 0.0, 1.0) : 0.0;
    out.points.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
  }
  out.tangents.reserve(out.points.size());
  for (std::size_t k = 0; k < out.points.size(); ++k) {
    const Vertex2 a = out.points[k];
    const Vertex2 b = out.points[(k + 1) % out.points.size()];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (!(len > 0.0)) throw std::invalid_argument("resample_contour: coincident samples");
    out.tangents.push_back({(b.x - a.x) / len, (b.y - a.y) / len});
  }
  return out;
}

double mta(const Polygon& pred_in, const Polygon& gt_in, int samples) {
  if (samples < 8) throw std::invalid_argument("mta: samples must be >= 8");
  const Polygon pred = geometry::normalize_orientation(pred_in, true);
  const Polygon gt = geometry::normalize_orientation(gt_in, true);

  std::size_t pi = 0, gi = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double d = std::hypot(pred[i].x - gt[j].x, pred[i].y - gt[j].y);
      if (d < best) {
        best = d;
        pi = i;
        gi = j;
      }
    }
  }

  const ContourSamples a = resample_contour(pred, pi, samples);
  const ContourSamples b = resample_contour(gt, gi, samples);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.tangents.size(); ++k) {
    const double dot = a.tangents[k].x * b.tangents[k].x + a.tangents[k].y * b.tangents[k].y;
    const double cross = a.tangents[k].x * b.tangents[k].y - a.tangents[k].y * b.tangents[k].x;
    // same angle as acos(dot) but well conditioned near 0 and pi
    worst = std::max(worst, std::atan2(std::abs(cross), dot));
  }
  return std::min(worst, std::numbers::pi);
}

std::string report_csv_header() {
  std::string out;
  for (const char* c : kReportColumns) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out;
}

std::string report_csv_row(const MetricReport& r) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  std::ostringstream os;
  os << num(r.ap) << ',' << num(r.ap50) << ',' << num(r.ap75) << ',' << num(r.ar) << ','
     << num(r.ar50) << ',' << num(r.ar75) << ',' << num(r.f1) << ',' << opt(r.n_ratio) << ','
     << opt(r.c_iou) << ',' << opt(r.mta);
  return os.str();
}

}  // namespace polyseq::metrics
