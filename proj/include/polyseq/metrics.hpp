#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "polyseq/geometry.hpp"

namespace polyseq::metrics {

struct GtInstance {
  std::int64_t image_id = 0;
  geometry::Polygon polygon;
};

struct PredInstance {
  std::int64_t image_id = 0;
  geometry::Polygon polygon;
  double score = 0.0;
};

struct Match {
  std::size_t pred = 0;           // index into the prediction list
  std::optional<std::size_t> gt;  // index into the ground-truth list
  double iou = 0.0;
};

/// Pairwise polygon IoU, preds x gts, restricted to same-image pairs (others
/// are 0). Images are evaluated independently and may be processed in
/// parallel; the result does not depend on the thread count.
class IouTable {
 public:
  IouTable(const std::vector<PredInstance>& preds, const std::vector<GtInstance>& gts,
           int resolution = geometry::kDefaultIouResolution, int threads = 1);

  struct Entry {
    std::size_t gt;
    double iou;
  };

  /// IoU of a pair; 0 for pairs from different images.
  double operator()(std::size_t pred, std::size_t gt) const;
  /// Same-image GT candidates of `pred`, ascending GT index.
  const std::vector<Entry>& candidates(std::size_t pred) const { return rows_[pred]; }
  std::size_t preds() const { return rows_.size(); }

 private:
  std::vector<std::vector<Entry>> rows_;
};

/// Greedy COCO matching: predictions in descending score (stable), each takes
/// the unmatched same-image GT of highest IoU if it reaches the threshold
/// (ties: lower GT index). One entry per prediction, in score order.
std::vector<Match> match_instances(const std::vector<PredInstance>& preds,
                                   const std::vector<GtInstance>& gts, double iou_threshold,
                                   const IouTable& ious);
std::vector<Match> match_instances(const std::vector<PredInstance>& preds,
                                   const std::vector<GtInstance>& gts, double iou_threshold);

struct ScoredMatch {
  double score = 0.0;
  bool true_positive = false;
};

/// 101-point interpolated AP over the score-ranked detections. 0 when there is
/// no GT but there are detections, 1 when both are empty.
double average_precision(std::vector<ScoredMatch> matches, std::size_t total_gt);

struct MetricReport {
  double ap = 0.0, ap50 = 0.0, ap75 = 0.0;
  double ar = 0.0, ar50 = 0.0, ar75 = 0.0;
  double f1 = 0.0;
  std::optional<double> n_ratio;  // unset when nothing matched
  std::optional<double> c_iou;
  std::optional<double> mta;
};

struct SuiteOptions {
  int resolution = geometry::kDefaultIouResolution;
  int max_detections = 100;      // per image
  double pairing_threshold = 0.5;  // IoU used to pair instances for polygon metrics
  int mta_samples = 128;
  int threads = 1;
};

/// AP/AR at one IoU threshold.
struct ThresholdResult {
  double ap = 0.0;
  double ar = 0.0;
};

ThresholdResult evaluate_threshold(const std::vector<PredInstance>& preds,
                                   const std::vector<GtInstance>& gts, double threshold,
                                   const IouTable& ious, int max_detections = 100);

/// AP/AR families over 0.50:0.05:0.95 and F1. Polygon fields are left unset.
/// Inputs are first put in a content-defined order, so any permutation of
/// either list gives the same report.
MetricReport coco_suite(const std::vector<PredInstance>& preds, const std::vector<GtInstance>& gts,
                        const SuiteOptions& options = {});

struct MatchedPair {
  const geometry::Polygon* pred = nullptr;
  const geometry::Polygon* gt = nullptr;
};

/// Sum of predicted vertex counts over the sum of GT vertex counts.
/// Throws std::domain_error when there are no pairs.
double n_ratio(const std::vector<MatchedPair>& pairs);

/// Mean over pairs of IoU * (1 - |V - V'| / (V + V')).
double c_iou(const std::vector<MatchedPair>& pairs, int resolution = geometry::kDefaultIouResolution);

struct ContourSamples {
  std::vector<geometry::Vertex2> points;
  std::vector<geometry::Vertex2> tangents;
};

/// `samples` arc-length-uniform points along the ring starting at vertex
/// `start`, with unit forward-difference tangents.
ContourSamples resample_contour(const geometry::Polygon& p, std::size_t start, int samples);

/// Max tangent angle error in radians between two polygons after both are
/// made counter-clockwise and resampled from their closest vertex pair.
double mta(const geometry::Polygon& pred, const geometry::Polygon& gt, int samples = 128);

/// Full report: COCO family plus N ratio, C-IoU and mean MTA over pairs
/// matched at `options.pairing_threshold`.
MetricReport evaluate(const std::vector<PredInstance>& preds, const std::vector<GtInstance>& gts,
                      const SuiteOptions& options = {});

/// Column order used by CSV output.
inline constexpr const char* kReportColumns[] = {"ap", "ap50", "ap75", "ar", "ar50",
                                                 "ar75", "f1", "n_ratio", "c_iou", "mta"};

std::string report_csv_header();
std::string report_csv_row(const MetricReport& r);

}  // namespace polyseq::metrics
