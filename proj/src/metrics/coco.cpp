#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "polyseq/metrics.hpp"

namespace polyseq::metrics {

namespace {

struct ImageGroup {
  std::vector<std::size_t> preds;
  std::vector<std::size_t> gts;
};

std::map<std::int64_t, ImageGroup> group_by_image(const std::vector<PredInstance>& preds,
                                                   const std::vector<GtInstance>& gts) {
  std::map<std::int64_t, ImageGroup> groups;
  for (std::size_t i = 0; i < preds.size(); ++i) groups[preds[i].image_id].preds.push_back(i);
  for (std::size_t j = 0; j < gts.size(); ++j) groups[gts[j].image_id].gts.push_back(j);
  return groups;
}

// Descending score, stable on input position.
std::vector<std::size_t> score_order(const std::vector<PredInstance>& preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  return order;
}

// Keeps the `max_det` best-scored detections of every image.
std::vector<bool> top_per_image(const std::vector<PredInstance>& preds, int max_det) {
  std::vector<bool> keep(preds.size(), false);
  std::map<std::int64_t, int> taken;
  for (std::size_t i : score_order(preds)) {
    int& n = taken[preds[i].image_id];
    if (n < max_det) {
      keep[i] = true;
      ++n;
    }
  }
  return keep;
}

std::vector<Match> greedy_match(const std::vector<PredInstance>& preds,
                                const std::vector<GtInstance>& gts, double threshold,
                                const IouTable& ious, const std::vector<bool>* keep) {
  std::vector<bool> gt_used(gts.size(), false);
  std::vector<Match> out;
  out.reserve(preds.size());
  for (std::size_t p : score_order(preds)) {
    if (keep != nullptr && !(*keep)[p]) continue;
    Match m;
    m.pred = p;
    double best = -1.0;
    for (const IouTable::Entry& e : ious.candidates(p)) {
      if (gt_used[e.gt]) continue;
      if (e.iou >= threshold && e.iou > best) {
        best = e.iou;
        m.gt = e.gt;
      }
    }
    if (m.gt) {
      gt_used[*m.gt] = true;
      m.iou = best;
    }
    out.push_back(m);
  }
  return out;
}

}  // namespace

IouTable::IouTable(const std::vector<PredInstance>& preds, const std::vector<GtInstance>& gts,
                   int resolution, int threads)
    : rows_(preds.size()) {
  const auto groups = group_by_image(preds, gts);
  std::vector<const ImageGroup*> work;
  for (const auto& [id, g] : groups) {
    if (!g.preds.empty() && !g.gts.empty()) work.push_back(&g);
  }
  const long n = static_cast<long>(work.size());
  // Every image writes a disjoint set of cells, so the table is identical
  // for any thread count.
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, threads)) if (threads > 1)
  for (long w = 0; w < n; ++w) {
    const ImageGroup& g = *work[static_cast<std::size_t>(w)];
    for (std::size_t p : g.preds) {
      auto& row = rows_[p];
      row.reserve(g.gts.size());
      for (std::size_t q : g.gts) {
        row.push_back({q, geometry::polygon_iou(preds[p].polygon, gts[q].polygon, resolution)});
      }
    }
  }
}

double IouTable::operator()(std::size_t pred, std::size_t gt) const {
  const auto& row = rows_[pred];
  const auto it = std::lower_bound(row.begin(), row.end(), gt,
                                   [](const Entry& e, std::size_t g) { return e.gt < g; });
  return (it != row.end() && it->gt == gt) ? it->iou : 0.0;
}

std::vector<Match> match_instances(const std::vector<PredInstance>& preds,
                                   const std::vector<GtInstance>& gts, double iou_threshold,
                                   const IouTable& ious) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw std::invalid_argument("match_instances: threshold must lie in (0, 1)");
  }
  return greedy_match(preds, gts, iou_threshold, ious, nullptr);
}

std::vector<Match> match_instances(const std::vector<PredInstance>& preds,
                                   const std::vector<GtInstance>& gts, double iou_threshold) {
  return match_instances(preds, gts, iou_threshold, IouTable(preds, gts));
}

double average_precision(std::vector<ScoredMatch> matches, std::size_t total_gt) {
  if (total_gt == 0) return matches.empty() ? 1.0 : 0.0;
  if (matches.empty()) return 0.0;
  std::stable_sort(matches.begin(), matches.end(),
                   [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });
  const std::size_t n = matches.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (matches[i].true_positive) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double acc = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) acc += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return acc / 101.0;
}

ThresholdResult evaluate_threshold(const std::vector<PredInstance>& preds,
                                   const std::vector<GtInstance>& gts, double threshold,
                                   const IouTable& ious, int max_detections) {
  const std::vector<bool> keep = top_per_image(preds, max_detections);
  const std::vector<Match> matches = greedy_match(preds, gts, threshold, ious, &keep);
  std::vector<ScoredMatch> scored;
  scored.reserve(matches.size());
  std::size_t matched = 0;
  for (const Match& m : matches) {
    scored.push_back({preds[m.pred].score, m.gt.has_value()});
    if (m.gt) ++matched;
  }
  ThresholdResult r;
  r.ap = average_precision(std::move(scored), gts.size());
  if (gts.empty()) {
    r.ar = matches.empty() ? 1.0 : 0.0;
  } else {
    r.ar = static_cast<double>(matched) / static_cast<double>(gts.size());
  }
  return r;
}

namespace {

MetricReport coco_from_table(const std::vector<PredInstance>& preds,
                             const std::vector<GtInstance>& gts, const IouTable& ious,
                             const SuiteOptions& options) {
  MetricReport r;
  double ap_sum = 0.0, ar_sum = 0.0;
  for (int k = 0; k < 10; ++k) {
    const double thr = 0.5 + 0.05 * k;
    const ThresholdResult t = evaluate_threshold(preds, gts, thr, ious, options.max_detections);
    ap_sum += t.ap;
    ar_sum += t.ar;
    if (k == 0) {
      r.ap50 = t.ap;
      r.ar50 = t.ar;
    } else if (k == 5) {
      r.ap75 = t.ap;
      r.ar75 = t.ar;
    }
  }
  r.ap = ap_sum / 10.0;
  r.ar = ar_sum / 10.0;
  r.f1 = (r.ap + r.ar) > 0.0 ? 2.0 * r.ap * r.ar / (r.ap + r.ar) : 0.0;
  return r;
}

// Suite results must not depend on input order, so equal-score predictions
// and equal-IoU candidates are ranked by content instead of position.
std::vector<PredInstance> canonical(std::vector<PredInstance> preds) {
  std::stable_sort(preds.begin(), preds.end(), [](const PredInstance& a, const PredInstance& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.polygon.to_flat() < b.polygon.to_flat();
  });
  return preds;
}

std::vector<GtInstance> canonical(std::vector<GtInstance> gts) {
  std::stable_sort(gts.begin(), gts.end(), [](const GtInstance& a, const GtInstance& b) {
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.polygon.to_flat() < b.polygon.to_flat();
  });
  return gts;
}

}  // namespace

MetricReport coco_suite(const std::vector<PredInstance>& pred_input, const std::vector<GtInstance>& gt_input,
                        const SuiteOptions& options) {
  const std::vector<PredInstance> preds = canonical(pred_input);
  const std::vector<GtInstance> gts = canonical(gt_input);
  const IouTable ious(preds, gts, options.resolution, options.threads);
  return coco_from_table(preds, gts, ious, options);
}

MetricReport evaluate(const std::vector<PredInstance>& pred_input, const std::vector<GtInstance>& gt_input,
                      const SuiteOptions& options) {
  const std::vector<PredInstance> preds = canonical(pred_input);
  const std::vector<GtInstance> gts = canonical(gt_input);
  const IouTable ious(preds, gts, options.resolution, options.threads);
  MetricReport r = coco_from_table(preds, gts, ious, options);

  const std::vector<bool> keep = top_per_image(preds, options.max_detections);
  const std::vector<Match> matches =
      greedy_match(preds, gts, options.pairing_threshold, ious, &keep);
  std::vector<MatchedPair> pairs;
  for (const Match& m : matches) {
    if (m.gt) pairs.push_back({&preds[m.pred].polygon, &gts[*m.gt].polygon});
  }
  if (pairs.empty()) return r;

  r.n_ratio = n_ratio(pairs);
  r.c_iou = c_iou(pairs, options.resolution);
  std::vector<double> angles(pairs.size(), 0.0);
  const long n = static_cast<long>(pairs.size());
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, options.threads)) if (options.threads > 1)
  for (long i = 0; i < n; ++i) {
    const auto& pr = pairs[static_cast<std::size_t>(i)];
    angles[static_cast<std::size_t>(i)] = mta(*pr.pred, *pr.gt, options.mta_samples);
  }
  double acc = 0.0;
  for (double a : angles) acc += a;
  r.mta = acc / static_cast<double>(angles.size());
  return r;
}

}  // namespace polyseq::metrics
