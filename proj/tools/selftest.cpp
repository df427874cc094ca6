#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <random>

#include "cli_common.hpp"
#include "polyseq/geometry.hpp"
#include "polyseq/metrics.hpp"
#include "polyseq/nn/tensor.hpp"
#include "polyseq/oracles.hpp"
#include "polyseq/polyloss.hpp"

namespace polyseq::cli {

namespace {

using geometry::Polygon;

struct RandomPair {
  polyloss::VertexTokenSeq gt;
  polyloss::PredDistSeq pred;
  std::vector<std::vector<double>> rows;
};

RandomPair random_pair(std::mt19937_64& rng) {
  const int grid = std::uniform_int_distribution<int>(4, 8)(rng);
  const int m = std::uniform_int_distribution<int>(3, 12)(rng);
  const int k = std::uniform_int_distribution<int>(1, m)(rng);
  const polyloss::GridVocab vocab{grid};
  RandomPair out;
  out.gt.vocab = vocab;
  out.gt.valid_count = k;
  std::uniform_int_distribution<int> cell(0, grid * grid - 1);
  for (int i = 0; i < m; ++i) out.gt.tokens.push_back(i < k ? cell(rng) : vocab.no_vertex());
  std::normal_distribution<double> logit(0.0, 2.0);
  std::vector<double> values;
  for (int i = 0; i < m; ++i) {
    std::vector<double> row(static_cast<std::size_t>(vocab.classes()));
    double z = 0.0;
    for (double& v : row) z += (v = std::exp(logit(rng)));
    for (double& v : row) v /= z;
    values.insert(values.end(), row.begin(), row.end());
    out.rows.push_back(std::move(row));
  }
  out.pred = polyloss::PredDistSeq(m, vocab.classes(), std::move(values));
  return out;
}

Polygon square(double x0, double y0, double x1, double y1) { return Polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}); }

using Recorder = std::vector<Check>;

void record(Recorder& out, std::string name, double value, double tolerance, bool ok,
            std::optional<std::size_t> skipped = std::nullopt) {
  out.push_back({std::move(name), value, tolerance, ok, skipped});
}

}  // namespace

std::vector<Check> loss_oracle_checks(std::uint64_t seed) {
  Recorder checks;
  {
    std::mt19937_64 rng(seed);
    double worst = 0.0, worst_ex = 0.0, bound_violation = 0.0;
    for (int i = 0; i < 500; ++i) {
      const RandomPair p = random_pair(rng);
      const double fast = polyloss::bidirectional_loss(p.gt, p.pred).loss;
      const double naive = oracles::naive_bidirectional_loss(p.gt.tokens, p.gt.valid_count, p.rows, p.gt.vocab.grid);
      worst = std::max(worst, std::abs(fast - naive));
      const double ex = polyloss::exhaustive_alignment_loss(p.gt, p.pred);
      worst_ex = std::max(worst_ex, std::abs(ex - oracles::naive_exhaustive_loss(p.gt.tokens, p.gt.valid_count, p.rows)));
      bound_violation = std::max(bound_violation, ex - fast);
    }
    record(checks, "loss:bidirectional_vs_naive", worst, 1e-12, worst <= 1e-12);
    record(checks, "loss:exhaustive_vs_enumeration", worst_ex, 1e-12, worst_ex <= 1e-12);
    record(checks, "loss:exhaustive_not_above_bidirectional", bound_violation, 0.0, bound_violation <= 0.0);
  }
  return checks;
}

std::vector<Check> orientation_checks(std::uint64_t seed) {
  Recorder checks;
  {
    std::mt19937_64 rng(seed + 11);
    double worst = 0.0;
    const int grid = 6, m = 12;
    const polyloss::GridVocab vocab{grid};
    for (int k = 1; k <= 10; ++k) {
      std::vector<int> cells(static_cast<std::size_t>(grid * grid));
      for (int i = 0; i < grid * grid; ++i) cells[static_cast<std::size_t>(i)] = i;
      std::shuffle(cells.begin(), cells.end(), rng);
      polyloss::VertexTokenSeq gt{vocab, {}, k};
      for (int i = 0; i < m; ++i) gt.tokens.push_back(i < k ? cells[static_cast<std::size_t>(i)] : vocab.no_vertex());
      for (int r = 0; r < k; ++r) {
        for (int reflect = 0; reflect < 2; ++reflect) {
          polyloss::PredDistSeq pred(m, vocab.classes());
          for (int i = 0; i < m; ++i) {
            int src = i;
            if (i < k) src = reflect ? (r - i + k) % k : (i + r) % k;
            pred.row(i)[static_cast<std::size_t>(gt.tokens[static_cast<std::size_t>(src)])] = 1.0;
          }
          worst = std::max(worst, polyloss::bidirectional_loss(gt, pred).loss);
        }
      }
    }
    record(checks, "loss:orientation_invariance", worst, 1e-6, worst < 1e-6);
  }
  return checks;
}

std::vector<Check> gradient_checks(std::uint64_t seed, const std::string& corrupt_op) {
  Recorder checks;
  nn::debug::set_grad_fault(corrupt_op, corrupt_op.empty() ? 1.0 : 2.0);
  {
    std::map<std::string, nn::GradCheckResult> by_op;
    for (const auto& c : oracles::op_gradient_checks(seed)) {
      auto& slot = by_op[c.name];
      slot.max_rel_error = std::max(slot.max_rel_error, c.result.max_rel_error);
      slot.skipped += c.result.skipped;
      slot.checked += c.result.checked;
    }
    for (const auto& [name, r] : by_op) {
      record(checks, "grad:" + name, r.max_rel_error, 1e-5, r.max_rel_error < 1e-5 && r.skipped == 0, r.skipped);
    }
    const nn::GradCheckResult full = oracles::full_model_gradient_check(seed);
    const bool few_skips = full.skipped * 10 < full.checked + full.skipped;
    record(checks, "grad:full_model", full.max_rel_error, 1e-5, full.max_rel_error < 1e-5 && few_skips, full.skipped);
  }
  nn::debug::set_grad_fault("", 1.0);
  return checks;
}

std::vector<Check> metric_checks(std::uint64_t seed) {
  Recorder checks;
  {
    const double iou = geometry::polygon_iou(square(0, 0, 1, 1), square(0.5, 0, 1.5, 1), 256);
    record(checks, "metric:half_overlap_iou", std::abs(iou - 1.0 / 3.0), 0.02, std::abs(iou - 1.0 / 3.0) <= 0.02);

    const Polygon gt = square(0, 0, 10, 10);
    const Polygon split({{0, 0}, {5, 0}, {10, 0}, {10, 5}, {10, 10}, {5, 10}, {0, 10}, {0, 5}});
    const double ciou = metrics::c_iou({{&split, &gt}});
    record(checks, "metric:c_iou_split_edges", std::abs(ciou - 2.0 / 3.0), 1e-12, std::abs(ciou - 2.0 / 3.0) <= 1e-12);

    const double h = 5.0 * std::numbers::sqrt2;
    const Polygon diamond({{5, 5 - h}, {5 + h, 5}, {5, 5 + h}, {5 - h, 5}});
    const double angle = metrics::mta(diamond, gt, 256);
    record(checks, "metric:mta_rotated_square", std::abs(angle - std::numbers::pi / 4), 0.02,
           std::abs(angle - std::numbers::pi / 4) <= 0.02);

    const double ap = metrics::average_precision({{0.9, true}, {0.4, false}}, 1);
    record(checks, "metric:ap_tp_then_fp", std::abs(ap - 1.0), 0.0, ap == 1.0);

    const metrics::MetricReport r =
        metrics::coco_suite({{1, square(0, 0, 10, 6.2), 0.9}}, {{1, square(0, 0, 10, 10)}});
    record(checks, "metric:ap_three_thresholds", std::abs(r.ap - 0.3), 1e-12, std::abs(r.ap - 0.3) <= 1e-12);
  }

  {
    std::mt19937_64 rng(seed + 23);
    std::uniform_real_distribution<double> pos(0.0, 6.0), size(2.0, 5.0), score(0.0, 1.0);
    std::uniform_int_distribution<int> count(0, 6), image(1, 2);
    int mismatches = 0;
    for (int scene = 0; scene < 200; ++scene) {
      std::vector<metrics::PredInstance> preds;
      std::vector<metrics::GtInstance> gts;
      const int total = count(rng);
      for (int i = 0; i < total; ++i) {
        const double x = pos(rng), y = pos(rng), s = size(rng);
        if (i % 2 == 0) {
          gts.push_back({image(rng), square(x, y, x + s, y + s)});
        } else {
          preds.push_back({image(rng), square(x, y, x + s, y + s), std::round(score(rng) * 4) / 4});
        }
      }
      const auto fast = metrics::match_instances(preds, gts, 0.5);
      const auto brute = oracles::brute_force_matching(preds, gts, 0.5, geometry::kDefaultIouResolution);
      for (const metrics::Match& m : fast) {
        if (m.gt != brute[m.pred]) ++mismatches;
      }
    }
    record(checks, "metric:matching_vs_bruteforce", mismatches, 0.0, mismatches == 0);
  }
  return checks;
}

nlohmann::json run_selftest(const SelftestOptions& opt, bool& passed) {
  std::vector<Check> checks;
  for (auto group : {loss_oracle_checks(opt.seed), orientation_checks(opt.seed),
                     gradient_checks(opt.seed, opt.corrupt_op), metric_checks(opt.seed)}) {
    checks.insert(checks.end(), group.begin(), group.end());
  }
  passed = true;
  nlohmann::json list = nlohmann::json::array();
  for (const Check& c : checks) {
    passed = passed && c.passed;
    nlohmann::json entry{{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"tolerance", c.tolerance}};
    if (c.skipped) entry["skipped_kinks"] = *c.skipped;
    list.push_back(std::move(entry));
  }
  nlohmann::json report{{"checks", list}, {"passed", passed}, {"meta", make_meta(opt.seed)}};
  if (!opt.corrupt_op.empty()) report["meta"]["corrupt_grad"] = opt.corrupt_op;
  return report;
}

}  // namespace polyseq::cli
