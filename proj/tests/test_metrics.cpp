#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "polyseq/metrics.hpp"
#include "polyseq/oracles.hpp"
#include "polyseq/report_json.hpp"

using namespace polyseq;
using namespace polyseq::metrics;
using geometry::Polygon;

namespace {

Polygon square(double x0, double y0, double x1, double y1) { return Polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}); }

Polygon split_square(double s) {
  const double h = s / 2;
  return Polygon({{0, 0}, {h, 0}, {s, 0}, {s, h}, {s, s}, {h, s}, {0, s}, {0, h}});
}

struct Scene {
  std::vector<PredInstance> preds;
  std::vector<GtInstance> gts;
};

Scene random_scene(std::mt19937_64& rng, int max_items) {
  std::uniform_real_distribution<double> pos(0, 30), size(4, 14);
  Scene s;
  const int images = 3;
  const int gts = static_cast<int>(rng() % static_cast<unsigned>(max_items));
  for (int i = 0; i < gts; ++i) {
    const double x = pos(rng), y = pos(rng), w = size(rng);
    s.gts.push_back({1 + static_cast<int>(rng() % images), square(x, y, x + w, y + w)});
  }
  const int preds = static_cast<int>(rng() % static_cast<unsigned>(max_items));
  for (int i = 0; i < preds; ++i) {
    if (!s.gts.empty() && rng() % 3 != 0) {
      const GtInstance& g = s.gts[rng() % s.gts.size()];
      const double dx = (static_cast<double>(rng() % 100) / 100 - 0.5) * 4;
      s.preds.push_back({g.image_id, g.polygon.translated(dx, -dx / 2), static_cast<double>(rng() % 5) / 4});
    } else {
      const double x = pos(rng), y = pos(rng), w = size(rng);
      s.preds.push_back({1 + static_cast<int>(rng() % images), square(x, y, x + w, y + w),
                         static_cast<double>(rng() % 5) / 4});
    }
  }
  return s;
}

}  // namespace

TEST_CASE("matching") {
  const std::vector<GtInstance> one_gt{{1, square(0, 0, 10, 10)}};
  const auto m = match_instances({{1, square(0, 0, 10, 10), 0.9}}, one_gt, 0.5);
  REQUIRE(m.size() == 1);
  CHECK(m[0].gt == std::optional<std::size_t>(0));
  CHECK(m[0].iou == 1.0);

  const auto two = match_instances({{1, square(0, 0, 10, 10), 0.3}, {1, square(0, 0, 10, 10), 0.8}}, one_gt, 0.5);
  CHECK(two[0].pred == 1);
  CHECK(two[0].gt == std::optional<std::size_t>(0));
  CHECK_FALSE(two[1].gt.has_value());

  const auto other_image = match_instances({{2, square(0, 0, 10, 10), 0.9}}, one_gt, 0.5);
  CHECK_FALSE(other_image[0].gt.has_value());

  SUBCASE("agrees with exhaustive assignment") {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 100; ++t) {
      Scene s = random_scene(rng, 6);
      for (double thr : {0.5, 0.75}) {
        const auto fast = match_instances(s.preds, s.gts, thr);
        const auto brute = oracles::brute_force_matching(s.preds, s.gts, thr, geometry::kDefaultIouResolution);
        for (const Match& mm : fast) CHECK(mm.gt == brute[mm.pred]);
      }
    }
  }
}

TEST_CASE("average precision") {
  CHECK(average_precision({{0.9, true}}, 1) == 1.0);
  CHECK(average_precision({{0.9, true}, {0.4, false}}, 1) == 1.0);
  CHECK(average_precision({{0.9, false}}, 1) == 0.0);
  CHECK(average_precision({}, 0) == 1.0);
  CHECK(average_precision({{0.9, false}}, 0) == 0.0);
  // FP above TP: precision 1/2 at recall 1
  CHECK(average_precision({{0.9, false}, {0.5, true}}, 1) == doctest::Approx(0.5).epsilon(1e-15));

  SUBCASE("agrees with a direct 101-point definition") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 200; ++t) {
      std::vector<ScoredMatch> dets;
      std::vector<std::pair<double, bool>> plain;
      const int n = static_cast<int>(rng() % 12);
      std::size_t tps = 0;
      for (int i = 0; i < n; ++i) {
        const double s = static_cast<double>(rng() % 1000) / 1000;
        const bool tp = rng() % 2;
        tps += tp;
        dets.push_back({s, tp});
        plain.emplace_back(s, tp);
      }
      const std::size_t total = tps + rng() % 3;
      CHECK(average_precision(dets, total) == doctest::Approx(oracles::naive_average_precision(plain, total)).epsilon(1e-12));
    }
  }
}

TEST_CASE("coco suite") {
  const std::vector<GtInstance> gts{{1, square(0, 0, 10, 10)}, {2, square(5, 5, 20, 12)}};
  std::vector<PredInstance> perfect;
  for (const auto& g : gts) perfect.push_back({g.image_id, g.polygon, 1.0});
  const MetricReport r = coco_suite(perfect, gts);
  for (double v : {r.ap, r.ap50, r.ap75, r.ar, r.ar50, r.ar75, r.f1}) CHECK(v == 1.0);

  const MetricReport e = coco_suite({}, gts);
  for (double v : {e.ap, e.ap50, e.ap75, e.ar, e.ar50, e.ar75, e.f1}) CHECK(v == 0.0);

  // pred covers 62% of its GT: counted at 0.50, 0.55, 0.60 only
  const MetricReport part = coco_suite({{1, square(0, 0, 10, 6.2), 0.9}}, {{1, square(0, 0, 10, 10)}});
  CHECK(part.ap == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(part.ar == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(part.ap50 == 1.0);
  CHECK(part.ap75 == 0.0);
  CHECK(part.f1 == doctest::Approx(0.3).epsilon(1e-12));

  SUBCASE("permutation invariance and monotone thresholds") {
    std::mt19937_64 rng(91);
    for (int t = 0; t < 20; ++t) {
      Scene s = random_scene(rng, 8);
      const MetricReport a = coco_suite(s.preds, s.gts);
      std::shuffle(s.preds.begin(), s.preds.end(), rng);
      std::shuffle(s.gts.begin(), s.gts.end(), rng);
      const MetricReport b = coco_suite(s.preds, s.gts);
      CHECK(a.ap == b.ap);
      CHECK(a.ar == b.ar);
      CHECK(a.ap <= a.ap50);
      CHECK(a.ar <= a.ar50);
      CHECK(a.ap75 <= a.ap50);
      const IouTable table(s.preds, s.gts);
      double prev_ap = 2.0, prev_ar = 2.0;
      for (int k = 0; k < 10; ++k) {
        const ThresholdResult tr = evaluate_threshold(s.preds, s.gts, 0.5 + 0.05 * k, table);
        CHECK(tr.ap <= prev_ap);
        CHECK(tr.ar <= prev_ar);
        prev_ap = tr.ap;
        prev_ar = tr.ar;
      }
    }
  }

  SUBCASE("thread count does not change the report") {
    std::mt19937_64 rng(14);
    Scene s = random_scene(rng, 12);
    SuiteOptions one, four;
    four.threads = 4;
    const MetricReport a = evaluate(s.preds, s.gts, one), b = evaluate(s.preds, s.gts, four);
    CHECK(report_to_json(a) == report_to_json(b));
  }
}

TEST_CASE("n ratio") {
  const Polygon sq = square(0, 0, 10, 10), split = split_square(10);
  CHECK(n_ratio({{&sq, &sq}}) == 1.0);
  CHECK(n_ratio({{&split, &sq}, {&split, &sq}}) == 2.0);
  CHECK_THROWS_AS(n_ratio({}), std::domain_error);

  // reference values: 1.13 for a method with redundant vertices, 0.93 for one with too few
  const Polygon many({{0, 0}, {2, 0}, {4, 0}, {6, 0}, {8, 0}, {10, 0}, {10, 5}, {10, 10}, {5, 10}, {0, 10}});
  const Polygon tri({{0, 0}, {10, 0}, {0, 10}});
  const Polygon five({{0, 0}, {10, 0}, {10, 10}, {5, 12}, {0, 10}});
  std::vector<MatchedPair> over, under;
  // 25 square GTs (100 vertices) against 113 and 93 predicted vertices
  for (int i = 0; i < 25; ++i) over.push_back({i < 2 ? &many : i == 2 ? &five : &sq, &sq});
  CHECK(n_ratio(over) == doctest::Approx(1.13).epsilon(1e-12));
  CHECK(n_ratio(over) > 1.0);
  // 93 predicted vs 100 GT vertices
  for (int i = 0; i < 25; ++i) under.push_back({i < 7 ? &tri : &sq, &sq});
  CHECK(n_ratio(under) == doctest::Approx(0.93).epsilon(1e-12));
  CHECK(n_ratio(under) < 1.0);
}

TEST_CASE("complexity-aware iou") {
  const Polygon sq = square(0, 0, 10, 10), split = split_square(10), far = square(50, 50, 60, 60);
  CHECK(c_iou({{&sq, &sq}}) == 1.0);
  CHECK(c_iou({{&split, &sq}}) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(c_iou({{&far, &split}}) == 0.0);
  CHECK_THROWS_AS(c_iou({}), std::domain_error);

  const Polygon shifted = sq.translated(2, 1);
  const double mean_iou = (1.0 + geometry::polygon_iou(shifted, split)) / 2;
  CHECK(c_iou({{&sq, &sq}, {&shifted, &split}}) <= mean_iou);
}

TEST_CASE("max tangent angle") {
  const Polygon sq = square(0, 0, 10, 10);
  CHECK(mta(sq, sq) == doctest::Approx(0.0).epsilon(1e-9));
  const double h = 5.0 * std::numbers::sqrt2;
  const Polygon diamond({{5, 5 - h}, {5 + h, 5}, {5, 5 + h}, {5 - h, 5}});
  CHECK(std::abs(mta(diamond, sq, 256) - std::numbers::pi / 4) <= 0.02);
  CHECK(mta(diamond.reversed(), sq, 256) == mta(diamond, sq, 256));
  CHECK_THROWS(mta(sq, sq, 4));

  SUBCASE("bounded in [0, pi]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 20);
    for (int t = 0; t < 50; ++t) {
      std::vector<geometry::Vertex2> a{{u(rng), u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng)}};
      if (!geometry::is_valid_ring(a)) continue;
      const double v = mta(Polygon(a), sq, 64);
      CHECK(v >= 0.0);
      CHECK(v <= std::numbers::pi);
    }
  }

  SUBCASE("resampled tangents are unit vectors") {
    const ContourSamples s = resample_contour(diamond, 0, 50);
    REQUIRE(s.points.size() == 50);
    for (const auto& t : s.tangents) CHECK(std::hypot(t.x, t.y) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("full report and serialization") {
  const std::vector<GtInstance> gts{{1, square(0, 0, 10, 10)}, {1, square(20, 20, 30, 28)}};
  std::vector<PredInstance> preds;
  for (const auto& g : gts) preds.push_back({g.image_id, g.polygon, 0.7});
  const MetricReport r = evaluate(preds, gts);
  CHECK(r.n_ratio == 1.0);
  CHECK(r.c_iou == 1.0);
  CHECK(*r.mta == doctest::Approx(0.0).epsilon(1e-9));

  const MetricReport none = evaluate({}, gts);
  CHECK_FALSE(none.n_ratio.has_value());
  CHECK_FALSE(none.c_iou.has_value());
  CHECK_FALSE(none.mta.has_value());

  const auto j = report_to_json(r);
  CHECK(j.size() == 10);
  CHECK(report_to_json(report_from_json(j)) == j);
  CHECK(report_to_json(none)["mta"].is_null());
  CHECK(report_csv_header() == "ap,ap50,ap75,ar,ar50,ar75,f1,n_ratio,c_iou,mta");
  CHECK(report_csv_row(none).find(",,,") != std::string::npos);
}
