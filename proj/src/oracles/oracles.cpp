#include "polyseq/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "polyseq/nn/ops.hpp"
#include "polyseq/nn/toy_model.hpp"

namespace polyseq::oracles {

namespace {

double clamp_prob(double p) { return std::min(std::max(p, 1e-7), 1.0 - 1e-7); }

double naive_ce(const std::vector<int>& tokens, const std::vector<std::vector<double>>& rows) {
  double total = 0.0;
  for (std::size_t m = 0; m < rows.size(); ++m) total += -std::log(clamp_prob(rows[m][tokens[m]]));
  return total / static_cast<double>(rows.size());
}

std::vector<std::vector<double>> rotate_front(const std::vector<std::vector<double>>& rows, int k, int t) {
  std::vector<std::vector<double>> out;
  for (int i = t; i < k; ++i) out.push_back(rows[i]);
  for (int i = 0; i < t; ++i) out.push_back(rows[i]);
  for (std::size_t i = k; i < rows.size(); ++i) out.push_back(rows[i]);
  return out;
}

std::vector<std::vector<double>> reflect_front(const std::vector<std::vector<double>>& rows, int k) {
  std::vector<std::vector<double>> out;
  out.push_back(rows[0]);
  for (int i = k - 1; i >= 1; --i) out.push_back(rows[i]);
  for (std::size_t i = k; i < rows.size(); ++i) out.push_back(rows[i]);
  return out;
}

}  // namespace

double naive_bidirectional_loss(const std::vector<int>& tokens, int k, const std::vector<std::vector<double>>& probs,
                                int grid) {
  const int no_vertex = grid * grid;
  const double gx = tokens[0] % grid + 0.5, gy = tokens[0] / grid + 0.5;
  int t = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) {
    int arg = 0;
    for (int c = 1; c < static_cast<int>(probs[i].size()); ++c) {
      if (probs[i][c] > probs[i][arg]) arg = c;
    }
    if (arg == no_vertex) continue;
    const double px = arg % grid + 0.5, py = arg / grid + 0.5;
    const double d = std::sqrt((px - gx) * (px - gx) + (py - gy) * (py - gy));
    if (d < best) {
      best = d;
      t = i;
    }
  }
  const auto shifted = rotate_front(probs, k, t);
  return std::min(naive_ce(tokens, shifted), naive_ce(tokens, reflect_front(shifted, k)));
}

double naive_exhaustive_loss(const std::vector<int>& tokens, int k, const std::vector<std::vector<double>>& probs) {
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t < k; ++t) {
    const auto shifted = rotate_front(probs, k, t);
    best = std::min(best, naive_ce(tokens, shifted));
    best = std::min(best, naive_ce(tokens, reflect_front(shifted, k)));
  }
  return best;
}

std::vector<std::optional<std::size_t>> brute_force_matching(const std::vector<metrics::PredInstance>& preds,
                                                             const std::vector<metrics::GtInstance>& gts,
                                                             double threshold, int resolution) {
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::vector<std::vector<double>> iou(preds.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (preds[p].image_id == gts[g].image_id) {
        iou[p][g] = geometry::polygon_iou(preds[p].polygon, gts[g].polygon, resolution);
      }
    }
  }

  // Per-pred priority key in greedy order: larger IoU first, then lower GT index,
  // an unmatched slot ranks below every match.
  using Key = std::vector<std::pair<double, long>>;
  Key best_key;
  std::vector<std::optional<std::size_t>> best(preds.size());
  std::vector<std::optional<std::size_t>> current(preds.size());
  std::vector<bool> used(gts.size(), false);
  Key key;
  std::function<void(std::size_t)> recurse = [&](std::size_t depth) {
    if (depth == order.size()) {
      if (best_key.empty() || key > best_key) {
        best_key = key;
        best = current;
      }
      return;
    }
    const std::size_t p = order[depth];
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || preds[p].image_id != gts[g].image_id || iou[p][g] < threshold) continue;
      used[g] = true;
      current[p] = g;
      key.push_back({iou[p][g], -static_cast<long>(g)});
      recurse(depth + 1);
      key.pop_back();
      current[p].reset();
      used[g] = false;
    }
    key.push_back({-1.0, 0});
    recurse(depth + 1);
    key.pop_back();
  };
  recurse(0);
  return best;
}

double naive_average_precision(std::vector<std::pair<double, bool>> detections, std::size_t total_gt) {
  if (total_gt == 0) return detections.empty() ? 1.0 : 0.0;
  std::stable_sort(detections.begin(), detections.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> precision, recall;
  double tp = 0;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (detections[i].second) tp += 1;
    precision.push_back(tp / static_cast<double>(i + 1));
    recall.push_back(tp / static_cast<double>(total_gt));
  }
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    double best = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
      if (recall[i] >= r / 100.0) best = std::max(best, precision[i]);
    }
    sum += best;
  }
  return sum / 101.0;
}

namespace {

using nn::Shape;
using nn::Tensor;

struct OpCase {
  std::mt19937_64 rng;

  Tensor input(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(nn::numel(shape));
    for (double& x : v) x = u(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
  }

  // Random projection to a scalar, kept outside the ops under test.
  Tensor project(const Tensor& y, std::uint64_t salt) const {
    std::mt19937_64 r(salt);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> w(y.size());
    double value = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = u(r);
      value += w[i] * y.values()[i];
    }
    return nn::external_loss(y, value, std::move(w));
  }
};

}  // namespace

std::vector<NamedCheck> op_gradient_checks(std::uint64_t seed) {
  std::vector<NamedCheck> out;
  OpCase c{std::mt19937_64(seed)};
  auto check = [&](const std::string& name, std::vector<Tensor> inputs, std::function<Tensor()> build) {
    const std::uint64_t salt = seed * 7919 + out.size();
    out.push_back({name, nn::finite_difference_check([&] { return c.project(build(), salt); }, std::move(inputs))});
  };

  {
    Tensor a = c.input({2, 3}), b = c.input({3});
    check("add", {a, b}, [=] { return nn::add(a, b); });
  }
  {
    Tensor a = c.input({2, 3}), b = c.input({2, 1});
    check("sub", {a, b}, [=] { return nn::sub(a, b); });
  }
  {
    Tensor a = c.input({2, 3}), b = c.input({1, 3});
    check("mul", {a, b}, [=] { return nn::mul(a, b); });
  }
  {
    Tensor x = c.input({4});
    check("scale", {x}, [=] { return nn::scale(x, 1.7); });
  }
  {
    Tensor a = c.input({2, 2, 3}), b = c.input({2, 3, 2});
    check("matmul", {a, b}, [=] { return nn::matmul(a, b); });
    Tensor p = c.input({2, 3}), q = c.input({3, 4});
    check("matmul", {p, q}, [=] { return nn::matmul(p, q); });
  }
  {
    Tensor x = c.input({5});
    for (double& v : x.mutable_values()) v = (v < 0 ? -0.2 : 0.2) + v;  // keep away from the kink
    check("relu", {x}, [=] { return nn::relu(x); });
  }
  {
    Tensor x = c.input({5}, -3.0, 3.0);
    check("sigmoid", {x}, [=] { return nn::sigmoid(x); });
  }
  {
    Tensor x = c.input({2, 4}, -2.0, 2.0);
    check("softmax", {x}, [=] { return nn::softmax(x); });
  }
  {
    Tensor x = c.input({2, 4}), g = c.input({4}, 0.5, 1.5), b = c.input({4});
    check("layer_norm", {x, g, b}, [=] { return nn::layer_norm(x, g, b); });
  }
  {
    Tensor x = c.input({2, 2, 2, 2}), g = c.input({2}, 0.5, 1.5), b = c.input({2});
    auto stats = std::make_shared<std::vector<double>>(std::vector<double>{0.0, 0.0, 1.0, 1.0});
    check("batch_norm2d", {x, g, b}, [=] {
      const nn::BatchNormState s{std::span<double>(*stats).subspan(0, 2), std::span<double>(*stats).subspan(2, 2)};
      return nn::batch_norm2d(x, g, b, s, true);
    });
    auto frozen = std::make_shared<std::vector<double>>(std::vector<double>{0.1, -0.2, 0.8, 1.3});
    check("batch_norm2d", {x, g, b}, [=] {
      const nn::BatchNormState s{std::span<double>(*frozen).subspan(0, 2), std::span<double>(*frozen).subspan(2, 2)};
      return nn::batch_norm2d(x, g, b, s, false);
    });
  }
  {
    Tensor x = c.input({1, 2, 3, 3}), w = c.input({2, 2, 3, 3}), b = c.input({2});
    check("conv2d", {x, w, b}, [=] { return nn::conv2d(x, w, b); });
    Tensor x1 = c.input({2, 3, 2, 2}), w1 = c.input({2, 3, 1, 1}), b1 = c.input({2});
    check("conv2d", {x1, w1, b1}, [=] { return nn::conv2d(x1, w1, b1); });
  }
  {
    Tensor x = c.input({5});
    check("mean", {x}, [=] { return nn::mean(x); });
    Tensor y = c.input({4});
    check("sum", {y}, [=] { return nn::sum(y); });
  }
  {
    Tensor x = c.input({2, 3});
    check("reshape", {x}, [=] { return nn::reshape(x, {3, 2}); });
  }
  {
    Tensor x = c.input({2, 3, 2});
    check("permute", {x}, [=] { return nn::permute(x, {2, 0, 1}); });
  }
  {
    Tensor a = c.input({2, 2}), b = c.input({2, 3});
    check("concat", {a, b}, [=] { return nn::concat({a, b}, 1); });
  }
  {
    Tensor x = c.input({4, 2});
    check("slice0", {x}, [=] { return nn::slice0(x, 1, 2); });
  }
  {
    Tensor f = c.input({2, 5, 5});
    const geometry::BBox box = geometry::BBox::from_corners(0.7, 1.3, 3.8, 4.1);
    check("roi_align", {f}, [=] { return nn::roi_align(f, box, 3, 2); });
  }
  return out;
}

nn::GradCheckResult full_model_gradient_check(std::uint64_t seed, std::size_t max_coords) {
  nn::ToyModelConfig cfg;
  cfg.head.grid = 8;
  cfg.head.channels = 16;
  cfg.head.heads = 4;
  cfg.head.decoder_blocks = 2;
  cfg.head.queries = 6;
  cfg.head.variant = nn::EncoderVariant::kHierarchical;
  nn::ParamStore store;
  const nn::ToyModel model(cfg, store, seed);

  std::mt19937_64 rng(seed + 1);
  std::uniform_int_distribution<int> pixel(0, 255);
  const int size = 24;
  std::vector<std::uint8_t> image(static_cast<std::size_t>(size * size));
  for (auto& p : image) p = static_cast<std::uint8_t>(pixel(rng));

  std::vector<nn::ToySample> samples(2);
  const geometry::Polygon shapes[2] = {
      geometry::Polygon({{4, 4}, {15, 4}, {15, 13}, {4, 13}}),
      geometry::Polygon({{6, 5}, {18, 5}, {18, 11}, {12, 11}, {12, 18}, {6, 18}}),
  };
  for (int i = 0; i < 2; ++i) {
    const geometry::BBox gt = geometry::bounding_box(shapes[i].vertices());
    samples[i].proposal = {gt.cx + 0.3, gt.cy - 0.2, gt.w * 1.2 + 2.0, gt.h * 1.2 + 2.0};
    samples[i].crop = nn::make_crop(image, size, size, samples[i].proposal, cfg.head.grid, 2);
    nn::attach_targets(samples[i], shapes[i], cfg.head.grid, cfg.head.queries);
  }
  const std::vector<const nn::ToySample*> batch{&samples[0], &samples[1]};
  nn::GradCheckOptions opt;
  opt.seed = seed;
  opt.max_coords = max_coords;
  return nn::finite_difference_check(
      [&] { return nn::toy_loss(model.forward(batch, true), batch, polyloss::LossWeights{}).total; },
      store.parameters(), opt);
}

}  // namespace polyseq::oracles
