#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "polyseq/polyloss.hpp"

namespace polyseq::polyloss {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }
bool unclamped(double p) { return p > kProbClamp && p < 1.0 - kProbClamp; }

}  // namespace

FocalTerm focal_map_term(std::span<const double> probs, std::span<const double> targets,
                         const FocalParams& params) {
  if (probs.size() != targets.size() || probs.empty()) {
    throw std::invalid_argument("focal_map_term: probability/target size mismatch");
  }
  if (!(params.alpha > 0.0) || !(params.gamma >= 0.0)) {
    throw std::invalid_argument("focal_map_term: alpha must be > 0 and gamma >= 0");
  }
  const double a = params.alpha;
  const double g = params.gamma;
  const double n = static_cast<double>(probs.size());
  FocalTerm out;
  out.grad.assign(probs.size(), 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    double dp = 0.0;
    if (targets[i] > 0.5) {
      out.loss += -a * std::pow(1.0 - p, g) * std::log(p);
      dp = a * g * std::pow(1.0 - p, g - 1.0) * std::log(p) - a * std::pow(1.0 - p, g) / p;
    } else {
      out.loss += -a * std::pow(p, g) * std::log(1.0 - p);
      dp = -a * g * std::pow(p, g - 1.0) * std::log(1.0 - p) + a * std::pow(p, g) / (1.0 - p);
    }
    if (unclamped(probs[i])) out.grad[i] = dp / n;
  }
  out.loss /= n;
  return out;
}

FocalLoss focal_map_loss(const HeatmapPair& maps, const FocalParams& params) {
  const std::size_t cells = static_cast<std::size_t>(maps.grid) * static_cast<std::size_t>(maps.grid);
  if (maps.vertex_map.size() != cells || maps.edge_map.size() != cells) {
    throw std::invalid_argument("focal_map_loss: maps must be G x G");
  }
  FocalTerm v = focal_map_term(maps.vertex_map, maps.vertex_target, params);
  FocalTerm e = focal_map_term(maps.edge_map, maps.edge_target, params);
  FocalLoss out;
  out.vertex_loss = v.loss;
  out.edge_loss = e.loss;
  out.loss = v.loss + e.loss;
  out.vertex_grad = std::move(v.grad);
  out.edge_grad = std::move(e.grad);
  return out;
}

double cls_loss(std::span<const int> labels, std::span<const double> probs) {
  if (labels.empty()) throw std::invalid_argument("cls_loss: empty input");
  if (labels.size() != probs.size()) throw std::invalid_argument("cls_loss: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    acc += labels[i] != 0 ? std::log(p) : std::log(1.0 - p);
  }
  return -acc / static_cast<double>(labels.size());
}

std::vector<double> cls_loss_grad(std::span<const int> labels, std::span<const double> probs) {
  if (labels.empty()) throw std::invalid_argument("cls_loss: empty input");
  if (labels.size() != probs.size()) throw std::invalid_argument("cls_loss: length mismatch");
  const double n = static_cast<double>(labels.size());
  std::vector<double> g(labels.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = probs[i];
    if (!unclamped(p)) continue;
    g[i] = labels[i] != 0 ? -1.0 / (n * p) : 1.0 / (n * (1.0 - p));
  }
  return g;
}

double bbox_l1_loss(std::span<const geometry::BBox> gt, std::span<const geometry::BBox> pred) {
  if (gt.size() != pred.size()) throw std::invalid_argument("bbox_l1_loss: length mismatch");
  if (gt.empty()) throw std::invalid_argument("bbox_l1_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    acc += std::abs(gt[i].cx - pred[i].cx) + std::abs(gt[i].cy - pred[i].cy) +
           std::abs(gt[i].w - pred[i].w) + std::abs(gt[i].h - pred[i].h);
  }
  return acc / static_cast<double>(gt.size());
}

double total_loss(double cls, double bbox, double poly, const LossWeights& w) {
  if (!std::isfinite(cls) || !std::isfinite(bbox) || !std::isfinite(poly)) {
    throw std::domain_error("total_loss: non-finite component");
  }
  return w.lambda_cls * cls + w.lambda_bbox * bbox + w.lambda_poly * poly;
}

}  // namespace polyseq::polyloss
