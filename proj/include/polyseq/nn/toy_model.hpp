#pragma once

// Desk-scale end-to-end model: a small convolutional stem over a
// ROI-aligned image crop feeds the polygon head and a box/classification
// head. Stands in for the full detector so every loss term has a consumer.

#include <array>
#include <optional>
#include <random>
#include <vector>

#include "polyseq/geometry.hpp"
#include "polyseq/nn/param_store.hpp"
#include "polyseq/nn/polygon_head.hpp"
#include "polyseq/polyloss.hpp"

namespace polyseq::nn {

struct ToyModelConfig {
  PolygonHeadConfig head;
  int stem_layers = 3;
  int roi_sampling = 2;
};

inline constexpr int kCropChannels = 3;  // intensity + x ramp + y ramp

/// ROI-aligned intensity crop in [0, 1] plus two coordinate ramps in [-1, 1],
/// laid out [3, G, G]. `pixels` is row-major 8-bit.
std::vector<double> make_crop(std::span<const std::uint8_t> pixels, int width, int height,
                              const geometry::BBox& box, int grid, int sampling);

struct ToySample {
  std::vector<double> crop;  // [3, G, G]
  geometry::BBox proposal;
  bool positive = false;
  polyloss::VertexTokenSeq tokens;       // positives only
  std::vector<double> vertex_target;     // G*G, positives only
  std::vector<double> edge_target;
  std::array<double, 4> box_target{};    // proposal-relative deltas
};

/// Fills tokens, heat-map targets and box deltas for a positive sample.
void attach_targets(ToySample& s, const geometry::Polygon& gt, int grid, int queries);

/// (dx, dy, log dw, log dh) of `gt` relative to `proposal`.
std::array<double, 4> box_deltas(const geometry::BBox& proposal, const geometry::BBox& gt);

struct ToyForward {
  HeadOutput head;
  Tensor cls_prob;  // [N, 1]
  Tensor box;       // [N, 4]
};

class ToyModel {
 public:
  ToyModel(const ToyModelConfig& cfg, ParamStore& store, std::uint64_t seed);

  const ToyModelConfig& config() const { return cfg_; }
  ToyForward forward(const std::vector<const ToySample*>& batch, bool training) const;

 private:
  struct Stage {
    Tensor w, b, gamma, beta;
    std::string stats;
  };

  ToyModelConfig cfg_;
  ParamStore* store_;
  std::vector<Stage> stem_;
  std::optional<PolygonHead> head_;
  Tensor pool_;  // constant [G*G, 1] of 1 / G^2
  Tensor cls_w_, cls_b_, box_w_, box_b_;
};

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double bbox = 0.0;
  double vertex = 0.0;
  double edge = 0.0;
  double sequence = 0.0;

  double poly() const { return vertex + edge + sequence; }
};

struct ToyLoss {
  Tensor total;
  LossBreakdown parts;
};

/// Weighted sum of all four objectives as a differentiable scalar. Heat-map
/// terms exist only for encoder variants that produce the corresponding map.
ToyLoss toy_loss(const ToyForward& f, const std::vector<const ToySample*>& batch,
                 const polyloss::LossWeights& weights, const polyloss::FocalParams& focal = {});

/// Forward, loss, backward and one AdamW update. Throws std::domain_error
/// before touching the parameters when the loss is not finite.
LossBreakdown train_step(const ToyModel& model, ParamStore& store, const std::vector<const ToySample*>& batch,
                         const AdamWParams& opt, const polyloss::LossWeights& weights,
                         const polyloss::FocalParams& focal = {});

/// Argmax tokens in query order, NO-VERTEX rows skipped, repeated cells
/// collapsed, mapped to cell centres inside `proposal`. Empty when fewer than
/// three distinct vertices or a degenerate ring remain.
std::optional<geometry::Polygon> decode_polygon(const polyloss::PredDistSeq& dist, int grid,
                                                const geometry::BBox& proposal);

}  // namespace polyseq::nn
