#pragma once

// Training objectives of the polygon head: the bidirectional serialized-vertex
// loss plus the heat-map focal loss, the classification BCE, the box L1 loss
// and their weighted sum. Every loss returns its gradient with respect to the
// probabilities it consumes so callers can splice it into any autodiff graph.

#include <cstddef>
#include <span>
#include <vector>

#include "polyseq/geometry.hpp"

namespace polyseq::polyloss {

inline constexpr double kProbClamp = 1e-7;

/// Token vocabulary: 0..G*G-1 are grid cells (row-major), G*G is NO-VERTEX.
struct GridVocab {
  int grid = 20;

  int no_vertex() const { return grid * grid; }
  int classes() const { return grid * grid + 1; }
  int cell(int row, int col) const { return row * grid + col; }
  bool is_cell(int token) const { return token >= 0 && token < grid * grid; }
  /// Cell centre in grid units: (col + 0.5, row + 0.5).
  geometry::Vertex2 centre(int token) const;
};

struct VertexTokenSeq {
  GridVocab vocab;
  std::vector<int> tokens;  // length M
  int valid_count = 0;      // K

  int queries() const { return static_cast<int>(tokens.size()); }
  void validate() const;
};

/// M rows of categorical distributions over `classes` entries, row-major.
class PredDistSeq {
 public:
  PredDistSeq() = default;
  PredDistSeq(int rows, int classes);
  PredDistSeq(int rows, int classes, std::vector<double> values);

  int rows() const { return rows_; }
  int classes() const { return classes_; }
  std::span<const double> row(int i) const;
  std::span<double> row(int i);
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  int argmax(int i) const;

  /// Throws unless every row is a distribution (entries >= 0, sum 1 +- tol).
  void validate(double tol = 1e-9) const;

  friend bool operator==(const PredDistSeq&, const PredDistSeq&) = default;

 private:
  int rows_ = 0;
  int classes_ = 0;
  std::vector<double> values_;
};

/// Maps polygon vertices into grid tokens relative to `crop`. Cyclically
/// consecutive duplicate tokens are collapsed; the tail is NO-VERTEX padding.
/// Throws std::invalid_argument if the polygon has more than `queries` vertices.
VertexTokenSeq encode_gt_sequence(const geometry::Polygon& p, int grid, int queries,
                                  const geometry::BBox& crop);

/// Index among rows 0..K-1 whose argmax cell centre is nearest to
/// `gt_first`'s centre. NO-VERTEX rows are skipped, ties go to the smaller
/// index, and 0 is returned when every row is NO-VERTEX.
int search_reference(const PredDistSeq& pred, int gt_first, int valid_count, const GridVocab& vocab);

/// Rows 0..K-1 rotated so that row t becomes row 0; the tail is untouched.
PredDistSeq align_shift(const PredDistSeq& pred, int t, int valid_count);

/// Row 0 fixed, rows 1..K-1 reversed; the tail is untouched.
PredDistSeq align_inverse(const PredDistSeq& pred, int valid_count);

struct SequenceLoss {
  double loss = 0.0;
  PredDistSeq grad;     // d loss / d pred, same layout as pred
  int reference = 0;    // t chosen by the search step
  bool inverted = false;
};

/// Mean categorical cross-entropy over all M rows of `aligned` against gt.
double sequence_cross_entropy(const VertexTokenSeq& gt, const PredDistSeq& aligned);

/// Search, shift, then min over the forward and the inverted alignment.
/// Gradient flows through the winning branch only; alignment indices are
/// treated as constants. Equal branches resolve to the forward one.
SequenceLoss bidirectional_loss(const VertexTokenSeq& gt, const PredDistSeq& pred);

/// Minimum cross-entropy over all K rotations times both directions.
double exhaustive_alignment_loss(const VertexTokenSeq& gt, const PredDistSeq& pred);

struct FocalParams {
  double alpha = 2.0;
  double gamma = 4.0;
};

struct HeatmapPair {
  int grid = 0;
  std::vector<double> vertex_map;     // G*G probabilities
  std::vector<double> edge_map;       // G*G probabilities
  std::vector<double> vertex_target;  // G*G in {0, 1}
  std::vector<double> edge_target;
};

struct FocalTerm {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean over pixels of the focal loss of a single probability map.
FocalTerm focal_map_term(std::span<const double> probs, std::span<const double> targets,
                         const FocalParams& params);

struct FocalLoss {
  double loss = 0.0;  // L_ver + L_edge
  double vertex_loss = 0.0;
  double edge_loss = 0.0;
  std::vector<double> vertex_grad;
  std::vector<double> edge_grad;
};

FocalLoss focal_map_loss(const HeatmapPair& maps, const FocalParams& params = {});

/// Binary cross-entropy averaged over N predictions.
double cls_loss(std::span<const int> labels, std::span<const double> probs);
std::vector<double> cls_loss_grad(std::span<const int> labels, std::span<const double> probs);

/// Mean over boxes of the summed absolute (cx, cy, w, h) differences.
double bbox_l1_loss(std::span<const geometry::BBox> gt, std::span<const geometry::BBox> pred);

struct LossWeights {
  double lambda_cls = 1.0;
  double lambda_bbox = 1.0;
  double lambda_poly = 1.0;
};

double total_loss(double cls, double bbox, double poly, const LossWeights& w = {});

}  // namespace polyseq::polyloss
