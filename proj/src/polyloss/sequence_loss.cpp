#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "polyseq/polyloss.hpp"

namespace polyseq::polyloss {

geometry::Vertex2 GridVocab::centre(int token) const {
  const int row = token / grid;
  const int col = token % grid;
  return {col + 0.5, row + 0.5};
}

void VertexTokenSeq::validate() const {
  const int m = queries();
  if (valid_count < 0 || valid_count > m) {
    throw std::invalid_argument("token sequence: valid count out of range");
  }
  for (int i = 0; i < m; ++i) {
    const int tok = tokens[static_cast<std::size_t>(i)];
    if (i < valid_count && !vocab.is_cell(tok)) {
      throw std::invalid_argument("token sequence: valid position " + std::to_string(i) +
                                  " is not a grid cell");
    }
    if (i >= valid_count && tok != vocab.no_vertex()) {
      throw std::invalid_argument("token sequence: padding position " + std::to_string(i) +
                                  " is not NO-VERTEX");
    }
  }
}

PredDistSeq::PredDistSeq(int rows, int classes)
    : rows_(rows), classes_(classes),
      values_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(classes), 0.0) {}

PredDistSeq::PredDistSeq(int rows, int classes, std::vector<double> values)
    : rows_(rows), classes_(classes), values_(std::move(values)) {
  if (values_.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(classes)) {
    throw std::invalid_argument("PredDistSeq: value count does not match rows x classes");
  }
}

std::span<const double> PredDistSeq::row(int i) const {
  return std::span<const double>(values_).subspan(
      static_cast<std::size_t>(i) * static_cast<std::size_t>(classes_),
      static_cast<std::size_t>(classes_));
}

std::span<double> PredDistSeq::row(int i) {
  return std::span<double>(values_).subspan(
      static_cast<std::size_t>(i) * static_cast<std::size_t>(classes_),
      static_cast<std::size_t>(classes_));
}

int PredDistSeq::argmax(int i) const {
  const auto r = row(i);
  return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
}

void PredDistSeq::validate(double tol) const {
  for (int i = 0; i < rows_; ++i) {
    double sum = 0.0;
    for (double v : row(i)) {
      if (!(v >= 0.0)) throw std::invalid_argument("PredDistSeq: negative or NaN probability");
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw std::invalid_argument("PredDistSeq: row " + std::to_string(i) + " sums to " +
                                  std::to_string(sum));
    }
  }
}

VertexTokenSeq encode_gt_sequence(const geometry::Polygon& p, int grid, int queries,
                                  const geometry::BBox& crop) {
  if (grid < 1 || queries < 1) throw std::invalid_argument("encode_gt_sequence: bad grid/queries");
  if (!crop.valid()) throw std::invalid_argument("encode_gt_sequence: crop has no extent");
  if (static_cast<int>(p.size()) > queries) {
    throw std::invalid_argument("encode_gt_sequence: polygon has " + std::to_string(p.size()) +
                                " vertices but only " + std::to_string(queries) +
                                " queries; simplify the polygon first");
  }
  VertexTokenSeq seq;
  seq.vocab.grid = grid;
  std::vector<int> cells;
  for (const auto& v : p.vertices()) {
    const double u = (v.x - crop.x0()) / crop.w;
    const double w = (v.y - crop.y0()) / crop.h;
    const int col = std::clamp(static_cast<int>(std::floor(u * grid)), 0, grid - 1);
    const int row = std::clamp(static_cast<int>(std::floor(w * grid)), 0, grid - 1);
    const int tok = seq.vocab.cell(row, col);
    if (cells.empty() || cells.back() != tok) cells.push_back(tok);
  }
  while (cells.size() > 1 && cells.back() == cells.front()) cells.pop_back();

  seq.valid_count = static_cast<int>(cells.size());
  seq.tokens.assign(static_cast<std::size_t>(queries), seq.vocab.no_vertex());
  std::copy(cells.begin(), cells.end(), seq.tokens.begin());
  return seq;
}

int search_reference(const PredDistSeq& pred, int gt_first, int valid_count, const GridVocab& vocab) {
  if (valid_count < 1) throw std::invalid_argument("search_reference: no vertices to align");
  if (valid_count > pred.rows()) throw std::invalid_argument("search_reference: K exceeds rows");
  if (!vocab.is_cell(gt_first)) {
    throw std::invalid_argument("search_reference: first ground-truth token is not a cell");
  }
  const geometry::Vertex2 target = vocab.centre(gt_first);
  int best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < valid_count; ++i) {
    const int tok = pred.argmax(i);
    if (!vocab.is_cell(tok)) continue;
    const geometry::Vertex2 c = vocab.centre(tok);
    const double d2 = (c.x - target.x) * (c.x - target.x) + (c.y - target.y) * (c.y - target.y);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

namespace {

// Original row feeding aligned row `m`.
int shifted_source(int m, int t, int k) { return m < k ? (m + t) % k : m; }

int inverted_source(int m, int t, int k) {
  if (m == 0 || m >= k) return shifted_source(m, t, k);
  return shifted_source(k - m, t, k);
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

template <typename Source>
double permuted_ce(const VertexTokenSeq& gt, const PredDistSeq& pred, Source source) {
  double acc = 0.0;
  const int m = gt.queries();
  for (int i = 0; i < m; ++i) {
    const double p = pred.row(source(i))[static_cast<std::size_t>(gt.tokens[static_cast<std::size_t>(i)])];
    acc -= std::log(clamp_prob(p));
  }
  return acc / m;
}

template <typename Source>
void permuted_ce_grad(const VertexTokenSeq& gt, const PredDistSeq& pred, Source source,
                      PredDistSeq& grad) {
  const int m = gt.queries();
  for (int i = 0; i < m; ++i) {
    const int src = source(i);
    const auto cls = static_cast<std::size_t>(gt.tokens[static_cast<std::size_t>(i)]);
    const double p = pred.row(src)[cls];
    if (p > kProbClamp && p < 1.0 - kProbClamp) grad.row(src)[cls] += -1.0 / (m * p);
  }
}

void check_operands(const VertexTokenSeq& gt, const PredDistSeq& pred) {
  gt.validate();
  if (gt.valid_count < 1) throw std::invalid_argument("sequence loss: ground truth has no vertices");
  if (pred.rows() != gt.queries() || pred.classes() != gt.vocab.classes()) {
    throw std::invalid_argument("sequence loss: prediction shape does not match ground truth");
  }
}

}  // namespace

PredDistSeq align_shift(const PredDistSeq& pred, int t, int valid_count) {
  if (valid_count < 0 || valid_count > pred.rows() || (valid_count > 0 && (t < 0 || t >= valid_count))) {
    throw std::invalid_argument("align_shift: index out of range");
  }
  PredDistSeq out(pred.rows(), pred.classes());
  for (int m = 0; m < pred.rows(); ++m) {
    const auto src = pred.row(valid_count > 0 ? shifted_source(m, t, valid_count) : m);
    std::copy(src.begin(), src.end(), out.row(m).begin());
  }
  return out;
}

PredDistSeq align_inverse(const PredDistSeq& pred, int valid_count) {
  if (valid_count < 0 || valid_count > pred.rows()) {
    throw std::invalid_argument("align_inverse: valid count out of range");
  }
  PredDistSeq out(pred.rows(), pred.classes());
  for (int m = 0; m < pred.rows(); ++m) {
    const int src = (m == 0 || m >= valid_count) ? m : valid_count - m;
    const auto r = pred.row(src);
    std::copy(r.begin(), r.end(), out.row(m).begin());
  }
  return out;
}

double sequence_cross_entropy(const VertexTokenSeq& gt, const PredDistSeq& aligned) {
  check_operands(gt, aligned);
  return permuted_ce(gt, aligned, [](int m) { return m; });
}

SequenceLoss bidirectional_loss(const VertexTokenSeq& gt, const PredDistSeq& pred) {
  check_operands(gt, pred);
  const int k = gt.valid_count;
  const int t = search_reference(pred, gt.tokens[0], k, gt.vocab);

  auto forward = [t, k](int m) { return shifted_source(m, t, k); };
  auto inverse = [t, k](int m) { return inverted_source(m, t, k); };
  const double ce_fwd = permuted_ce(gt, pred, forward);
  const double ce_inv = permuted_ce(gt, pred, inverse);

  SequenceLoss out;
  out.reference = t;
  out.grad = PredDistSeq(pred.rows(), pred.classes());
  if (ce_inv < ce_fwd) {
    out.loss = ce_inv;
    out.inverted = true;
    permuted_ce_grad(gt, pred, inverse, out.grad);
  } else {
    out.loss = ce_fwd;
    permuted_ce_grad(gt, pred, forward, out.grad);
  }
  return out;
}

double exhaustive_alignment_loss(const VertexTokenSeq& gt, const PredDistSeq& pred) {
  check_operands(gt, pred);
  const int k = gt.valid_count;
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t < k; ++t) {
    best = std::min(best, permuted_ce(gt, pred, [t, k](int m) { return shifted_source(m, t, k); }));
    best = std::min(best, permuted_ce(gt, pred, [t, k](int m) { return inverted_source(m, t, k); }));
  }
  return best;
}

}  // namespace polyseq::polyloss
