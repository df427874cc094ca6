#include "polyseq/nn/toy_model.hpp"

#include <cmath>
#include <stdexcept>

namespace polyseq::nn {

std::vector<double> make_crop(std::span<const std::uint8_t> pixels, int width, int height,
                              const geometry::BBox& box, int grid, int sampling) {
  std::vector<double> plane(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) plane[i] = pixels[i] / 255.0;
  const Tensor image = Tensor::from({1, static_cast<std::size_t>(height), static_cast<std::size_t>(width)},
                                    std::move(plane));
  const Tensor aligned = roi_align(image, box, static_cast<std::size_t>(grid), static_cast<std::size_t>(sampling));

  const auto g = static_cast<std::size_t>(grid);
  std::vector<double> out(kCropChannels * g * g);
  std::copy(aligned.values().begin(), aligned.values().end(), out.begin());
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c) {
      out[g * g + r * g + c] = (2.0 * (c + 0.5) / grid) - 1.0;
      out[2 * g * g + r * g + c] = (2.0 * (r + 0.5) / grid) - 1.0;
    }
  }
  return out;
}

std::array<double, 4> box_deltas(const geometry::BBox& proposal, const geometry::BBox& gt) {
  return {(gt.cx - proposal.cx) / proposal.w, (gt.cy - proposal.cy) / proposal.h, std::log(gt.w / proposal.w),
          std::log(gt.h / proposal.h)};
}

void attach_targets(ToySample& s, const geometry::Polygon& gt, int grid, int queries) {
  s.positive = true;
  s.tokens = polyloss::encode_gt_sequence(gt, grid, queries, s.proposal);
  s.box_target = box_deltas(s.proposal, geometry::bounding_box(gt.vertices()));

  const auto cells = static_cast<std::size_t>(grid * grid);
  s.vertex_target.assign(cells, 0.0);
  s.edge_target.assign(cells, 0.0);
  auto cell_of = [&](geometry::Vertex2 p) {
    const double u = (p.x - s.proposal.x0()) / s.proposal.w * grid;
    const double v = (p.y - s.proposal.y0()) / s.proposal.h * grid;
    const int c = std::clamp(static_cast<int>(std::floor(u)), 0, grid - 1);
    const int r = std::clamp(static_cast<int>(std::floor(v)), 0, grid - 1);
    return static_cast<std::size_t>(r * grid + c);
  };
  const auto& v = gt.vertices();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const geometry::Vertex2 a = v[i], b = v[(i + 1) % v.size()];
    s.vertex_target[cell_of(a)] = 1.0;
    const double cells_long = std::max(std::abs(b.x - a.x) / s.proposal.w, std::abs(b.y - a.y) / s.proposal.h) * grid;
    const int steps = std::max(1, static_cast<int>(std::ceil(cells_long * 4.0)));
    for (int k = 0; k <= steps; ++k) {
      const double t = static_cast<double>(k) / steps;
      s.edge_target[cell_of({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)})] = 1.0;
    }
  }
}

ToyModel::ToyModel(const ToyModelConfig& cfg, ParamStore& store, std::uint64_t seed) : cfg_(cfg), store_(&store) {
  cfg_.head.validate();
  if (cfg_.stem_layers < 1) throw std::invalid_argument("stem needs at least one layer");
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(cfg_.head.channels);
  std::size_t cin = kCropChannels;
  for (int l = 0; l < cfg_.stem_layers; ++l) {
    const std::string n = "stem." + std::to_string(l);
    Stage s;
    s.w = store.add(n + ".w", {d, cin, 3, 3}, init::xavier_uniform(d * cin * 9, cin * 9, d * 9, rng));
    s.b = store.add(n + ".b", {d}, std::vector<double>(d, 0.0));
    s.gamma = store.add(n + ".bn.gamma", {d}, std::vector<double>(d, 1.0));
    s.beta = store.add(n + ".bn.beta", {d}, std::vector<double>(d, 0.0));
    s.stats = n + ".bn";
    store.add_buffer(s.stats + ".running_mean", {d}, 0.0);
    store.add_buffer(s.stats + ".running_var", {d}, 1.0);
    stem_.push_back(std::move(s));
    cin = d;
  }
  head_.emplace(cfg_.head, store, rng);
  const auto gg = static_cast<std::size_t>(cfg_.head.grid * cfg_.head.grid);
  pool_ = Tensor::from({gg, 1}, std::vector<double>(gg, 1.0 / static_cast<double>(gg)));
  cls_w_ = store.add("det.cls.w", {d, 1}, init::xavier_uniform(d, d, 1, rng));
  cls_b_ = store.add("det.cls.b", {1}, {0.0});
  box_w_ = store.add("det.box.w", {d, 4}, init::xavier_uniform(d * 4, d, 4, rng));
  box_b_ = store.add("det.box.b", {4}, std::vector<double>(4, 0.0));
}

ToyForward ToyModel::forward(const std::vector<const ToySample*>& batch, bool training) const {
  if (batch.empty()) throw std::invalid_argument("ToyModel::forward: empty batch");
  const auto g = static_cast<std::size_t>(cfg_.head.grid);
  const std::size_t n = batch.size();
  std::vector<double> input;
  input.reserve(n * kCropChannels * g * g);
  for (const ToySample* s : batch) {
    if (s->crop.size() != kCropChannels * g * g) throw std::invalid_argument("ToyModel::forward: crop size mismatch");
    input.insert(input.end(), s->crop.begin(), s->crop.end());
  }
  Tensor x = Tensor::from({n, kCropChannels, g, g}, std::move(input));
  for (const Stage& s : stem_) {
    const BatchNormState state{store_->buffer(s.stats + ".running_mean"), store_->buffer(s.stats + ".running_var")};
    x = relu(batch_norm2d(conv2d(x, s.w, s.b), s.gamma, s.beta, state, training));
  }
  ToyForward out;
  out.head = head_->forward(x, training);
  const std::size_t d = x.dim(1);
  const Tensor pooled = reshape(matmul(reshape(x, {n, d, g * g}), pool_), {n, d});
  out.cls_prob = sigmoid(add(matmul(pooled, cls_w_), cls_b_));
  out.box = add(matmul(pooled, box_w_), box_b_);
  return out;
}

ToyLoss toy_loss(const ToyForward& f, const std::vector<const ToySample*>& batch,
                 const polyloss::LossWeights& weights, const polyloss::FocalParams& focal) {
  const std::size_t n = batch.size();
  std::vector<std::size_t> positives;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    labels.push_back(batch[i]->positive ? 1 : 0);
    if (batch[i]->positive) positives.push_back(i);
  }
  ToyLoss out;
  LossBreakdown& parts = out.parts;

  const std::vector<double> probs(f.cls_prob.values().begin(), f.cls_prob.values().end());
  parts.cls = polyloss::cls_loss(labels, probs);
  Tensor cls = external_loss(f.cls_prob, parts.cls, polyloss::cls_loss_grad(labels, probs));

  Tensor bbox, poly;
  if (!positives.empty()) {
    const double inv = 1.0 / static_cast<double>(positives.size());
    const auto box = f.box.values();
    std::vector<double> box_grad(box.size(), 0.0);
    std::vector<geometry::BBox> gt_boxes, pred_boxes;
    for (std::size_t i : positives) {
      const auto& t = batch[i]->box_target;
      gt_boxes.push_back({t[0], t[1], t[2], t[3]});
      pred_boxes.push_back({box[4 * i], box[4 * i + 1], box[4 * i + 2], box[4 * i + 3]});
      for (std::size_t k = 0; k < 4; ++k) {
        const double diff = box[4 * i + k] - t[k];
        box_grad[4 * i + k] = diff > 0.0 ? inv : diff < 0.0 ? -inv : 0.0;
      }
    }
    parts.bbox = polyloss::bbox_l1_loss(gt_boxes, pred_boxes);
    bbox = external_loss(f.box, parts.bbox, std::move(box_grad));

    const Tensor& pv = f.head.probs;
    const std::size_t per = pv.dim(1) * pv.dim(2);
    std::vector<double> seq_grad(pv.size(), 0.0);
    for (std::size_t i : positives) {
      const polyloss::SequenceLoss l = polyloss::bidirectional_loss(batch[i]->tokens, to_pred_dist(pv, i));
      parts.sequence += l.loss * inv;
      const auto g = l.grad.values();
      for (std::size_t k = 0; k < per; ++k) seq_grad[i * per + k] = g[k] * inv;
    }
    poly = external_loss(pv, parts.sequence, std::move(seq_grad));

    auto map_term = [&](const Tensor& map, bool vertex, double& value) {
      if (!map.defined()) return;
      const std::size_t cells = map.size() / n;
      std::vector<double> grad(map.size(), 0.0);
      for (std::size_t i : positives) {
        const auto& target = vertex ? batch[i]->vertex_target : batch[i]->edge_target;
        const polyloss::FocalTerm t = polyloss::focal_map_term(map.values().subspan(i * cells, cells), target, focal);
        value += t.loss * inv;
        for (std::size_t k = 0; k < cells; ++k) grad[i * cells + k] = t.grad[k] * inv;
      }
      poly = add(poly, external_loss(map, value, std::move(grad)));
    };
    map_term(f.head.vertex_map, true, parts.vertex);
    map_term(f.head.edge_map, false, parts.edge);
  }

  parts.total = polyloss::total_loss(parts.cls, parts.bbox, parts.poly(), weights);
  out.total = scale(cls, weights.lambda_cls);
  if (bbox.defined()) out.total = add(out.total, scale(bbox, weights.lambda_bbox));
  if (poly.defined()) out.total = add(out.total, scale(poly, weights.lambda_poly));
  return out;
}

LossBreakdown train_step(const ToyModel& model, ParamStore& store, const std::vector<const ToySample*>& batch,
                         const AdamWParams& opt, const polyloss::LossWeights& weights,
                         const polyloss::FocalParams& focal) {
  store.zero_grad();
  const ToyForward f = model.forward(batch, true);
  const ToyLoss loss = toy_loss(f, batch, weights, focal);
  if (!std::isfinite(loss.total.item())) throw std::domain_error("train_step: non-finite loss");
  loss.total.backward();
  store.adamw_step(opt);
  return loss.parts;
}

std::optional<geometry::Polygon> decode_polygon(const polyloss::PredDistSeq& dist, int grid,
                                                const geometry::BBox& proposal) {
  const polyloss::GridVocab vocab{grid};
  std::vector<int> tokens;
  for (int r = 0; r < dist.rows(); ++r) {
    const int t = dist.argmax(r);
    if (!vocab.is_cell(t)) continue;
    if (!tokens.empty() && tokens.back() == t) continue;
    tokens.push_back(t);
  }
  while (tokens.size() > 1 && tokens.front() == tokens.back()) tokens.pop_back();
  if (tokens.size() < 3) return std::nullopt;
  std::vector<geometry::Vertex2> ring;
  for (int t : tokens) {
    const geometry::Vertex2 c = vocab.centre(t);
    ring.push_back({proposal.x0() + c.x / grid * proposal.w, proposal.y0() + c.y / grid * proposal.h});
  }
  if (!geometry::is_valid_ring(ring)) return std::nullopt;
  return geometry::Polygon(std::move(ring));
}

}  // namespace polyseq::nn
