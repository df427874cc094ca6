#include "polyseq/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace polyseq::experiment {

namespace {

struct Instance {
  std::size_t image;  // index into the corpus images
  geometry::Polygon polygon;
  geometry::BBox box;
};

std::vector<Instance> collect_instances(const dataio::SynthCorpus& corpus) {
  std::unordered_map<std::int64_t, std::size_t> index;
  for (std::size_t i = 0; i < corpus.doc.images.size(); ++i) index[corpus.doc.images[i].id] = i;
  std::vector<Instance> out;
  for (const dataio::CocoAnnotation& a : corpus.doc.annotations) {
    geometry::Polygon p = dataio::annotation_polygon(a);
    const geometry::BBox box = geometry::bounding_box(p.vertices());
    out.push_back({index.at(a.image_id), std::move(p), box});
  }
  return out;
}

nn::ToySample crop_sample(const dataio::GrayImage& img, const geometry::BBox& proposal, int grid, int sampling) {
  nn::ToySample s;
  s.proposal = proposal;
  s.crop = nn::make_crop(img.pixels, img.width, img.height, proposal, grid, sampling);
  return s;
}

// Jittered proposal around a GT box: random growth and a small shift.
geometry::BBox jitter_proposal(const geometry::BBox& gt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> grow(0.05, 0.30);
  std::uniform_real_distribution<double> shift(-0.06, 0.06);
  const double w = gt.w * (1.0 + grow(rng)) + 2.0;
  const double h = gt.h * (1.0 + grow(rng)) + 2.0;
  return {gt.cx + shift(rng) * gt.w, gt.cy + shift(rng) * gt.h, w, h};
}

// Box over mostly empty ground: rejected when it covers much of any building.
geometry::BBox negative_proposal(const dataio::GrayImage& img, const std::vector<const Instance*>& buildings,
                                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> size(10.0, 28.0);
  for (int attempt = 0; attempt < 50; ++attempt) {
    const double w = size(rng), h = size(rng);
    std::uniform_real_distribution<double> cx(w / 2, img.width - w / 2), cy(h / 2, img.height - h / 2);
    const geometry::BBox b{cx(rng), cy(rng), w, h};
    bool clear = true;
    for (const Instance* in : buildings) {
      const double ix = std::max(0.0, std::min(b.x1(), in->box.x1()) - std::max(b.x0(), in->box.x0()));
      const double iy = std::max(0.0, std::min(b.y1(), in->box.y1()) - std::max(b.y0(), in->box.y0()));
      if (ix * iy > 0.25 * in->box.w * in->box.h) clear = false;
    }
    if (clear) return b;
  }
  return {img.width / 2.0, img.height / 2.0, 12.0, 12.0};
}

}  // namespace

ToyExperimentConfig ToyExperimentConfig::desk_default() {
  ToyExperimentConfig c;
  c.model.head.grid = 12;
  c.model.head.channels = 16;
  c.model.head.heads = 4;
  c.model.head.decoder_blocks = 2;
  c.model.head.queries = 8;
  c.model.head.weight_convs = 4;
  c.steps = 1500;
  c.train_corpus.images = 500;
  c.train_corpus.seed = 1;
  c.heldout_corpus.images = 100;
  c.heldout_corpus.seed = 2;
  return c;
}

geometry::BBox eval_proposal(const geometry::BBox& gt, double margin) {
  return {gt.cx, gt.cy, gt.w * (1.0 + margin) + 2.0, gt.h * (1.0 + margin) + 2.0};
}

std::string loss_curve_csv(const std::vector<LossRecord>& curve) {
  std::ostringstream os;
  os << "step,total,cls,bbox,vertex,edge,sequence\n";
  char buf[256];
  for (const LossRecord& r : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.loss.total, r.loss.cls,
                  r.loss.bbox, r.loss.vertex, r.loss.edge, r.loss.sequence);
    os << buf;
  }
  return os.str();
}

ToyExperimentResult run_toy_experiment(const ToyExperimentConfig& cfg,
                                       const std::optional<std::filesystem::path>& checkpoint) {
  const auto started = std::chrono::steady_clock::now();
  const int grid = cfg.model.head.grid;
  const int queries = cfg.model.head.queries;
  const int sampling = cfg.model.roi_sampling;

  const dataio::SynthCorpus train = dataio::gen_synthetic(cfg.train_corpus);
  const dataio::SynthCorpus heldout = dataio::gen_synthetic(cfg.heldout_corpus);
  const std::vector<Instance> train_instances = collect_instances(train);
  const std::vector<Instance> heldout_instances = collect_instances(heldout);
  std::vector<std::vector<const Instance*>> per_image(train.images.size());
  for (const Instance& in : train_instances) per_image[in.image].push_back(&in);

  nn::ParamStore store;
  const nn::ToyModel model(cfg.model, store, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
  std::uniform_int_distribution<std::size_t> pick_instance(0, train_instances.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_image(0, train.images.size() - 1);

  ToyExperimentResult result;
  const int drop_step = static_cast<int>(cfg.lr_drop_at * cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<nn::ToySample> samples;
    for (int k = 0; k < cfg.positives_per_batch; ++k) {
      const Instance& in = train_instances[pick_instance(rng)];
      nn::ToySample s = crop_sample(train.images[in.image], jitter_proposal(in.box, rng), grid, sampling);
      nn::attach_targets(s, in.polygon, grid, queries);
      samples.push_back(std::move(s));
    }
    for (int k = 0; k < cfg.negatives_per_batch; ++k) {
      const std::size_t im = pick_image(rng);
      samples.push_back(crop_sample(train.images[im], negative_proposal(train.images[im], per_image[im], rng), grid,
                                    sampling));
    }
    std::vector<const nn::ToySample*> batch;
    for (const nn::ToySample& s : samples) batch.push_back(&s);
    nn::AdamWParams opt = cfg.optimizer;
    if (step >= drop_step) opt.lr *= 0.1;
    result.curve.push_back({step, nn::train_step(model, store, batch, opt, cfg.weights, cfg.focal)});
  }

  const int window = std::clamp(cfg.final_window, 1, std::max(1, cfg.steps));
  int counted = 0;
  for (auto it = result.curve.rbegin(); it != result.curve.rend() && counted < window; ++it, ++counted) {
    result.final_train.total += it->loss.total;
    result.final_train.cls += it->loss.cls;
    result.final_train.bbox += it->loss.bbox;
    result.final_train.vertex += it->loss.vertex;
    result.final_train.edge += it->loss.edge;
    result.final_train.sequence += it->loss.sequence;
  }
  if (counted > 0) {
    const double inv = 1.0 / counted;
    result.final_train.total *= inv;
    result.final_train.cls *= inv;
    result.final_train.bbox *= inv;
    result.final_train.vertex *= inv;
    result.final_train.edge *= inv;
    result.final_train.sequence *= inv;
  }

  // Held-out evaluation with fixed proposals around every GT building.
  std::vector<metrics::PredInstance> preds;
  std::vector<metrics::GtInstance> gts;
  for (const Instance& in : heldout_instances) gts.push_back({heldout.doc.images[in.image].id, in.polygon});
  constexpr std::size_t kEvalBatch = 16;
  double seq_sum = 0.0, total_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < heldout_instances.size(); start += kEvalBatch) {
    const std::size_t end = std::min(heldout_instances.size(), start + kEvalBatch);
    std::vector<nn::ToySample> samples;
    for (std::size_t i = start; i < end; ++i) {
      const Instance& in = heldout_instances[i];
      nn::ToySample s = crop_sample(heldout.images[in.image], eval_proposal(in.box, cfg.eval_margin), grid, sampling);
      nn::attach_targets(s, in.polygon, grid, queries);
      samples.push_back(std::move(s));
    }
    std::vector<const nn::ToySample*> batch;
    for (const nn::ToySample& s : samples) batch.push_back(&s);
    const nn::ToyForward f = model.forward(batch, false);
    const nn::ToyLoss l = nn::toy_loss(f, batch, cfg.weights, cfg.focal);
    seq_sum += l.parts.sequence * static_cast<double>(batch.size());
    total_sum += l.parts.total * static_cast<double>(batch.size());
    ++batches;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto poly = nn::decode_polygon(nn::to_pred_dist(f.head.probs, b), grid, batch[b]->proposal);
      if (!poly) continue;
      const Instance& in = heldout_instances[start + b];
      preds.push_back({heldout.doc.images[in.image].id, *poly, f.cls_prob.values()[b]});
    }
  }
  const double n_eval = static_cast<double>(std::max<std::size_t>(1, heldout_instances.size()));
  result.heldout_sequence_loss = seq_sum / n_eval;
  result.heldout_total_loss = total_sum / n_eval;
  result.report = metrics::evaluate(preds, gts);
  result.predictions = preds.size();
  result.heldout_instances = heldout_instances.size();

  if (checkpoint) {
    nlohmann::json header;
    header["format"] = "polyseq-checkpoint";
    header["encoder_variant"] = std::string(nn::to_string(cfg.model.head.variant));
    header["grid"] = cfg.model.head.grid;
    header["channels"] = cfg.model.head.channels;
    header["heads"] = cfg.model.head.heads;
    header["decoder_blocks"] = cfg.model.head.decoder_blocks;
    header["queries"] = cfg.model.head.queries;
    header["ffn_hidden"] = cfg.model.head.ffn();
    header["encoder_layers"] = cfg.model.head.encoder_layers;
    header["weight_convs"] = cfg.model.head.weight_convs;
    header["stem_layers"] = cfg.model.stem_layers;
    header["seed"] = cfg.seed;
    store.save(*checkpoint, header.dump());
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace polyseq::experiment
