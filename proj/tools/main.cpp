#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cli_common.hpp"
#include "polyseq/dataio.hpp"
#include "polyseq/experiment.hpp"
#include "polyseq/kernels.hpp"
#include "polyseq/metrics.hpp"
#include "polyseq/report_json.hpp"

namespace fs = std::filesystem;
using namespace polyseq;

namespace {

struct EvalArgs {
  fs::path gt, pred;
  std::string format = "json";
  std::optional<fs::path> out;
  int resolution = geometry::kDefaultIouResolution;
  int mta_samples = 128;
  double pairing = 0.5;
  std::optional<double> default_score;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a, int threads) {
  const std::string gt_bytes = dataio::read_file(a.gt);
  const std::string pred_bytes = dataio::read_file(a.pred);
  const dataio::CocoDoc gt_doc = dataio::parse_coco(gt_bytes);
  const auto gts = dataio::gt_instances(gt_doc);
  const auto preds = dataio::parse_predictions(pred_bytes, a.default_score);

  metrics::SuiteOptions opt;
  opt.resolution = a.resolution;
  opt.mta_samples = a.mta_samples;
  opt.pairing_threshold = a.pairing;
  opt.threads = threads;
  const metrics::MetricReport r = metrics::evaluate(preds, gts, opt);
  if (!r.n_ratio || !r.c_iou || !r.mta) {
    std::cerr << "warning: no prediction matched a ground-truth instance; polygon metrics are null\n";
  }

  if (a.format == "csv") {
    cli::emit(metrics::report_csv_header() + "\n" + metrics::report_csv_row(r) + "\n", a.out);
  } else {
    nlohmann::json j = metrics::report_to_json(r);
    j["meta"] = cli::make_meta(a.seed, {{"gt", cli::sha256_hex(gt_bytes)}, {"pred", cli::sha256_hex(pred_bytes)}});
    cli::emit(j.dump(2) + "\n", a.out);
  }
  return cli::kExitOk;
}

struct TrainArgs {
  std::string variant = "hierarchical";
  int grid = 20, channels = 32, heads = 4, blocks = 8, queries = 12, weight_convs = 4, encoder_layers = 1;
  int steps = 300, images = 64, heldout = 16, stem = 3;
  int positives = 8, negatives = 2;
  double lr = 1e-3, wd = 1e-4;
  double lambda_cls = 1.0, lambda_bbox = 1.0, lambda_poly = 1.0;
  double alpha = 2.0, gamma = 4.0;
  std::uint64_t seed = 0;
  fs::path out_dir;
};

nlohmann::json breakdown_json(const nn::LossBreakdown& b) {
  return {{"total", b.total}, {"cls", b.cls},       {"bbox", b.bbox},
          {"vertex", b.vertex}, {"edge", b.edge}, {"sequence", b.sequence}};
}

int cmd_train_toy(const TrainArgs& a) {
  experiment::ToyExperimentConfig cfg = experiment::ToyExperimentConfig::desk_default();
  auto& h = cfg.model.head;
  h.variant = nn::parse_encoder_variant(a.variant);
  h.grid = a.grid;
  h.channels = a.channels;
  h.heads = a.heads;
  h.decoder_blocks = a.blocks;
  h.queries = a.queries;
  h.weight_convs = a.weight_convs;
  h.encoder_layers = a.encoder_layers;
  h.validate();
  cfg.model.stem_layers = a.stem;
  cfg.steps = a.steps;
  cfg.positives_per_batch = a.positives;
  cfg.negatives_per_batch = a.negatives;
  cfg.train_corpus.images = a.images;
  cfg.heldout_corpus.images = a.heldout;
  cfg.optimizer.lr = a.lr;
  cfg.optimizer.weight_decay = a.wd;
  cfg.weights = {a.lambda_cls, a.lambda_bbox, a.lambda_poly};
  cfg.focal = {a.alpha, a.gamma};
  cfg.seed = a.seed;
  if (cfg.steps <= 0) throw std::invalid_argument("--steps must be positive");

  fs::create_directories(a.out_dir);
  const experiment::ToyExperimentResult res = run_toy_experiment(cfg, a.out_dir / "checkpoint.bin");
  dataio::write_file(a.out_dir / "loss_curve.csv", experiment::loss_curve_csv(res.curve));

  nlohmann::json report = metrics::report_to_json(res.report);
  report["final_train_loss"] = breakdown_json(res.final_train);
  report["heldout_sequence_loss"] = res.heldout_sequence_loss;
  report["heldout_total_loss"] = res.heldout_total_loss;
  report["predictions"] = res.predictions;
  report["heldout_instances"] = res.heldout_instances;
  report["meta"] = cli::make_meta(a.seed);
  report["meta"]["variant"] = a.variant;
  dataio::write_file(a.out_dir / "report.json", report.dump(2) + "\n");
  char buf[128];
  std::snprintf(buf, sizeof buf, "trained %d steps in %.1f s\n", cfg.steps, res.seconds);
  std::cerr << buf;
  return cli::kExitOk;
}

struct SynthArgs {
  dataio::SynthSpec spec;
  std::string families = "rect,rotated,lshape";
  fs::path out_dir;
};

int cmd_gen_synth(SynthArgs a, int threads) {
  a.spec.axis_rect = a.spec.rotated_rect = a.spec.l_shape = false;
  std::stringstream ss(a.families);
  for (std::string f; std::getline(ss, f, ',');) {
    if (f == "rect") a.spec.axis_rect = true;
    else if (f == "rotated") a.spec.rotated_rect = true;
    else if (f == "lshape") a.spec.l_shape = true;
    else throw std::invalid_argument("unknown shape family '" + f + "' (expected rect, rotated, lshape)");
  }
  a.spec.validate();
  const dataio::SynthCorpus corpus = dataio::gen_synthetic(a.spec, threads);
  fs::create_directories(a.out_dir / "images");
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    dataio::write_pgm(a.out_dir / "images" / corpus.doc.images[i].file_name, corpus.images[i]);
  }
  dataio::write_file(a.out_dir / "annotations.json", dataio::serialize_coco(corpus.doc));
  return cli::kExitOk;
}

std::array<double, 4> rings_bbox(const std::vector<std::vector<double>>& rings) {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& r : rings) {
    for (std::size_t i = 0; i + 1 < r.size(); i += 2) {
      x0 = std::min(x0, r[i]);
      x1 = std::max(x1, r[i]);
      y0 = std::min(y0, r[i + 1]);
      y1 = std::max(y1, r[i + 1]);
    }
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

int cmd_simplify(const fs::path& in, double epsilon, const std::optional<fs::path>& out) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("--epsilon must be >= 0");
  dataio::CocoDoc doc = dataio::parse_coco(dataio::read_file(in));
  for (auto& ann : doc.annotations) {
    bool changed = false;
    for (auto& ring : ann.segmentation) {
      std::vector<geometry::Vertex2> pts;
      for (std::size_t i = 0; i + 1 < ring.size(); i += 2) pts.push_back({ring[i], ring[i + 1]});
      pts = geometry::dedupe_ring(pts);
      if (!geometry::is_valid_ring(pts)) continue;
      const geometry::Polygon p(pts);
      const geometry::Polygon s = geometry::simplify_polygon(p, epsilon);
      if (s == p) continue;
      ring = s.to_flat();
      changed = true;
    }
    if (!changed) continue;
    ann.bbox = rings_bbox(ann.segmentation);
    if (ann.extra.contains("area")) ann.extra["area"] = std::abs(geometry::signed_area(dataio::annotation_polygon(ann)));
  }
  cli::emit(dataio::serialize_coco(doc) + "\n", out);
  return cli::kExitOk;
}

int cmd_polygonize(const std::vector<fs::path>& inputs, int threshold, double epsilon,
                   const std::optional<fs::path>& out) {
  if (threshold < 0 || threshold > 255) throw std::invalid_argument("--threshold must be in [0, 255]");
  dataio::CocoDoc doc;
  doc.categories = nlohmann::json::array({{{"id", 1}, {"name", "building"}}});
  std::int64_t ann_id = 1;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const dataio::GrayImage img = dataio::read_pgm(inputs[i]);
    const std::int64_t image_id = static_cast<std::int64_t>(i) + 1;
    doc.images.push_back({image_id, img.width, img.height, inputs[i].filename().string()});
    geometry::RasterMask mask(img.width, img.height);
    for (int r = 0; r < img.height; ++r) {
      for (int c = 0; c < img.width; ++c) mask.set(r, c, img.at(r, c) >= threshold);
    }
    for (const geometry::Polygon& ring : geometry::marching_squares(mask)) {
      if (geometry::signed_area(ring) <= 0.0) continue;
      const geometry::Polygon p = epsilon > 0.0 ? geometry::simplify_polygon(ring, epsilon) : ring;
      doc.annotations.push_back(dataio::make_annotation(ann_id++, image_id, p));
    }
  }
  cli::emit(dataio::serialize_coco(doc) + "\n", out);
  return cli::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polyseq: polygon sequence losses, metrics and toy training"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads (1 = bit-stable ordering)")->check(CLI::PositiveNumber);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("--gt", ea.gt, "Ground-truth COCO file")->required()->check(CLI::ExistingFile);
  eval->add_option("--pred", ea.pred, "Prediction file (array or COCO document with scores)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--format", ea.format)->check(CLI::IsMember({"json", "csv"}));
  eval->add_option("--out", ea.out, "Write the report here instead of stdout");
  eval->add_option("--resolution", ea.resolution, "IoU raster resolution")->check(CLI::PositiveNumber);
  eval->add_option("--mta-samples", ea.mta_samples)->check(CLI::Range(4, 1 << 16));
  eval->add_option("--pairing-iou", ea.pairing)->check(CLI::Range(0.0, 1.0));
  eval->add_option("--default-score", ea.default_score, "Score for predictions that carry none");
  eval->add_option("--seed", ea.seed);

  cli::SelftestOptions so;
  std::optional<fs::path> selftest_out;
  auto* selftest = app.add_subcommand("selftest", "Run the built-in oracle checks");
  selftest->add_option("--seed", so.seed);
  selftest->add_option("--corrupt-grad", so.corrupt_op, "Double the backward gradient of this op");
  selftest->add_option("--out", selftest_out);

  TrainArgs ta;
  auto* train = app.add_subcommand("train-toy", "Train the toy model on a synthetic corpus");
  train->add_option("--variant", ta.variant);
  train->add_option("--grid", ta.grid);
  train->add_option("--channels", ta.channels);
  train->add_option("--heads", ta.heads);
  train->add_option("--blocks", ta.blocks);
  train->add_option("--queries", ta.queries);
  train->add_option("--weight-convs", ta.weight_convs);
  train->add_option("--encoder-layers", ta.encoder_layers);
  train->add_option("--stem-layers", ta.stem);
  train->add_option("--steps", ta.steps);
  train->add_option("--images", ta.images)->check(CLI::PositiveNumber);
  train->add_option("--heldout-images", ta.heldout)->check(CLI::PositiveNumber);
  train->add_option("--positives", ta.positives)->check(CLI::PositiveNumber);
  train->add_option("--negatives", ta.negatives)->check(CLI::NonNegativeNumber);
  train->add_option("--lr", ta.lr)->check(CLI::NonNegativeNumber);
  train->add_option("--weight-decay", ta.wd)->check(CLI::NonNegativeNumber);
  train->add_option("--lambda-cls", ta.lambda_cls);
  train->add_option("--lambda-bbox", ta.lambda_bbox);
  train->add_option("--lambda-poly", ta.lambda_poly);
  train->add_option("--alpha", ta.alpha);
  train->add_option("--gamma", ta.gamma);
  train->add_option("--seed", ta.seed);
  train->add_option("--out-dir", ta.out_dir)->required();

  SynthArgs sa;
  auto* synth = app.add_subcommand("gen-synth", "Generate a synthetic building corpus");
  synth->add_option("--out-dir", sa.out_dir)->required();
  synth->add_option("--images", sa.spec.images);
  synth->add_option("--width", sa.spec.width);
  synth->add_option("--height", sa.spec.height);
  synth->add_option("--min-count", sa.spec.min_count);
  synth->add_option("--max-count", sa.spec.max_count);
  synth->add_option("--min-size", sa.spec.min_size);
  synth->add_option("--max-size", sa.spec.max_size);
  synth->add_option("--gap", sa.spec.gap);
  synth->add_option("--families", sa.families, "Comma list of rect, rotated, lshape");
  synth->add_option("--seed", sa.spec.seed);

  fs::path simplify_in;
  double epsilon = 0.0;
  std::optional<fs::path> simplify_out;
  auto* simplify = app.add_subcommand("simplify", "Douglas-Peucker every ring of a COCO file");
  simplify->add_option("--in", simplify_in)->required()->check(CLI::ExistingFile);
  simplify->add_option("--epsilon", epsilon)->required();
  simplify->add_option("--out", simplify_out);

  std::vector<fs::path> masks;
  int threshold = 128;
  double poly_eps = 0.0;
  std::optional<fs::path> poly_out;
  auto* polygonize = app.add_subcommand("polygonize", "Trace building outlines in PGM masks");
  polygonize->add_option("masks", masks, "PGM mask files")->required()->check(CLI::ExistingFile);
  polygonize->add_option("--threshold", threshold, "Pixels >= threshold are foreground");
  polygonize->add_option("--epsilon", poly_eps, "Simplify traced rings");
  polygonize->add_option("--out", poly_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitValidation;
  }

  kernels::set_num_threads(threads);
  try {
    if (*eval) return cmd_eval(ea, threads);
    if (*selftest) {
      bool passed = false;
      const nlohmann::json report = cli::run_selftest(so, passed);
      cli::emit(report.dump(2) + "\n", selftest_out);
      if (!passed) {
        std::string failed;
        for (const auto& c : report["checks"]) {
          if (!c["passed"].get<bool>()) failed += " " + c["name"].get<std::string>();
        }
        std::cerr << "selftest failed:" << failed << "\n";
        return cli::kExitCheckFailed;
      }
      return cli::kExitOk;
    }
    if (*train) return cmd_train_toy(ta);
    if (*synth) return cmd_gen_synth(sa, threads);
    if (*simplify) return cmd_simplify(simplify_in, epsilon, simplify_out);
    if (*polygonize) return cmd_polygonize(masks, threshold, poly_eps, poly_out);
  } catch (const cli::CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return cli::kExitCheckFailed;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitValidation;
  }
  return cli::kExitValidation;
}
