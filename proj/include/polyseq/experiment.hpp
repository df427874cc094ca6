#pragma once

// Toy training and evaluation of the polygon head on synthetic buildings.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "polyseq/dataio.hpp"
#include "polyseq/metrics.hpp"
#include "polyseq/nn/toy_model.hpp"

namespace polyseq::experiment {

struct ToyExperimentConfig {
  nn::ToyModelConfig model;
  polyloss::LossWeights weights;
  polyloss::FocalParams focal;
  nn::AdamWParams optimizer{1e-3, 1e-4};
  dataio::SynthSpec train_corpus;
  dataio::SynthSpec heldout_corpus;
  int steps = 1200;
  int positives_per_batch = 8;
  int negatives_per_batch = 2;
  double lr_drop_at = 0.75;   // fraction of steps after which lr is divided by 10
  int final_window = 100;     // trailing steps averaged into the final training loss
  double eval_margin = 0.15;  // proposal = GT box grown by this fraction plus one pixel per side
  std::uint64_t seed = 0;

  /// Desk-scale defaults: G=12, d=16, H=4, N=2, M=8, 500 training images, 1500 steps.
  static ToyExperimentConfig desk_default();
};

struct LossRecord {
  int step = 0;
  nn::LossBreakdown loss;
};

struct ToyExperimentResult {
  std::vector<LossRecord> curve;
  nn::LossBreakdown final_train;  // mean over the trailing window
  double heldout_sequence_loss = 0.0;
  double heldout_total_loss = 0.0;
  metrics::MetricReport report;
  std::size_t predictions = 0;
  std::size_t heldout_instances = 0;
  double seconds = 0.0;
};

/// Trains from scratch and evaluates on the held-out corpus. Bit-reproducible
/// for a fixed config on one thread. Writes a checkpoint when `checkpoint` is set.
ToyExperimentResult run_toy_experiment(const ToyExperimentConfig& cfg,
                                       const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Proposal used at evaluation time for a ground-truth box.
geometry::BBox eval_proposal(const geometry::BBox& gt, double margin);

std::string loss_curve_csv(const std::vector<LossRecord>& curve);

}  // namespace polyseq::experiment
