#pragma once

// Deliberately naive reference implementations used to cross-check the
// production code: plain lists, explicit loops, no shared helpers.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "polyseq/metrics.hpp"
#include "polyseq/nn/gradcheck.hpp"

namespace polyseq::oracles {

/// probs[m][c]; tokens has M entries of which the first k are grid cells.
double naive_bidirectional_loss(const std::vector<int>& tokens, int k, const std::vector<std::vector<double>>& probs,
                                int grid);
double naive_exhaustive_loss(const std::vector<int>& tokens, int k, const std::vector<std::vector<double>>& probs);

/// Assignment pred -> gt index (or none) chosen by enumerating every one-to-one
/// assignment and keeping the best one in greedy (score-ordered) priority.
std::vector<std::optional<std::size_t>> brute_force_matching(const std::vector<metrics::PredInstance>& preds,
                                                             const std::vector<metrics::GtInstance>& gts,
                                                             double threshold, int resolution);

/// 101-point interpolated AP from (score, is_tp) pairs by direct definition.
double naive_average_precision(std::vector<std::pair<double, bool>> detections, std::size_t total_gt);

struct NamedCheck {
  std::string name;
  nn::GradCheckResult result;
};

/// Finite-difference check of every autodiff op on tiny random inputs. Each
/// op's output is reduced through a fixed random projection so a fault in one
/// op does not disturb the others.
std::vector<NamedCheck> op_gradient_checks(std::uint64_t seed);

/// Finite-difference check of stem + polygon head (hierarchical) + every loss
/// at d=16, G=8, M=6 on a batch of two crops.
nn::GradCheckResult full_model_gradient_check(std::uint64_t seed, std::size_t max_coords = 200);

}  // namespace polyseq::oracles
