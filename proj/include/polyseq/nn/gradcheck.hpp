#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "polyseq/nn/tensor.hpp"

namespace polyseq::nn {

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t max_coords = 200;  // sampled uniformly across all inputs when exceeded
  std::uint64_t seed = 0;
  /// Coordinates whose one-sided differences disagree by more than this
  /// (relative) sit on a kink or a discontinuity and are skipped.
  double kink_tolerance = 1e-2;
  /// Floor on the denominator of the relative error.
  double abs_floor = 1e-4;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst;  // "<input index>[<coordinate>]"
};

/// Compares the gradient of the scalar produced by `loss` with central
/// differences on the inputs. `loss` must rebuild the graph from the current
/// input values on every call. Relative error is |analytic - numeric| /
/// max(|numeric|, abs_floor).
GradCheckResult finite_difference_check(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                        const GradCheckOptions& options = {});

}  // namespace polyseq::nn
