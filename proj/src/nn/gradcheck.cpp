#include "polyseq/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace polyseq::nn {

GradCheckResult finite_difference_check(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                        const GradCheckOptions& options) {
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) throw std::invalid_argument("finite_difference_check: input does not require grad");
    t.zero_grad();
  }
  const Tensor root = loss();
  root.backward();
  const double f0 = root.item();

  std::vector<std::vector<double>> analytic;
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto g = inputs[i].grad();
    analytic.emplace_back(g.begin(), g.end());
    analytic.back().resize(inputs[i].size(), 0.0);
    for (std::size_t j = 0; j < inputs[i].size(); ++j) coords.emplace_back(i, j);
  }
  if (coords.size() > options.max_coords) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  for (const auto& [i, j] : coords) {
    double& x = inputs[i].mutable_values()[j];
    const double saved = x;
    x = saved + options.eps;
    const double fp = loss().item();
    x = saved - options.eps;
    const double fm = loss().item();
    x = saved;

    const double forward = (fp - f0) / options.eps;
    const double backward = (f0 - fm) / options.eps;
    const double numeric = (fp - fm) / (2.0 * options.eps);
    const double spread = std::abs(forward - backward);
    if (spread > options.kink_tolerance * std::max(1.0, std::abs(numeric))) {
      ++result.skipped;
      continue;
    }
    ++result.checked;
    const double rel = std::abs(analytic[i][j] - numeric) / std::max(std::abs(numeric), options.abs_floor);
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst = std::to_string(i) + "[" + std::to_string(j) + "]";
    }
  }
  return result;
}

}  // namespace polyseq::nn
