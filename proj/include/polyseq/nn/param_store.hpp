#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "polyseq/nn/tensor.hpp"

namespace polyseq::nn {

struct AdamWParams {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named trainable tensors, untrained buffers (batch-norm statistics) and the
/// AdamW moments for every trainable tensor.
class ParamStore {
 public:
  /// Registers a trainable leaf. Names must be unique.
  Tensor add(const std::string& name, Shape shape, std::vector<double> init);
  std::span<double> add_buffer(const std::string& name, Shape shape, double fill);

  const Tensor& param(const std::string& name) const;
  std::span<double> buffer(const std::string& name);
  bool contains(const std::string& name) const;

  std::vector<std::string> parameter_names() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  void zero_grad();
  /// One decoupled-weight-decay Adam update using the current gradients.
  void adamw_step(const AdamWParams& opt);
  std::uint64_t steps() const { return step_; }

  /// Writes `header` (an object) extended with the tensor manifest as one JSON
  /// line, followed by the raw little-endian doubles of every tensor.
  void save(const std::filesystem::path& path, const std::string& header_json) const;
  /// Overwrites every registered tensor from a checkpoint; names and shapes
  /// must match exactly. Returns the header object.
  std::string load(const std::filesystem::path& path);

 private:
  struct Param {
    std::string name;
    Tensor tensor;
    std::vector<double> m;
    std::vector<double> v;
  };
  struct Buffer {
    std::string name;
    Shape shape;
    std::vector<double> data;
  };
  std::vector<Param> params_;
  std::vector<Buffer> buffers_;
  std::unordered_map<std::string, std::size_t> param_index_;
  std::unordered_map<std::string, std::size_t> buffer_index_;
  std::uint64_t step_ = 0;
};

namespace init {
/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
std::vector<double> xavier_uniform(std::size_t count, std::size_t fan_in, std::size_t fan_out,
                                   std::mt19937_64& rng);
std::vector<double> normal(std::size_t count, double stddev, std::mt19937_64& rng);
}  // namespace init

}  // namespace polyseq::nn
