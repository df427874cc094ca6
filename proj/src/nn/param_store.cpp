#include "polyseq/nn/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace polyseq::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Tensor ParamStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  Tensor t = Tensor::from(std::move(shape), std::move(init), true);
  t.node()->op = "param";
  param_index_[name] = params_.size();
  params_.push_back({name, t, std::vector<double>(t.size(), 0.0), std::vector<double>(t.size(), 0.0)});
  return t;
}

std::span<double> ParamStore::add_buffer(const std::string& name, Shape shape, double fill) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  const std::size_t n = numel(shape);
  buffer_index_[name] = buffers_.size();
  buffers_.push_back({name, std::move(shape), std::vector<double>(n, fill)});
  return buffers_.back().data;
}

const Tensor& ParamStore::param(const std::string& name) const {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
  return params_[it->second].tensor;
}

std::span<double> ParamStore::buffer(const std::string& name) {
  auto it = buffer_index_.find(name);
  if (it == buffer_index_.end()) throw std::out_of_range("ParamStore: no buffer " + name);
  return buffers_[it->second].data;
}

bool ParamStore::contains(const std::string& name) const {
  return param_index_.count(name) != 0 || buffer_index_.count(name) != 0;
}

std::vector<std::string> ParamStore::parameter_names() const {
  std::vector<std::string> out;
  for (const Param& p : params_) out.push_back(p.name);
  return out;
}

std::vector<Tensor> ParamStore::parameters() const {
  std::vector<Tensor> out;
  for (const Param& p : params_) out.push_back(p.tensor);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.tensor.size();
  return n;
}

void ParamStore::zero_grad() {
  for (Param& p : params_) p.tensor.zero_grad();
}

void ParamStore::adamw_step(const AdamWParams& opt) {
  ++step_;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step_));
  for (Param& p : params_) {
    std::span<const double> g = p.tensor.grad();
    std::span<double> w = p.tensor.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      p.m[i] = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * gi;
      p.v[i] = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * gi * gi;
      const double mhat = p.m[i] / c1;
      const double vhat = p.v[i] / c2;
      w[i] -= opt.lr * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * w[i]);
    }
  }
}

void ParamStore::save(const std::filesystem::path& path, const std::string& header_json) const {
  nlohmann::json header = header_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(header_json);
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  auto entry = [&](const std::string& name, const Shape& shape, const char* kind) {
    const std::size_t bytes = numel(shape) * sizeof(double);
    manifest.push_back({{"name", name}, {"kind", kind}, {"shape", shape}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  };
  for (const Param& p : params_) entry(p.name, p.tensor.shape(), "param");
  for (const Buffer& b : buffers_) entry(b.name, b.shape, "buffer");
  header["tensors"] = manifest;
  header["optimizer_steps"] = step_;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  auto write = [&](std::span<const double> data) {
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  };
  for (const Param& p : params_) write(p.tensor.values());
  for (const Buffer& b : buffers_) write(b.data);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::string ParamStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint has no header: " + path.string());
  nlohmann::json header = nlohmann::json::parse(line);
  const std::streamoff data_start = in.tellg();
  const auto& manifest = header.at("tensors");
  if (manifest.size() != params_.size() + buffers_.size()) {
    throw std::runtime_error("checkpoint tensor count differs from the model");
  }
  for (const auto& e : manifest) {
    const std::string name = e.at("name");
    const Shape shape = e.at("shape").get<Shape>();
    std::span<double> dst;
    if (auto it = param_index_.find(name); it != param_index_.end()) {
      if (params_[it->second].tensor.shape() != shape) throw std::runtime_error("checkpoint shape mismatch for " + name);
      dst = params_[it->second].tensor.mutable_values();
    } else if (auto jt = buffer_index_.find(name); jt != buffer_index_.end()) {
      if (buffers_[jt->second].shape != shape) throw std::runtime_error("checkpoint shape mismatch for " + name);
      dst = buffers_[jt->second].data;
    } else {
      throw std::runtime_error("checkpoint holds unknown tensor " + name);
    }
    in.seekg(data_start + static_cast<std::streamoff>(e.at("offset").get<std::size_t>()));
    in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size_bytes()));
    if (!in) throw std::runtime_error("checkpoint truncated at " + name);
  }
  step_ = header.value("optimizer_steps", std::uint64_t{0});
  header.erase("tensors");
  header.erase("optimizer_steps");
  return header.dump();
}

namespace init {

std::vector<double> xavier_uniform(std::size_t count, std::size_t fan_in, std::size_t fan_out,
                                   std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> out(count);
  for (double& v : out) v = dist(rng);
  return out;
}

std::vector<double> normal(std::size_t count, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(count);
  for (double& v : out) v = dist(rng);
  return out;
}

}  // namespace init

}  // namespace polyseq::nn
