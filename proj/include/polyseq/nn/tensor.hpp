#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// tensors of 64-bit floats.
//
// A Tensor is a cheap handle onto a graph node. Operations build new nodes
// that remember their parents and a backward closure; Tensor::backward() on a
// scalar walks the graph in reverse topological order and accumulates
// gradients into every node that requires them. A graph is single-threaded;
// independent graphs may be built on different threads.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace polyseq::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Writable view; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values() { return node_->value; }
  /// Empty span until a backward pass has reached this node.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  void zero_grad();

  /// Seeds d(self)/d(self) = 1 on a single-element tensor and back-propagates.
  void backward() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace debug {
/// Multiplies the gradient flowing backwards through every node of operation
/// `op` by `factor`. Used by self-tests to prove gradient checks catch faults.
/// An empty name disables the fault.
void set_grad_fault(const std::string& op, double factor);
}  // namespace debug

}  // namespace polyseq::nn
