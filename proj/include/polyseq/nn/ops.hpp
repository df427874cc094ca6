#pragma once

#include <span>
#include <vector>

#include "polyseq/geometry.hpp"
#include "polyseq/nn/tensor.hpp"

namespace polyseq::nn {

// Elementwise arithmetic with numpy-style broadcasting (trailing alignment).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// a[..., n, k] x b[k, m] or b[..., k, m] with matching leading dimensions.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Softmax over the last axis.
Tensor softmax(const Tensor& x);
/// Layer normalization over the last axis with per-feature gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Running statistics owned by the caller (usually a ParamStore buffer).
struct BatchNormState {
  std::span<double> running_mean;
  std::span<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of x[N, C, H, W]. Training mode uses batch
/// statistics and updates the running averages; inference mode applies the
/// running averages as a fixed affine map.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    const BatchNormState& state, bool training);

/// Stride-1 convolution of x[N, Cin, H, W] with w[Cout, Cin, k, k], k in {1, 3},
/// zero padding k/2, bias b[Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Rows [start, start + count) of the leading axis.
Tensor slice0(const Tensor& x, std::size_t start, std::size_t count);

/// Bilinear crop-and-resize of feature[C, H, W] (pixel (r, c) centred at
/// (c + 0.5, r + 0.5)) to [C, out, out], averaging sampling x sampling points
/// per bin. Throws if the box misses the feature extent.
Tensor roi_align(const Tensor& feature, const geometry::BBox& box, std::size_t out,
                 std::size_t sampling = 2);

/// Scalar node whose value and gradient with respect to `x` were computed
/// outside the graph (used to splice the polygon losses in).
Tensor external_loss(const Tensor& x, double value, std::vector<double> grad);

}  // namespace polyseq::nn
