#include "polyseq/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "polyseq/kernels.hpp"

namespace polyseq::nn {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

Tensor make_node(const char* op, Shape shape, std::vector<std::shared_ptr<Node>> parents) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value.assign(numel(shape), 0.0);
  n->shape = std::move(shape);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) n->parents = std::move(parents);
  return Tensor(std::move(n));
}

// Strides of `in` viewed with the broadcast output rank; broadcast axes get 0.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t ai = in.size() - 1 - i;
    const std::size_t oi = out.size() - 1 - i;
    strides[oi] = in[ai] == 1 ? 0 : stride;
    stride *= in[ai];
  }
  return strides;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      shape_error(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = numel(out);
  const std::size_t rank = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const char* op, BinOp kind, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  Tensor out = make_node(op, out_shape, {a.node_ptr(), b.node_ptr()});
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  auto& ov = out.node()->value;

  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < ov.size(); ++i) {
      ov[i] = kind == BinOp::kAdd ? av[i] + bv[i] : kind == BinOp::kSub ? av[i] - bv[i] : av[i] * bv[i];
    }
  } else {
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      ov[i] = kind == BinOp::kAdd ? av[ia] + bv[ib] : kind == BinOp::kSub ? av[ia] - bv[ib] : av[ia] * bv[ib];
    });
  }

  if (out.requires_grad()) {
    out.node()->backward = [kind, out_shape](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const bool ga = pa.requires_grad;
      const bool gb = pb.requires_grad;
      if (ga) pa.ensure_grad();
      if (gb) pb.ensure_grad();
      const double sign_b = kind == BinOp::kSub ? -1.0 : 1.0;
      auto step = [&](std::size_t i, std::size_t ia, std::size_t ib) {
        const double g = self.grad[i];
        if (kind == BinOp::kMul) {
          if (ga) pa.grad[ia] += g * pb.value[ib];
          if (gb) pb.grad[ib] += g * pa.value[ia];
        } else {
          if (ga) pa.grad[ia] += g;
          if (gb) pb.grad[ib] += sign_b * g;
        }
      };
      if (pa.shape == pb.shape) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) step(i, i, i);
      } else {
        for_each_broadcast(out_shape, broadcast_strides(pa.shape, out_shape),
                           broadcast_strides(pb.shape, out_shape), step);
      }
    };
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinOp::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinOp::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinOp::kMul, a, b); }

Tensor scale(const Tensor& x, double factor) {
  Tensor out = make_node("scale", x.shape(), {x.node_ptr()});
  const auto& xv = x.node()->value;
  auto& ov = out.node()->value;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor;
  if (out.requires_grad()) {
    out.node()->backward = [factor](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
    };
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) shape_error("matmul", "operands need rank >= 2");
  const std::size_t n = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t m = bs[bs.size() - 1];
  if (bs[bs.size() - 2] != k) {
    shape_error("matmul", "inner dimensions differ: " + shape_str(as) + " x " + shape_str(bs));
  }
  const bool shared_b = bs.size() == 2;
  if (!shared_b && (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) {
    shape_error("matmul", "batch dimensions differ: " + shape_str(as) + " x " + shape_str(bs));
  }
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(m);
  Tensor out = make_node("matmul", out_shape, {a.node_ptr(), b.node_ptr()});
  const std::span<const double> av = a.values();
  const std::span<const double> bv = b.values();
  std::span<double> ov = out.node()->value;
  for (std::size_t bi = 0; bi < batch; ++bi) {
    kernels::gemm({n, m, k, kernels::Trans::kNo, kernels::Trans::kNo, false},
                  av.subspan(bi * n * k, n * k), shared_b ? bv : bv.subspan(bi * k * m, k * m),
                  ov.subspan(bi * n * m, n * m));
  }

  if (out.requires_grad()) {
    out.node()->backward = [n, k, m, batch, shared_b](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const std::span<const double> g = self.grad;
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const auto gi = g.subspan(bi * n * m, n * m);
        const std::span<const double> bvi =
            shared_b ? std::span<const double>(pb.value)
                     : std::span<const double>(pb.value).subspan(bi * k * m, k * m);
        if (pa.requires_grad) {
          pa.ensure_grad();
          // dA = dC * B^T
          kernels::gemm({n, k, m, kernels::Trans::kNo, kernels::Trans::kYes, true}, gi, bvi,
                        std::span<double>(pa.grad).subspan(bi * n * k, n * k));
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          // dB = A^T * dC
          auto dst = shared_b ? std::span<double>(pb.grad)
                              : std::span<double>(pb.grad).subspan(bi * k * m, k * m);
          kernels::gemm({k, m, n, kernels::Trans::kYes, kernels::Trans::kNo, true},
                        std::span<const double>(pa.value).subspan(bi * n * k, n * k), gi, dst);
        }
      }
    };
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_node("relu", x.shape(), {x.node_ptr()});
  const auto& xv = x.node()->value;
  auto& ov = out.node()->value;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 || std::isnan(xv[i]) ? xv[i] : 0.0;
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (p.value[i] > 0.0) p.grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = make_node("sigmoid", x.shape(), {x.node_ptr()});
  const auto& xv = x.node()->value;
  auto& ov = out.node()->value;
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const double v = xv[i];
    ov[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double s = self.value[i];
        p.grad[i] += self.grad[i] * s * (1.0 - s);
      }
    };
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) shape_error("softmax", "needs rank >= 1");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  Tensor out = make_node("softmax", x.shape(), {x.node_ptr()});
  const auto& xv = x.node()->value;
  auto& ov = out.node()->value;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = ov.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  if (out.requires_grad()) {
    out.node()->backward = [rows, cols](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * cols;
        const double* g = self.grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
        double* dst = p.grad.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += y[c] * (g[c] - dot);
      }
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t cols = x.shape().back();
  if (gamma.size() != cols || beta.size() != cols) {
    shape_error("layer_norm", "gain/bias length must equal last axis " + std::to_string(cols));
  }
  const std::size_t rows = x.size() / cols;
  Tensor out = make_node("layer_norm", x.shape(), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()});
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xv = x.node()->value;
  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  auto& ov = out.node()->value;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (in[c] - mu) * is;
      (*xhat)[r * cols + c] = h;
      ov[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  if (out.requires_grad()) {
    out.node()->backward = [rows, cols, xhat, inv_std](Node& self) {
      Node& px = *self.parents[0];
      Node& pg = *self.parents[1];
      Node& pb = *self.parents[2];
      if (pg.requires_grad) pg.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      if (px.requires_grad) px.ensure_grad();
      const double inv_n = 1.0 / static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* g = self.grad.data() + r * cols;
        const double* h = xhat->data() + r * cols;
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          if (pg.requires_grad) pg.grad[c] += g[c] * h[c];
          if (pb.requires_grad) pb.grad[c] += g[c];
          const double dh = g[c] * pg.value[c];
          mean_dh += dh;
          mean_dh_h += dh * h[c];
        }
        if (!px.requires_grad) continue;
        mean_dh *= inv_n;
        mean_dh_h *= inv_n;
        double* dst = px.grad.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
          const double dh = g[c] * pg.value[c];
          dst[c] += (*inv_std)[r] * (dh - mean_dh - h[c] * mean_dh_h);
        }
      }
    };
  }
  return out;
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    const BatchNormState& state, bool training) {
  if (x.rank() != 4) shape_error("batch_norm2d", "expects [N, C, H, W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.size() != c || beta.size() != c || state.running_mean.size() != c ||
      state.running_var.size() != c) {
    shape_error("batch_norm2d", "parameter length must equal channel count " + std::to_string(c));
  }
  Tensor out = make_node("batch_norm2d", x.shape(), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()});
  const auto& xv = x.node()->value;
  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  auto& ov = out.node()->value;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  const double count = static_cast<double>(n * hw);

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu = 0.0, var = 0.0;
    if (training) {
      for (std::size_t b = 0; b < n; ++b) {
        const double* in = xv.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) mu += in[i];
      }
      mu /= count;
      for (std::size_t b = 0; b < n; ++b) {
        const double* in = xv.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) var += (in[i] - mu) * (in[i] - mu);
      }
      var /= count;
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu;
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    (*inv_std)[ch] = is;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double h = (xv[off + i] - mu) * is;
        (*xhat)[off + i] = h;
        ov[off + i] = h * gv[ch] + bv[ch];
      }
    }
  }

  if (out.requires_grad()) {
    out.node()->backward = [n, c, hw, count, training, xhat, inv_std](Node& self) {
      Node& px = *self.parents[0];
      Node& pg = *self.parents[1];
      Node& pb = *self.parents[2];
      if (px.requires_grad) px.ensure_grad();
      if (pg.requires_grad) pg.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_g = 0.0, sum_gh = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t off = (b * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_g += self.grad[off + i];
            sum_gh += self.grad[off + i] * (*xhat)[off + i];
          }
        }
        if (pg.requires_grad) pg.grad[ch] += sum_gh;
        if (pb.requires_grad) pb.grad[ch] += sum_g;
        if (!px.requires_grad) continue;
        const double gam = pg.value[ch];
        const double is = (*inv_std)[ch];
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t off = (b * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            if (training) {
              px.grad[off + i] += gam * is *
                                  (self.grad[off + i] - sum_g / count - (*xhat)[off + i] * sum_gh / count);
            } else {
              px.grad[off + i] += gam * is * self.grad[off + i];
            }
          }
        }
      }
    };
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 4 || w.rank() != 4) {
    shape_error("conv2d", "expects x[N, C, H, W] and w[Cout, Cin, k, k], got " + shape_str(x.shape()) +
                              " and " + shape_str(w.shape()));
  }
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) shape_error("conv2d", "weight expects " + std::to_string(w.dim(1)) + " input channels, got " + std::to_string(cin));
  if (w.dim(3) != k || (k != 1 && k != 3)) shape_error("conv2d", "only 1x1 and 3x3 kernels are supported");
  if (b.size() != cout) shape_error("conv2d", "bias length must equal output channels");

  const std::size_t hw = h * wd;
  const std::size_t rows = cin * k * k;
  Tensor out = make_node("conv2d", {n, cout, h, wd}, {x.node_ptr(), w.node_ptr(), b.node_ptr()});
  auto cols = std::make_shared<std::vector<double>>();
  if (k == 3) cols->assign(n * rows * hw, 0.0);

  const std::span<const double> xv = x.values();
  const std::span<const double> wv = w.values();
  const auto& bv = b.node()->value;
  std::span<double> ov = out.node()->value;
  for (std::size_t bi = 0; bi < n; ++bi) {
    std::span<const double> src = xv.subspan(bi * cin * hw, cin * hw);
    if (k == 3) {
      std::span<double> col = std::span<double>(*cols).subspan(bi * rows * hw, rows * hw);
      kernels::im2col3x3(src, cin, h, wd, col);
      src = col;
    }
    std::span<double> dst = ov.subspan(bi * cout * hw, cout * hw);
    kernels::gemm({cout, hw, rows, kernels::Trans::kNo, kernels::Trans::kNo, false}, wv, src, dst);
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t i = 0; i < hw; ++i) dst[co * hw + i] += bv[co];
    }
  }

  if (out.requires_grad()) {
    out.node()->backward = [n, cin, h, wd, cout, k, hw, rows, cols](Node& self) {
      Node& px = *self.parents[0];
      Node& pw = *self.parents[1];
      Node& pb = *self.parents[2];
      if (pw.requires_grad) pw.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      if (px.requires_grad) px.ensure_grad();
      std::vector<double> dcol(k == 3 ? rows * hw : 0);
      for (std::size_t bi = 0; bi < n; ++bi) {
        const auto g = std::span<const double>(self.grad).subspan(bi * cout * hw, cout * hw);
        const std::span<const double> src =
            k == 3 ? std::span<const double>(*cols).subspan(bi * rows * hw, rows * hw)
                   : std::span<const double>(px.value).subspan(bi * cin * hw, cin * hw);
        if (pb.requires_grad) {
          for (std::size_t co = 0; co < cout; ++co) {
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += g[co * hw + i];
            pb.grad[co] += s;
          }
        }
        if (pw.requires_grad) {
          kernels::gemm({cout, rows, hw, kernels::Trans::kNo, kernels::Trans::kYes, true}, g, src,
                        pw.grad);
        }
        if (px.requires_grad) {
          auto dx = std::span<double>(px.grad).subspan(bi * cin * hw, cin * hw);
          if (k == 3) {
            kernels::gemm({rows, hw, cout, kernels::Trans::kYes, kernels::Trans::kNo, false},
                          pw.value, g, dcol);
            kernels::col2im3x3(dcol, cin, h, wd, dx);
          } else {
            kernels::gemm({rows, hw, cout, kernels::Trans::kYes, kernels::Trans::kNo, true},
                          pw.value, g, dx);
          }
        }
      }
    };
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_node("sum", {}, {x.node_ptr()});
  double s = 0.0;
  for (double v : x.values()) s += v;
  out.node()->value[0] = s;
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (double& g : p.grad) g += self.grad[0];
    };
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) shape_error("mean", "empty tensor");
  Tensor out = make_node("mean", {}, {x.node_ptr()});
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  out.node()->value[0] = s * inv;
  if (out.requires_grad()) {
    out.node()->backward = [inv](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (double& g : p.grad) g += self.grad[0] * inv;
    };
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    shape_error("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = make_node("reshape", std::move(shape), {x.node_ptr()});
  out.node()->value = x.node()->value;
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    };
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) shape_error("permute", "axis list length differs from rank");
  std::vector<bool> used(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || used[a]) shape_error("permute", "axes are not a permutation");
    used[a] = true;
  }
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * x.dim(d);
  std::vector<std::size_t> gather_strides(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = x.dim(axes[d]);
    gather_strides[d] = in_strides[axes[d]];
  }
  // src_index[i] = position in x of output element i
  auto src_index = std::make_shared<std::vector<std::size_t>>(x.size());
  const std::vector<std::size_t> zero(rank, 0);
  for_each_broadcast(out_shape, gather_strides, zero,
                     [&](std::size_t i, std::size_t ia, std::size_t) { (*src_index)[i] = ia; });

  Tensor out = make_node("permute", out_shape, {x.node_ptr()});
  const auto& xv = x.node()->value;
  auto& ov = out.node()->value;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[(*src_index)[i]];
  if (out.requires_grad()) {
    out.node()->backward = [src_index](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[(*src_index)[i]] += self.grad[i];
    };
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) shape_error("concat", "axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const Tensor& t : parts) {
    if (t.rank() != first.size()) shape_error("concat", "rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && t.dim(d) != first[d]) {
        shape_error("concat", "shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(first));
      }
    }
    out_shape[axis] += t.dim(axis);
    parents.push_back(t.node_ptr());
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  Tensor out = make_node("concat", out_shape, parents);
  auto& ov = out.node()->value;
  const std::size_t out_row = out_shape[axis] * inner;
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& t : parts) {
    offsets.push_back(offset);
    const std::size_t row = t.dim(axis) * inner;
    const auto& tv = t.node()->value;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(tv.begin() + static_cast<std::ptrdiff_t>(o * row),
                tv.begin() + static_cast<std::ptrdiff_t>((o + 1) * row),
                ov.begin() + static_cast<std::ptrdiff_t>(o * out_row + offset));
    }
    offset += row;
  }
  if (out.requires_grad()) {
    out.node()->backward = [outer, out_row, offsets](Node& self) {
      for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
        Node& p = *self.parents[pi];
        if (!p.requires_grad) continue;
        p.ensure_grad();
        const std::size_t row = p.value.size() / outer;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < row; ++i) p.grad[o * row + i] += self.grad[o * out_row + offsets[pi] + i];
        }
      }
    };
  }
  return out;
}

Tensor slice0(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.rank() < 1 || start + count > x.dim(0)) shape_error("slice0", "range exceeds leading axis");
  Shape out_shape = x.shape();
  out_shape[0] = count;
  const std::size_t inner = x.size() / x.dim(0);
  Tensor out = make_node("slice0", out_shape, {x.node_ptr()});
  const auto& xv = x.node()->value;
  std::copy(xv.begin() + static_cast<std::ptrdiff_t>(start * inner),
            xv.begin() + static_cast<std::ptrdiff_t>((start + count) * inner), out.node()->value.begin());
  if (out.requires_grad()) {
    const std::size_t base = start * inner;
    out.node()->backward = [base](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[base + i] += self.grad[i];
    };
  }
  return out;
}

Tensor roi_align(const Tensor& feature, const geometry::BBox& box, std::size_t out_size,
                 std::size_t sampling) {
  if (feature.rank() != 3) shape_error("roi_align", "expects feature[C, H, W], got " + shape_str(feature.shape()));
  if (out_size == 0 || sampling == 0) shape_error("roi_align", "output size and sampling must be positive");
  if (!box.valid()) shape_error("roi_align", "box has no extent");
  const std::size_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  if (box.x1() <= 0.0 || box.y1() <= 0.0 || box.x0() >= static_cast<double>(w) ||
      box.y0() >= static_cast<double>(h)) {
    shape_error("roi_align", "box does not intersect the feature extent");
  }

  // One bilinear tap: up to four (index, weight) pairs into a single plane.
  struct Tap {
    std::size_t idx[4];
    double wgt[4];
  };
  const std::size_t bins = out_size * out_size;
  const std::size_t per_bin = sampling * sampling;
  auto taps = std::make_shared<std::vector<Tap>>(bins * per_bin);
  const double bin_w = box.w / static_cast<double>(out_size);
  const double bin_h = box.h / static_cast<double>(out_size);
  for (std::size_t gy = 0; gy < out_size; ++gy) {
    for (std::size_t gx = 0; gx < out_size; ++gx) {
      for (std::size_t sy = 0; sy < sampling; ++sy) {
        for (std::size_t sx = 0; sx < sampling; ++sx) {
          const double y = box.y0() + (static_cast<double>(gy) + (sy + 0.5) / sampling) * bin_h;
          const double x = box.x0() + (static_cast<double>(gx) + (sx + 0.5) / sampling) * bin_w;
          Tap& t = (*taps)[(gy * out_size + gx) * per_bin + sy * sampling + sx];
          std::fill(std::begin(t.wgt), std::end(t.wgt), 0.0);
          std::fill(std::begin(t.idx), std::end(t.idx), 0);
          // Index space: pixel centre of (r, c) sits at (c, r).
          double u = x - 0.5, v = y - 0.5;
          if (v < -1.0 || v > static_cast<double>(h) || u < -1.0 || u > static_cast<double>(w)) continue;
          u = std::clamp(u, 0.0, static_cast<double>(w - 1));
          v = std::clamp(v, 0.0, static_cast<double>(h - 1));
          const auto c0 = static_cast<std::size_t>(std::floor(u));
          const auto r0 = static_cast<std::size_t>(std::floor(v));
          const std::size_t c1 = std::min(c0 + 1, w - 1);
          const std::size_t r1 = std::min(r0 + 1, h - 1);
          const double fu = u - static_cast<double>(c0);
          const double fv = v - static_cast<double>(r0);
          t.idx[0] = r0 * w + c0;
          t.idx[1] = r0 * w + c1;
          t.idx[2] = r1 * w + c0;
          t.idx[3] = r1 * w + c1;
          t.wgt[0] = (1.0 - fv) * (1.0 - fu);
          t.wgt[1] = (1.0 - fv) * fu;
          t.wgt[2] = fv * (1.0 - fu);
          t.wgt[3] = fv * fu;
        }
      }
    }
  }

  Tensor out = make_node("roi_align", {c, out_size, out_size}, {feature.node_ptr()});
  const auto& fv = feature.node()->value;
  auto& ov = out.node()->value;
  const double inv = 1.0 / static_cast<double>(per_bin);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = fv.data() + ch * h * w;
    for (std::size_t b = 0; b < bins; ++b) {
      double acc = 0.0;
      for (std::size_t s = 0; s < per_bin; ++s) {
        const Tap& t = (*taps)[b * per_bin + s];
        for (int q = 0; q < 4; ++q) acc += t.wgt[q] * plane[t.idx[q]];
      }
      ov[ch * bins + b] = acc * inv;
    }
  }
  if (out.requires_grad()) {
    out.node()->backward = [taps, c, h, w, bins, per_bin, inv](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* plane = p.grad.data() + ch * h * w;
        for (std::size_t b = 0; b < bins; ++b) {
          const double g = self.grad[ch * bins + b] * inv;
          for (std::size_t s = 0; s < per_bin; ++s) {
            const Tap& t = (*taps)[b * per_bin + s];
            for (int q = 0; q < 4; ++q) plane[t.idx[q]] += t.wgt[q] * g;
          }
        }
      }
    };
  }
  return out;
}

Tensor external_loss(const Tensor& x, double value, std::vector<double> grad) {
  if (grad.size() != x.size()) shape_error("external_loss", "gradient size differs from input size");
  Tensor out = make_node("external_loss", {}, {x.node_ptr()});
  out.node()->value[0] = value;
  if (out.requires_grad()) {
    out.node()->backward = [g = std::move(grad)](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += self.grad[0] * g[i];
    };
  }
  return out;
}

}  // namespace polyseq::nn
