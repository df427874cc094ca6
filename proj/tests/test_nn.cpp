#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <filesystem>
#include <random>

#include <json.hpp>

#include "polyseq/nn/gradcheck.hpp"
#include "polyseq/nn/ops.hpp"
#include "polyseq/nn/param_store.hpp"
#include "polyseq/nn/polygon_head.hpp"
#include "polyseq/nn/toy_model.hpp"
#include "polyseq/oracles.hpp"

using namespace polyseq;
using namespace polyseq::nn;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

void set_param(ParamStore& store, const std::string& name, double value) {
  Tensor t = store.param(name);
  for (double& v : t.mutable_values()) v = value;
}

std::vector<double> param_values(const ParamStore& store, const std::string& name) {
  const auto v = store.param(name).values();
  return {v.begin(), v.end()};
}

// Plain-loop layer norm over rows of width d.
std::vector<double> ln_rows(const std::vector<double>& x, std::size_t d, const std::vector<double>& g,
                            const std::vector<double>& b) {
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[r * d + j];
    mu /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
    var /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (x[r * d + j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j];
  }
  return out;
}

std::vector<double> affine_rows(const std::vector<double>& x, std::size_t in, const std::vector<double>& w,
                                const std::vector<double>& b) {
  const std::size_t out = b.size(), rows = x.size() / in;
  std::vector<double> y(rows * out);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * w[i * out + o];
      y[r * out + o] = s;
    }
  }
  return y;
}

PolygonHeadConfig small_head(EncoderVariant v) {
  PolygonHeadConfig c;
  c.grid = 4;
  c.channels = 8;
  c.heads = 2;
  c.decoder_blocks = 2;
  c.queries = 5;
  c.variant = v;
  c.weight_convs = 2;
  return c;
}

}  // namespace

TEST_CASE("basic op values and gradients") {
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::from({3, 2}, randn(6, rng), true);
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor y = matmul(eye, x);
  CHECK(std::vector<double>(y.values().begin(), y.values().end()) ==
        std::vector<double>(x.values().begin(), x.values().end()));
  sum(y).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  const Tensor z = Tensor::from({1}, {0.0}, true);
  const Tensor s = sigmoid(z);
  CHECK(s.item() == 0.5);
  s.backward();
  CHECK(z.grad()[0] == 0.25);

  const Tensor sm = softmax(Tensor::from({2, 3}, randn(6, rng)));
  CHECK(sm.values()[0] + sm.values()[1] + sm.values()[2] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("shape errors name the op") {
  const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("no throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  try {
    add(a, Tensor::zeros({4}));
    FAIL("no throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({3, 5, 3, 3}), Tensor::zeros({3})),
                  std::invalid_argument);
}

TEST_CASE("every op passes a finite-difference check") {
  for (const auto& c : oracles::op_gradient_checks(3)) {
    CAPTURE(c.name);
    CHECK(c.result.max_rel_error < 1e-5);
    CHECK(c.result.skipped == 0);
    CHECK(c.result.checked > 0);
  }
}

TEST_CASE("gradient harness") {
  std::mt19937_64 rng(4);
  const Tensor x = Tensor::from({4, 3}, randn(12, rng), true);
  const Tensor w = Tensor::from({3, 2}, randn(6, rng), true);
  auto linear = [&] { return sum(scale(matmul(x, w), 0.7)); };
  CHECK(finite_difference_check(linear, {x, w}).max_rel_error < 1e-9);

  debug::set_grad_fault("matmul", 2.0);
  const GradCheckResult bad = finite_difference_check(linear, {x, w});
  debug::set_grad_fault("", 1.0);
  CHECK(bad.max_rel_error == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("full model gradient at d=16, G=8, M=6") {
  const GradCheckResult r = oracles::full_model_gradient_check(0);
  CHECK(r.max_rel_error < 1e-5);
  CHECK(r.checked >= 180);
  CHECK(r.skipped * 10 < r.checked);
}

TEST_CASE("roi align") {
  const Tensor constant = Tensor::full({2, 6, 7}, 5.0);
  const Tensor out = roi_align(constant, {3.1, 2.7, 2.3, 3.9}, 4);
  CHECK(out.shape() == Shape{2, 4, 4});
  for (double v : out.values()) CHECK(v == doctest::Approx(5.0).epsilon(1e-15));

  std::mt19937_64 rng(2);
  const Tensor f = Tensor::from({1, 8, 8}, randn(64, rng));
  const Tensor crop = roi_align(f, geometry::BBox::from_corners(2, 3, 6, 7), 4, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(crop.values()[r * 4 + c] == f.values()[(r + 3) * 8 + c + 2]);
  }

  // f(r, c) = 0.5 c - 0.25 r + 1 has pixel-space value 0.5 (x - 0.5) - 0.25 (y - 0.5) + 1
  std::vector<double> ramp(100);
  for (std::size_t r = 0; r < 10; ++r) {
    for (std::size_t c = 0; c < 10; ++c) ramp[r * 10 + c] = 0.5 * c - 0.25 * r + 1.0;
  }
  const geometry::BBox box{4.3, 5.1, 3.7, 2.9};
  const Tensor lin = roi_align(Tensor::from({1, 10, 10}, ramp), box, 3, 2);
  for (std::size_t gy = 0; gy < 3; ++gy) {
    for (std::size_t gx = 0; gx < 3; ++gx) {
      const double x = box.x0() + (gx + 0.5) * box.w / 3, y = box.y0() + (gy + 0.5) * box.h / 3;
      CHECK(lin.values()[gy * 3 + gx] == doctest::Approx(0.5 * (x - 0.5) - 0.25 * (y - 0.5) + 1.0).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(roi_align(f, {-5, -5, 2, 2}, 4), std::invalid_argument);
}

TEST_CASE("batch norm inference is a fixed affine map") {
  std::mt19937_64 rng(7);
  std::vector<double> mean{0.3, -0.2}, var{1.5, 0.7};
  const BatchNormState st{mean, var};
  const Tensor x = Tensor::from({2, 2, 3, 3}, randn(36, rng));
  const Tensor g = Tensor::from({2}, {1.2, 0.8}), b = Tensor::from({2}, {0.1, -0.3});
  const Tensor y1 = batch_norm2d(x, g, b, st, false), y2 = batch_norm2d(x, g, b, st, false);
  CHECK(std::equal(y1.values().begin(), y1.values().end(), y2.values().begin()));
  CHECK(y1.values()[0] == doctest::Approx((x.values()[0] - 0.3) / std::sqrt(1.5 + 1e-5) * 1.2 + 0.1).epsilon(1e-14));
  CHECK(mean[0] == 0.3);

  batch_norm2d(x, g, b, st, true);
  CHECK(mean[0] != 0.3);
}

TEST_CASE("encoder variants") {
  std::mt19937_64 rng(11);
  for (EncoderVariant v : all_encoder_variants()) {
    CAPTURE(to_string(v));
    CHECK(parse_encoder_variant(to_string(v)) == v);
    const PolygonHeadConfig cfg = small_head(v);
    ParamStore store;
    std::mt19937_64 init(3);
    const PolygonHead head(cfg, store, init);
    const Tensor b = Tensor::from({2, 8, 4, 4}, randn(256, rng));
    const EncoderOutput enc = head.encode(b, true);
    CHECK(enc.tokens.shape() == Shape{2, 16, 8});
    CHECK(enc.vertex_map.defined() == uses_vertex_map(v));
    CHECK(enc.edge_map.defined() == uses_edge_map(v));
    const HeadOutput out = head.forward(b, false);
    CHECK(out.probs.shape() == Shape{2, 5, 17});
    for (double p : out.probs.values()) CHECK(std::isfinite(p));
    if (v == EncoderVariant::kNone) {
      for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t s = 0; s < 16; ++s) {
          for (std::size_t c = 0; c < 8; ++c) CHECK(enc.tokens.values()[(n * 16 + s) * 8 + c] == b.values()[(n * 8 + c) * 16 + s]);
        }
      }
    }
  }
  CHECK_THROWS_AS(parse_encoder_variant("bogus"), std::invalid_argument);
}

TEST_CASE("zero features give half weights and zero attention") {
  ParamStore store;
  std::mt19937_64 init(5);
  const PolygonHead head(small_head(EncoderVariant::kVertexEdgeWise), store, init);
  const EncoderOutput enc = head.encode(Tensor::zeros({2, 8, 4, 4}), false);
  for (double p : enc.vertex_map.values()) CHECK(p == 0.5);
  for (double p : enc.edge_map.values()) CHECK(p == 0.5);
  const Tensor attn = mul(Tensor::zeros({2, 8, 4, 4}), enc.vertex_map);
  for (double a : attn.values()) CHECK(a == 0.0);
}

TEST_CASE("decoder") {
  ParamStore store;
  std::mt19937_64 init(9), rng(10);
  const PolygonHeadConfig cfg = small_head(EncoderVariant::kNone);
  const PolygonHead head(cfg, store, init);
  const Tensor tokens = Tensor::from({1, 16, 8}, randn(128, rng));
  const Tensor a = head.decode(tokens), b = head.decode(tokens);
  CHECK(a.shape() == Shape{1, 5, 8});
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));

  SUBCASE("without attention output projections each block is LN(FFN(x) + x) after two plain LNs") {
    for (int blk = 0; blk < 2; ++blk) {
      for (const char* part : {"self_attn", "cross_attn"}) {
        const std::string base = "head.decoder." + std::to_string(blk) + "." + part + ".o.";
        set_param(store, base + "w", 0.0);
        set_param(store, base + "b", 0.0);
      }
    }
    const Tensor got = head.decode(tokens);
    std::vector<double> v = param_values(store, "head.decoder.queries");
    const auto pe = sinusoidal_encoding(5, 8);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += pe[i];
    for (int blk = 0; blk < 2; ++blk) {
      const std::string p = "head.decoder." + std::to_string(blk) + ".";
      v = ln_rows(v, 8, param_values(store, p + "ln1.gamma"), param_values(store, p + "ln1.beta"));
      v = ln_rows(v, 8, param_values(store, p + "ln2.gamma"), param_values(store, p + "ln2.beta"));
      std::vector<double> h = affine_rows(v, 8, param_values(store, p + "ffn.in.w"), param_values(store, p + "ffn.in.b"));
      for (double& x : h) x = std::max(x, 0.0);
      std::vector<double> f = affine_rows(h, 16, param_values(store, p + "ffn.out.w"), param_values(store, p + "ffn.out.b"));
      for (std::size_t i = 0; i < f.size(); ++i) f[i] += v[i];
      v = ln_rows(f, 8, param_values(store, p + "ln3.gamma"), param_values(store, p + "ln3.beta"));
    }
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(got.values()[i] == doctest::Approx(v[i]).epsilon(1e-12));
  }
}

TEST_CASE("vertex prediction") {
  ParamStore store;
  std::mt19937_64 init(2), rng(3);
  const PolygonHead head(small_head(EncoderVariant::kNone), store, init);
  const Tensor v = Tensor::from({2, 5, 8}, randn(80, rng));
  const Tensor p = head.predict(v);
  const polyloss::PredDistSeq d = to_pred_dist(p, 1);
  CHECK_NOTHROW(d.validate(1e-9));

  set_param(store, "head.classifier.w", 0.0);
  set_param(store, "head.classifier.b", 0.0);
  const Tensor uniform = head.predict(v);
  for (double x : uniform.values()) CHECK(x == doctest::Approx(1.0 / 17.0).epsilon(1e-15));
}

TEST_CASE("config validation") {
  PolygonHeadConfig c = small_head(EncoderVariant::kHierarchical);
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_head(EncoderVariant::kHierarchical);
  c.grid = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_head(EncoderVariant::kHierarchical);
  c.queries = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(PolygonHeadConfig{}.ffn() == 512);
  CHECK(PolygonHeadConfig{}.queries == 30);
}

TEST_CASE("sinusoidal encoding") {
  const auto pe = sinusoidal_encoding(3, 4);
  CHECK(pe[0] == 0.0);
  CHECK(pe[1] == 1.0);
  CHECK(pe[4] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(pe[5] == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
  CHECK(pe[6] == doctest::Approx(std::sin(0.01)).epsilon(1e-15));
}

TEST_CASE("param store") {
  ParamStore store;
  std::mt19937_64 rng(1);
  store.add("a", {2, 3}, init::xavier_uniform(6, 2, 3, rng));
  store.add_buffer("stats", {3}, 1.0);
  CHECK_THROWS(store.add("a", {1}, {0.0}));
  CHECK_THROWS(store.add("b", {2}, {0.0}));
  CHECK(store.parameter_count() == 6);
  for (double v : store.param("a").values()) CHECK(std::abs(v) <= std::sqrt(6.0 / 5.0));

  SUBCASE("zero learning rate leaves parameters unchanged") {
    const auto before = param_values(store, "a");
    Tensor a = store.param("a");
    for (double& g : a.mutable_grad()) g = 3.0;
    store.adamw_step({0.0, 1e-2});
    CHECK(param_values(store, "a") == before);
  }

  SUBCASE("checkpoint round trip is bit exact") {
    const auto path = std::filesystem::temp_directory_path() / "polyseq_ckpt_test.bin";
    store.buffer("stats")[1] = 0.123456789012345678;
    store.save(path, R"({"note": "x"})");
    ParamStore other;
    other.add("a", {2, 3}, std::vector<double>(6, 0.0));
    other.add_buffer("stats", {3}, 0.0);
    const auto header = nlohmann::json::parse(other.load(path));
    CHECK(header["note"] == "x");
    CHECK(param_values(other, "a") == param_values(store, "a"));
    CHECK(other.buffer("stats")[1] == store.buffer("stats")[1]);

    ParamStore wrong;
    wrong.add("a", {3, 2}, std::vector<double>(6, 0.0));
    wrong.add_buffer("stats", {3}, 0.0);
    CHECK_THROWS(wrong.load(path));
    std::filesystem::remove(path);
  }
}

TEST_CASE("polygon decoding") {
  const geometry::BBox proposal = geometry::BBox::from_corners(0, 0, 8, 8);
  polyloss::PredDistSeq d(6, 17);
  const int cells[] = {0, 3, 3, 15, 16, 12};
  for (int i = 0; i < 6; ++i) d.row(i)[static_cast<std::size_t>(cells[i])] = 1.0;
  const auto p = decode_polygon(d, 4, proposal);
  REQUIRE(p.has_value());
  CHECK(p->size() == 4);
  CHECK((*p)[0] == geometry::Vertex2{1, 1});
  CHECK((*p)[2] == geometry::Vertex2{7, 7});

  polyloss::PredDistSeq two(4, 17);
  two.row(0)[1] = 1.0;
  two.row(1)[2] = 1.0;
  two.row(2)[16] = 1.0;
  two.row(3)[16] = 1.0;
  CHECK_FALSE(decode_polygon(two, 4, proposal).has_value());
}
