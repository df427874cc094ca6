#include "polyseq/nn/polygon_head.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace polyseq::nn {

namespace {

struct VariantName {
  EncoderVariant variant;
  std::string_view name;
};

constexpr VariantName kVariants[] = {
    {EncoderVariant::kNone, "none"},
    {EncoderVariant::kOriginal, "original"},
    {EncoderVariant::kVertexEnhanced, "vertex_enhanced"},
    {EncoderVariant::kEdgeEnhanced, "edge_enhanced"},
    {EncoderVariant::kVertexEdgeEnhanced, "vertex_edge_enhanced"},
    {EncoderVariant::kVertexWise, "vertex_wise"},
    {EncoderVariant::kEdgeWise, "edge_wise"},
    {EncoderVariant::kVertexEdgeWise, "vertex_edge_wise"},
    {EncoderVariant::kHierarchical, "hierarchical"},
};

bool is_enhanced(EncoderVariant v) {
  return v == EncoderVariant::kVertexEnhanced || v == EncoderVariant::kEdgeEnhanced ||
         v == EncoderVariant::kVertexEdgeEnhanced;
}

bool is_wise(EncoderVariant v) {
  return v == EncoderVariant::kVertexWise || v == EncoderVariant::kEdgeWise ||
         v == EncoderVariant::kVertexEdgeWise;
}

void warn_small_batch() {
  static bool warned = false;
  if (!warned) {
    std::fprintf(stderr, "warning: batch normalization in training mode with batch size 1 uses instance statistics\n");
    warned = true;
  }
}

}  // namespace

std::string_view to_string(EncoderVariant v) {
  for (const auto& e : kVariants) {
    if (e.variant == v) return e.name;
  }
  return "unknown";
}

EncoderVariant parse_encoder_variant(std::string_view name) {
  for (const auto& e : kVariants) {
    if (e.name == name) return e.variant;
  }
  throw std::invalid_argument("unknown encoder variant '" + std::string(name) + "'");
}

std::vector<EncoderVariant> all_encoder_variants() {
  std::vector<EncoderVariant> out;
  for (const auto& e : kVariants) out.push_back(e.variant);
  return out;
}

bool uses_vertex_map(EncoderVariant v) {
  return v == EncoderVariant::kVertexEnhanced || v == EncoderVariant::kVertexEdgeEnhanced ||
         v == EncoderVariant::kVertexWise || v == EncoderVariant::kVertexEdgeWise ||
         v == EncoderVariant::kHierarchical;
}

bool uses_edge_map(EncoderVariant v) {
  return v == EncoderVariant::kEdgeEnhanced || v == EncoderVariant::kVertexEdgeEnhanced ||
         v == EncoderVariant::kEdgeWise || v == EncoderVariant::kVertexEdgeWise ||
         v == EncoderVariant::kHierarchical;
}

void PolygonHeadConfig::validate() const {
  if (grid < 4) throw std::invalid_argument("grid must be >= 4");
  if (channels < 1 || heads < 1 || channels % heads != 0) {
    throw std::invalid_argument("channels must be a positive multiple of heads");
  }
  if (queries < 3) throw std::invalid_argument("queries must be >= 3");
  if (decoder_blocks < 0 || encoder_layers < 0 || weight_convs < 0 || ffn_hidden < 0) {
    throw std::invalid_argument("layer counts must be non-negative");
  }
}

std::vector<double> sinusoidal_encoding(int rows, int width) {
  std::vector<double> out(static_cast<std::size_t>(rows) * static_cast<std::size_t>(width));
  for (int pos = 0; pos < rows; ++pos) {
    for (int i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / width);
      const double angle = pos * freq;
      out[static_cast<std::size_t>(pos * width + i)] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return out;
}

polyloss::PredDistSeq to_pred_dist(const Tensor& probs, std::size_t n) {
  if (probs.rank() != 3 || n >= probs.dim(0)) throw std::invalid_argument("to_pred_dist: bad sample index");
  const std::size_t rows = probs.dim(1), classes = probs.dim(2);
  const auto v = probs.values().subspan(n * rows * classes, rows * classes);
  return polyloss::PredDistSeq(static_cast<int>(rows), static_cast<int>(classes),
                               std::vector<double>(v.begin(), v.end()));
}

PolygonHead::Linear PolygonHead::make_linear(const std::string& name, int in, int out) {
  const auto fi = static_cast<std::size_t>(in), fo = static_cast<std::size_t>(out);
  return {store_->add(prefix_ + name + ".w", {fi, fo}, init::xavier_uniform(fi * fo, fi, fo, *rng_)),
          store_->add(prefix_ + name + ".b", {fo}, std::vector<double>(fo, 0.0))};
}

PolygonHead::Norm PolygonHead::make_norm(const std::string& name, int width) {
  const auto w = static_cast<std::size_t>(width);
  return {store_->add(prefix_ + name + ".gamma", {w}, std::vector<double>(w, 1.0)),
          store_->add(prefix_ + name + ".beta", {w}, std::vector<double>(w, 0.0))};
}

PolygonHead::Conv PolygonHead::make_conv(const std::string& name, int cin, int cout, int k) {
  const auto ci = static_cast<std::size_t>(cin), co = static_cast<std::size_t>(cout),
             kk = static_cast<std::size_t>(k);
  const std::size_t count = co * ci * kk * kk;
  return {store_->add(prefix_ + name + ".w", {co, ci, kk, kk},
                      init::xavier_uniform(count, ci * kk * kk, co * kk * kk, *rng_)),
          store_->add(prefix_ + name + ".b", {co}, std::vector<double>(co, 0.0))};
}

PolygonHead::Attention PolygonHead::make_attention(const std::string& name) {
  const int d = cfg_.channels;
  return {make_linear(name + ".q", d, d), make_linear(name + ".k", d, d), make_linear(name + ".v", d, d),
          make_linear(name + ".o", d, d)};
}

PolygonHead::Ffn PolygonHead::make_ffn(const std::string& name) {
  return {make_linear(name + ".in", cfg_.channels, cfg_.ffn()),
          make_linear(name + ".out", cfg_.ffn(), cfg_.channels)};
}

PolygonHead::PolygonHead(const PolygonHeadConfig& cfg, ParamStore& store, std::mt19937_64& rng,
                         std::string prefix)
    : cfg_(cfg), store_(&store), rng_(&rng), prefix_(std::move(prefix)) {
  cfg_.validate();
  const int d = cfg_.channels;
  const EncoderVariant v = cfg_.variant;

  if (v == EncoderVariant::kOriginal) {
    for (int l = 0; l < cfg_.encoder_layers; ++l) {
      const std::string n = "encoder." + std::to_string(l);
      EncoderLayer layer;
      layer.attn = make_attention(n + ".attn");
      layer.ln1 = make_norm(n + ".ln1", d);
      layer.ffn = make_ffn(n + ".ffn");
      layer.ln2 = make_norm(n + ".ln2", d);
      encoder_layers_.push_back(std::move(layer));
    }
  }
  if (uses_vertex_map(v) || uses_edge_map(v)) {
    for (int i = 0; i < cfg_.weight_convs; ++i) {
      const std::string n = "weights.conv" + std::to_string(i);
      ConvBn c{make_conv(n, d, d, 3), make_norm(n + ".bn", d), prefix_ + n + ".bn"};
      store_->add_buffer(c.stats + ".running_mean", {static_cast<std::size_t>(d)}, 0.0);
      store_->add_buffer(c.stats + ".running_var", {static_cast<std::size_t>(d)}, 1.0);
      weight_stack_.push_back(std::move(c));
    }
    if (uses_vertex_map(v)) vertex_head_ = make_conv("weights.vertex", d, 1, 1);
    if (uses_edge_map(v)) edge_head_ = make_conv("weights.edge", d, 1, 1);
  }
  if (is_enhanced(v)) {
    const int parts = v == EncoderVariant::kVertexEdgeEnhanced ? 3 : 2;
    const auto fi = static_cast<std::size_t>(parts * d), fo = static_cast<std::size_t>(d);
    fuse_ = {store_->add(prefix_ + "encoder.fuse.w", {fo, fi, 1, 1}, init::xavier_uniform(fi * fo, fi, fo, *rng_)),
             store_->add(prefix_ + "encoder.fuse.b", {fo}, std::vector<double>(fo, 0.0))};
  }
  if (is_wise(v) || v == EncoderVariant::kHierarchical) vertex_ln1_ = make_norm("encoder.block1.ln1", d);
  if (v == EncoderVariant::kHierarchical) {
    vertex_ffn_ = make_ffn("encoder.block1.ffn");
    vertex_ln2_ = make_norm("encoder.block1.ln2", d);
    edge_ln1_ = make_norm("encoder.block2.ln1", d);
    edge_ffn_ = make_ffn("encoder.block2.ffn");
    edge_ln2_ = make_norm("encoder.block2.ln2", d);
  }

  const auto m = static_cast<std::size_t>(cfg_.queries), dd = static_cast<std::size_t>(d);
  queries_ = store_->add(prefix_ + "decoder.queries", {m, dd}, init::normal(m * dd, 0.02, *rng_));
  positional_ = Tensor::from({m, dd}, sinusoidal_encoding(cfg_.queries, d));
  for (int b = 0; b < cfg_.decoder_blocks; ++b) {
    const std::string n = "decoder." + std::to_string(b);
    DecoderBlock block;
    block.self_attn = make_attention(n + ".self_attn");
    block.ln1 = make_norm(n + ".ln1", d);
    block.cross_attn = make_attention(n + ".cross_attn");
    block.ln2 = make_norm(n + ".ln2", d);
    block.ffn = make_ffn(n + ".ffn");
    block.ln3 = make_norm(n + ".ln3", d);
    decoder_.push_back(std::move(block));
  }
  classifier_ = make_linear("classifier", d, cfg_.classes());
  rng_ = nullptr;
}

Tensor PolygonHead::linear(const Tensor& x, const Linear& l) const { return add(matmul(x, l.w), l.b); }

Tensor PolygonHead::norm(const Tensor& x, const Norm& n) const { return layer_norm(x, n.gamma, n.beta); }

Tensor PolygonHead::conv_bn_relu(const Tensor& x, const ConvBn& c, bool training) const {
  if (training && x.dim(0) < 2) warn_small_batch();
  const BatchNormState state{store_->buffer(c.stats + ".running_mean"), store_->buffer(c.stats + ".running_var")};
  return relu(batch_norm2d(conv2d(x, c.conv.w, c.conv.b), c.bn.gamma, c.bn.beta, state, training));
}

Tensor PolygonHead::attention(const Tensor& query, const Tensor& memory, const Attention& a) const {
  const std::size_t n = query.dim(0), l = query.dim(1), s = memory.dim(1);
  const auto h = static_cast<std::size_t>(cfg_.heads);
  const std::size_t dh = static_cast<std::size_t>(cfg_.channels) / h;
  const Tensor q = permute(reshape(linear(query, a.q), {n, l, h, dh}), {0, 2, 1, 3});
  const Tensor k = permute(reshape(linear(memory, a.k), {n, s, h, dh}), {0, 2, 3, 1});
  const Tensor v = permute(reshape(linear(memory, a.v), {n, s, h, dh}), {0, 2, 1, 3});
  const Tensor weights = softmax(scale(matmul(q, k), 1.0 / std::sqrt(static_cast<double>(dh))));
  const Tensor mixed = permute(matmul(weights, v), {0, 2, 1, 3});
  return linear(reshape(mixed, {n, l, h * dh}), a.o);
}

Tensor PolygonHead::ffn(const Tensor& x, const Ffn& f) const { return linear(relu(linear(x, f.in)), f.out); }

Tensor PolygonHead::to_tokens(const Tensor& b) const {
  const std::size_t n = b.dim(0), d = b.dim(1), hw = b.dim(2) * b.dim(3);
  return reshape(permute(b, {0, 2, 3, 1}), {n, hw, d});
}

EncoderOutput PolygonHead::encode(const Tensor& b, bool training) const {
  const auto g = static_cast<std::size_t>(cfg_.grid);
  const auto d = static_cast<std::size_t>(cfg_.channels);
  if (b.rank() != 4 || b.dim(1) != d || b.dim(2) != g || b.dim(3) != g) {
    throw std::invalid_argument("encoder: expected features [N, " + std::to_string(d) + ", " +
                                std::to_string(g) + ", " + std::to_string(g) + "], got " + shape_str(b.shape()));
  }
  const std::size_t n = b.dim(0);
  const EncoderVariant v = cfg_.variant;
  EncoderOutput out;
  Tensor tokens = to_tokens(b);

  if (v == EncoderVariant::kNone) {
    out.tokens = tokens;
    return out;
  }
  if (v == EncoderVariant::kOriginal) {
    for (const EncoderLayer& layer : encoder_layers_) {
      tokens = norm(add(attention(tokens, tokens, layer.attn), tokens), layer.ln1);
      tokens = norm(add(ffn(tokens, layer.ffn), tokens), layer.ln2);
    }
    out.tokens = tokens;
    return out;
  }

  Tensor stem = b;
  for (const ConvBn& c : weight_stack_) stem = conv_bn_relu(stem, c, training);
  Tensor v_tok, e_tok;
  if (uses_vertex_map(v)) {
    out.vertex_map = sigmoid(conv2d(stem, vertex_head_.w, vertex_head_.b));
    v_tok = reshape(out.vertex_map, {n, g * g, 1});
  }
  if (uses_edge_map(v)) {
    out.edge_map = sigmoid(conv2d(stem, edge_head_.w, edge_head_.b));
    e_tok = reshape(out.edge_map, {n, g * g, 1});
  }

  if (is_enhanced(v)) {
    std::vector<Tensor> parts{b};
    if (v_tok.defined()) parts.push_back(mul(b, out.vertex_map));
    if (e_tok.defined()) parts.push_back(mul(b, out.edge_map));
    out.tokens = to_tokens(conv2d(concat(parts, 1), fuse_.w, fuse_.b));
  } else if (is_wise(v)) {
    Tensor acc = tokens;
    if (v_tok.defined()) acc = add(acc, mul(tokens, v_tok));
    if (e_tok.defined()) acc = add(acc, mul(tokens, e_tok));
    out.tokens = norm(acc, vertex_ln1_);
  } else {
    Tensor x1 = norm(add(mul(tokens, v_tok), tokens), vertex_ln1_);
    x1 = norm(add(ffn(x1, vertex_ffn_), x1), vertex_ln2_);
    Tensor x2 = norm(add(mul(x1, e_tok), x1), edge_ln1_);
    out.tokens = norm(add(ffn(x2, edge_ffn_), x2), edge_ln2_);
  }
  return out;
}

Tensor PolygonHead::decode(const Tensor& tokens) const {
  if (tokens.rank() != 3 || tokens.dim(2) != static_cast<std::size_t>(cfg_.channels)) {
    throw std::invalid_argument("decoder: expected tokens [N, S, d], got " + shape_str(tokens.shape()));
  }
  const std::size_t n = tokens.dim(0);
  const auto m = static_cast<std::size_t>(cfg_.queries), d = static_cast<std::size_t>(cfg_.channels);
  Tensor v = add(Tensor::zeros({n, m, d}), add(queries_, positional_));
  for (const DecoderBlock& block : decoder_) {
    v = norm(add(attention(v, v, block.self_attn), v), block.ln1);
    v = norm(add(attention(v, tokens, block.cross_attn), v), block.ln2);
    v = norm(add(ffn(v, block.ffn), v), block.ln3);
  }
  return v;
}

Tensor PolygonHead::predict(const Tensor& v) const { return softmax(linear(v, classifier_)); }

HeadOutput PolygonHead::forward(const Tensor& b, bool training) const {
  EncoderOutput enc = encode(b, training);
  return {predict(decode(enc.tokens)), enc.vertex_map, enc.edge_map};
}

}  // namespace polyseq::nn
