#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "polyseq/nn/ops.hpp"
#include "polyseq/nn/param_store.hpp"
#include "polyseq/polyloss.hpp"

namespace polyseq::nn {

enum class EncoderVariant {
  kNone,
  kOriginal,
  kVertexEnhanced,
  kEdgeEnhanced,
  kVertexEdgeEnhanced,
  kVertexWise,
  kEdgeWise,
  kVertexEdgeWise,
  kHierarchical,
};

std::string_view to_string(EncoderVariant v);
EncoderVariant parse_encoder_variant(std::string_view name);
std::vector<EncoderVariant> all_encoder_variants();
bool uses_vertex_map(EncoderVariant v);
bool uses_edge_map(EncoderVariant v);

struct PolygonHeadConfig {
  int grid = 20;
  int channels = 256;
  int heads = 4;
  int decoder_blocks = 8;
  int queries = 30;
  int ffn_hidden = 0;  // 0 selects 2 * channels
  EncoderVariant variant = EncoderVariant::kHierarchical;
  int encoder_layers = 1;  // self-attention layers of the `original` variant
  int weight_convs = 4;    // 3x3 conv-bn-relu stages producing the weight maps

  int ffn() const { return ffn_hidden > 0 ? ffn_hidden : 2 * channels; }
  int classes() const { return grid * grid + 1; }
  void validate() const;
};

struct EncoderOutput {
  Tensor tokens;      // [N, G*G, d]
  Tensor vertex_map;  // [N, 1, G, G] when the variant has one
  Tensor edge_map;
};

struct HeadOutput {
  Tensor probs;  // [N, M, G*G + 1]
  Tensor vertex_map;
  Tensor edge_map;
};

/// Vertex/edge-attention polygon head. Parameters live in the ParamStore under
/// `prefix`; the head itself only holds names and configuration.
class PolygonHead {
 public:
  PolygonHead(const PolygonHeadConfig& cfg, ParamStore& store, std::mt19937_64& rng,
              std::string prefix = "head.");

  const PolygonHeadConfig& config() const { return cfg_; }

  /// b: [N, d, G, G] building features.
  EncoderOutput encode(const Tensor& b, bool training) const;
  /// tokens: [N, S, d] -> [N, M, d].
  Tensor decode(const Tensor& tokens) const;
  /// v: [N, M, d] -> softmax rows over G*G + 1 classes.
  Tensor predict(const Tensor& v) const;
  HeadOutput forward(const Tensor& b, bool training) const;

 private:
  struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
  };
  struct Norm {
    Tensor gamma;
    Tensor beta;
  };
  struct Conv {
    Tensor w;
    Tensor b;
  };
  struct ConvBn {
    Conv conv;
    Norm bn;
    std::string stats;  // buffer name prefix
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct Ffn {
    Linear in, out;
  };
  struct EncoderLayer {
    Attention attn;
    Norm ln1;
    Ffn ffn;
    Norm ln2;
  };
  struct DecoderBlock {
    Attention self_attn;
    Norm ln1;
    Attention cross_attn;
    Norm ln2;
    Ffn ffn;
    Norm ln3;
  };

  Linear make_linear(const std::string& name, int in, int out);
  Norm make_norm(const std::string& name, int width);
  Conv make_conv(const std::string& name, int cin, int cout, int k);
  Attention make_attention(const std::string& name);
  Ffn make_ffn(const std::string& name);

  Tensor linear(const Tensor& x, const Linear& l) const;
  Tensor norm(const Tensor& x, const Norm& n) const;
  Tensor conv_bn_relu(const Tensor& x, const ConvBn& c, bool training) const;
  Tensor attention(const Tensor& query, const Tensor& memory, const Attention& a) const;
  Tensor ffn(const Tensor& x, const Ffn& f) const;
  Tensor to_tokens(const Tensor& b) const;  // [N, d, G, G] -> [N, G*G, d]

  PolygonHeadConfig cfg_;
  ParamStore* store_;
  std::mt19937_64* rng_;
  std::string prefix_;

  std::vector<EncoderLayer> encoder_layers_;
  std::vector<ConvBn> weight_stack_;
  Conv vertex_head_, edge_head_;
  Conv fuse_;
  Ffn vertex_ffn_, edge_ffn_;
  Norm vertex_ln1_, vertex_ln2_, edge_ln1_, edge_ln2_;
  Tensor queries_;
  Tensor positional_;  // constant [M, d]
  std::vector<DecoderBlock> decoder_;
  Linear classifier_;
};

/// Standard transformer sinusoid table [rows, width].
std::vector<double> sinusoidal_encoding(int rows, int width);

/// Copies sample `n` of a [N, M, C] probability tensor into a PredDistSeq.
polyloss::PredDistSeq to_pred_dist(const Tensor& probs, std::size_t n);

}  // namespace polyseq::nn
