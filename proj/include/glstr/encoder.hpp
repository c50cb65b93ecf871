#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "glstr/autograd.hpp"
#include "glstr/params.hpp"
#include "glstr/types.hpp"

namespace glstr {

struct EncoderConfig {
  std::size_t num_layers = 12;
  std::size_t embed_dim = 768;
  std::size_t num_heads = 12;
  std::size_t mlp_hidden = 3072;
  std::size_t patch_size = 16;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  /// Throws ConfigError when the geometry is inconsistent.
  void validate() const;
};

inline constexpr double kLayerNormEps = 1e-6;

/// E_pos, [L, C].
struct PositionalCode {
  Tensor table;
};

/// Projections of one attention head, each [C, d] (+ [d] bias).
struct HeadWeights {
  Tensor wq, bq, wk, bk, wv, bv;
};

/// Weights of one transformer layer. Attention projections are stored as
/// full [C, C] matrices; head h owns columns [h*d, (h+1)*d).
struct LayerWeights {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv;
  Tensor proj_w, proj_b;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b;
  Tensor fc2_w, fc2_b;

  HeadWeights head(std::size_t index, std::size_t num_heads) const;
};

/// Graph handles for one layer; same fields as LayerWeights.
struct LayerParams {
  ag::Var ln1_gamma, ln1_beta;
  ag::Var wq, bq, wk, bk, wv, bv;
  ag::Var proj_w, proj_b;
  ag::Var ln2_gamma, ln2_beta;
  ag::Var fc1_w, fc1_b;
  ag::Var fc2_w, fc2_b;

  static LayerParams constants(const LayerWeights& w);
  /// Registers the layer under `prefix` (e.g. "encoder.layer.3").
  static LayerParams create(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                            Initializer& init);
  static LayerParams lookup(const ParameterStore& store, const std::string& prefix);
};

LayerWeights random_layer_weights(const EncoderConfig& cfg, Initializer& init);

namespace encoder {

// Graph ops over batched [N, L, C] features.

ag::Var multi_head_attention(const ag::Var& x, const LayerParams& p, std::size_t num_heads,
                             Tensor* probs = nullptr);
/// F_hat = MSA(LN(F)) + F; out = MLP(LN(F_hat)) + F_hat with MLP = fc1 -> GELU -> fc2.
ag::Var transformer_layer(const ag::Var& x, const LayerParams& p, std::size_t num_heads, Tensor* probs = nullptr);

// Value-level operations on a single sequence.

TokenSequence add_positional(const TokenSequence& tokens, const PositionalCode& pos);
/// softmax(Q K^T / sqrt(d)) V for one head; F is [L, C], result [L, d].
Tensor self_attention(const Tensor& features, const HeadWeights& head);
/// Row-stochastic attention weights of one head, [L, L].
Tensor attention_weights(const Tensor& features, const HeadWeights& head);
Tensor multi_head_attention(const Tensor& features, const LayerWeights& weights, std::size_t num_heads);
Tensor transformer_layer(const Tensor& features, const LayerWeights& weights, std::size_t num_heads);
/// F_1..F_n from F_0; one entry per layer.
std::vector<TokenSequence> encode(const TokenSequence& f0, const std::vector<LayerWeights>& layers,
                                  const EncoderConfig& cfg);

/// Head-averaged attention row of `query_token`, reshaped to the token grid.
/// `probs` is one layer's [heads, L, L] (or [1, heads, L, L]) weights.
FeatureGrid averaged_attention_row(const Tensor& probs, std::size_t query_token, std::size_t grid_h,
                                   std::size_t grid_w);

} // namespace encoder
} // namespace glstr
