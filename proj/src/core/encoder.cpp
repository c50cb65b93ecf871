#include "glstr/encoder.hpp"

#include <algorithm>

#include "glstr/error.hpp"

namespace glstr {

void EncoderConfig::validate() const {
  if (num_layers == 0) throw ConfigError("encoder.num_layers must be positive");
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("encoder.embed_dim (" + std::to_string(embed_dim) + ") must be divisible by encoder.num_heads (" +
                      std::to_string(num_heads) + ")");
  }
  if (mlp_hidden == 0) throw ConfigError("encoder.mlp_hidden must be positive");
  if (patch_size == 0) throw ConfigError("encoder.patch_size must be positive");
}

namespace {

Tensor column_block(const Tensor& m, std::size_t first, std::size_t count) {
  const std::size_t rows = m.rank() == 2 ? m.dim(0) : 1;
  const std::size_t cols = m.rank() == 2 ? m.dim(1) : m.dim(0);
  Tensor out(m.rank() == 2 ? Shape{rows, count} : Shape{count});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(m.data() + r * cols + first, count, out.data() + r * count);
  return out;
}

ag::Var as_batch(const Tensor& features) {
  if (features.rank() != 2) throw InputError("encoder: expected [L, C] features, got " + shape_str(features.shape()));
  return ag::constant(features.reshaped(Shape{1, features.dim(0), features.dim(1)}));
}

Tensor strip_batch(const ag::Var& v) {
  return v->value.reshaped(Shape{v->value.dim(1), v->value.dim(2)});
}

} // namespace

HeadWeights LayerWeights::head(std::size_t index, std::size_t num_heads) const {
  const std::size_t C = wq.dim(1);
  if (num_heads == 0 || C % num_heads != 0) throw ConfigError("head split: width not divisible by head count");
  if (index >= num_heads) throw InputError("head index out of range");
  const std::size_t d = C / num_heads;
  return HeadWeights{column_block(wq, index * d, d), column_block(bq, index * d, d),
                     column_block(wk, index * d, d), column_block(bk, index * d, d),
                     column_block(wv, index * d, d), column_block(bv, index * d, d)};
}

LayerParams LayerParams::constants(const LayerWeights& w) {
  auto c = [](const Tensor& t) { return ag::constant(t); };
  return LayerParams{c(w.ln1_gamma), c(w.ln1_beta), c(w.wq),      c(w.bq),     c(w.wk),    c(w.bk),
                     c(w.wv),        c(w.bv),       c(w.proj_w),  c(w.proj_b), c(w.ln2_gamma), c(w.ln2_beta),
                     c(w.fc1_w),     c(w.fc1_b),    c(w.fc2_w),   c(w.fc2_b)};
}

LayerWeights random_layer_weights(const EncoderConfig& cfg, Initializer& init) {
  const std::size_t C = cfg.embed_dim, H = cfg.mlp_hidden;
  LayerWeights w;
  w.ln1_gamma = Tensor(Shape{C}, 1.0);
  w.ln1_beta = Tensor(Shape{C}, 0.0);
  w.wq = init.fan_in_uniform({C, C}, C);
  w.bq = init.fan_in_uniform({C}, C);
  w.wk = init.fan_in_uniform({C, C}, C);
  w.bk = init.fan_in_uniform({C}, C);
  w.wv = init.fan_in_uniform({C, C}, C);
  w.bv = init.fan_in_uniform({C}, C);
  w.proj_w = init.fan_in_uniform({C, C}, C);
  w.proj_b = init.fan_in_uniform({C}, C);
  w.ln2_gamma = Tensor(Shape{C}, 1.0);
  w.ln2_beta = Tensor(Shape{C}, 0.0);
  w.fc1_w = init.fan_in_uniform({C, H}, C);
  w.fc1_b = init.fan_in_uniform({H}, C);
  w.fc2_w = init.fan_in_uniform({H, C}, H);
  w.fc2_b = init.fan_in_uniform({C}, H);
  return w;
}

LayerParams LayerParams::create(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                                Initializer& init) {
  LayerWeights w = random_layer_weights(cfg, init);
  LayerParams p;
  p.ln1_gamma = store.add(prefix + ".ln1.gamma", std::move(w.ln1_gamma));
  p.ln1_beta = store.add(prefix + ".ln1.beta", std::move(w.ln1_beta));
  p.wq = store.add(prefix + ".attn.wq", std::move(w.wq));
  p.bq = store.add(prefix + ".attn.bq", std::move(w.bq));
  p.wk = store.add(prefix + ".attn.wk", std::move(w.wk));
  p.bk = store.add(prefix + ".attn.bk", std::move(w.bk));
  p.wv = store.add(prefix + ".attn.wv", std::move(w.wv));
  p.bv = store.add(prefix + ".attn.bv", std::move(w.bv));
  p.proj_w = store.add(prefix + ".attn.proj.w", std::move(w.proj_w));
  p.proj_b = store.add(prefix + ".attn.proj.b", std::move(w.proj_b));
  p.ln2_gamma = store.add(prefix + ".ln2.gamma", std::move(w.ln2_gamma));
  p.ln2_beta = store.add(prefix + ".ln2.beta", std::move(w.ln2_beta));
  p.fc1_w = store.add(prefix + ".mlp.fc1.w", std::move(w.fc1_w));
  p.fc1_b = store.add(prefix + ".mlp.fc1.b", std::move(w.fc1_b));
  p.fc2_w = store.add(prefix + ".mlp.fc2.w", std::move(w.fc2_w));
  p.fc2_b = store.add(prefix + ".mlp.fc2.b", std::move(w.fc2_b));
  return p;
}

LayerParams LayerParams::lookup(const ParameterStore& store, const std::string& prefix) {
  auto g = [&](const char* suffix) { return store.get(prefix + suffix); };
  return LayerParams{g(".ln1.gamma"),   g(".ln1.beta"),    g(".attn.wq"),     g(".attn.bq"),
                     g(".attn.wk"),     g(".attn.bk"),     g(".attn.wv"),     g(".attn.bv"),
                     g(".attn.proj.w"), g(".attn.proj.b"), g(".ln2.gamma"),   g(".ln2.beta"),
                     g(".mlp.fc1.w"),   g(".mlp.fc1.b"),   g(".mlp.fc2.w"),   g(".mlp.fc2.b")};
}

namespace encoder {

ag::Var multi_head_attention(const ag::Var& x, const LayerParams& p, std::size_t num_heads, Tensor* probs) {
  const std::size_t C = x->value.shape().back();
  if (num_heads == 0 || C % num_heads != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(C) + " does not split into " +
                      std::to_string(num_heads) + " heads");
  }
  auto q = ag::linear(x, p.wq, p.bq);
  auto k = ag::linear(x, p.wk, p.bk);
  auto v = ag::linear(x, p.wv, p.bv);
  auto heads = ag::attention(q, k, v, num_heads, probs);
  return ag::linear(heads, p.proj_w, p.proj_b);
}

ag::Var transformer_layer(const ag::Var& x, const LayerParams& p, std::size_t num_heads, Tensor* probs) {
  auto h = ag::add(multi_head_attention(ag::layer_norm(x, p.ln1_gamma, p.ln1_beta, kLayerNormEps), p, num_heads, probs), x);
  auto mlp = ag::linear(ag::gelu(ag::linear(ag::layer_norm(h, p.ln2_gamma, p.ln2_beta, kLayerNormEps), p.fc1_w, p.fc1_b)),
                        p.fc2_w, p.fc2_b);
  return ag::add(mlp, h);
}

TokenSequence add_positional(const TokenSequence& tokens, const PositionalCode& pos) {
  if (!tokens.tokens.same_shape(pos.table)) {
    throw InputError("add_positional: tokens " + shape_str(tokens.tokens.shape()) + " vs positional code " +
                     shape_str(pos.table.shape()));
  }
  TokenSequence out = tokens;
  for (std::size_t i = 0; i < out.tokens.numel(); ++i) out.tokens[i] += pos.table[i];
  return out;
}

Tensor self_attention(const Tensor& features, const HeadWeights& head) {
  ag::NoGradGuard guard;
  auto x = as_batch(features);
  auto q = ag::linear(x, ag::constant(head.wq), ag::constant(head.bq));
  auto k = ag::linear(x, ag::constant(head.wk), ag::constant(head.bk));
  auto v = ag::linear(x, ag::constant(head.wv), ag::constant(head.bv));
  return strip_batch(ag::attention(q, k, v, 1));
}

Tensor attention_weights(const Tensor& features, const HeadWeights& head) {
  ag::NoGradGuard guard;
  auto x = as_batch(features);
  auto q = ag::linear(x, ag::constant(head.wq), ag::constant(head.bq));
  auto k = ag::linear(x, ag::constant(head.wk), ag::constant(head.bk));
  auto v = ag::linear(x, ag::constant(head.wv), ag::constant(head.bv));
  Tensor probs;
  ag::attention(q, k, v, 1, &probs);
  const std::size_t L = features.dim(0);
  return probs.reshaped(Shape{L, L});
}

Tensor multi_head_attention(const Tensor& features, const LayerWeights& weights, std::size_t num_heads) {
  ag::NoGradGuard guard;
  return strip_batch(multi_head_attention(as_batch(features), LayerParams::constants(weights), num_heads));
}

Tensor transformer_layer(const Tensor& features, const LayerWeights& weights, std::size_t num_heads) {
  ag::NoGradGuard guard;
  return strip_batch(transformer_layer(as_batch(features), LayerParams::constants(weights), num_heads));
}

std::vector<TokenSequence> encode(const TokenSequence& f0, const std::vector<LayerWeights>& layers,
                                  const EncoderConfig& cfg) {
  cfg.validate();
  if (layers.size() != cfg.num_layers) {
    throw ConfigError("encode: " + std::to_string(layers.size()) + " layer weight sets for a " +
                      std::to_string(cfg.num_layers) + "-layer encoder");
  }
  std::vector<TokenSequence> out;
  out.reserve(layers.size());
  Tensor current = f0.tokens;
  for (const LayerWeights& w : layers) {
    current = transformer_layer(current, w, cfg.num_heads);
    out.push_back(TokenSequence{current, f0.grid_h, f0.grid_w});
  }
  return out;
}

FeatureGrid averaged_attention_row(const Tensor& probs, std::size_t query_token, std::size_t grid_h,
                                   std::size_t grid_w) {
  if (probs.rank() < 3) throw InputError("attention row: expected [heads, L, L] weights");
  const std::size_t L = probs.shape().back();
  const std::size_t heads = probs.numel() / (L * L);
  if (L != grid_h * grid_w) throw InputError("attention row: grid does not match sequence length");
  if (query_token >= L) {
    throw InputError("attention row: token " + std::to_string(query_token) + " out of range (L = " +
                     std::to_string(L) + ")");
  }
  Tensor grid(Shape{grid_h, grid_w, 1});
  for (std::size_t h = 0; h < heads; ++h) {
    const double* row = probs.data() + (h * L + query_token) * L;
    for (std::size_t j = 0; j < L; ++j) grid[j] += row[j] / static_cast<double>(heads);
  }
  return FeatureGrid{std::move(grid)};
}

} // namespace encoder
} // namespace glstr
