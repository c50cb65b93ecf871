#include "glstr/model.hpp"

#include <map>
#include <set>

#include "glstr/error.hpp"
#include "glstr/patchify.hpp"

namespace glstr {

std::string to_string(Normalization n) { return n == Normalization::unit ? "unit" : "vit"; }

Normalization parse_normalization(const std::string& s) {
  if (s == "unit") return Normalization::unit;
  if (s == "vit") return Normalization::vit;
  throw ConfigError("model.normalization: unknown value '" + s + "' (unit, vit)");
}

void ModelConfig::validate() const {
  encoder.validate();
  if (input_size == 0 || input_size % encoder.patch_size != 0) {
    throw ConfigError("model.input_size " + std::to_string(input_size) + " is not a multiple of encoder.patch_size " +
                      std::to_string(encoder.patch_size));
  }
  decoder.validate(encoder.num_layers);
}

ModelConfig ModelConfig::reference() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.input_size = 32;
  c.encoder.embed_dim = 16;
  c.encoder.num_heads = 2;
  c.encoder.mlp_hidden = 64;
  c.encoder.num_layers = 12;
  c.encoder.patch_size = 16;
  c.decoder.channels = 8;
  return c;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Initializer init(seed);
  const std::size_t P = cfg_.encoder.patch_size * cfg_.encoder.patch_size * 3;
  const std::size_t C = cfg_.encoder.embed_dim;
  patch_w_ = params_.add("patch_embed.w", init.fan_in_uniform({P, C}, P));
  patch_b_ = params_.add("patch_embed.b", init.fan_in_uniform({C}, P));
  pos_ = params_.add("pos_embed", init.truncated_normal({cfg_.num_tokens(), C}, 0.02));
  for (std::size_t i = 0; i < cfg_.encoder.num_layers; ++i) {
    layers_.push_back(LayerParams::create(params_, "encoder.layer." + std::to_string(i), cfg_.encoder, init));
  }
  decoder_ = make_decoder(cfg_.decoder, C, cfg_.encoder.num_layers, params_, buffers_, init);
}

Tensor Model::normalize(const Tensor& images) const {
  if (cfg_.normalization == Normalization::unit) return images;
  Tensor out = images;
  for (double& v : out.values()) v = (v - 0.5) / 0.5;
  return out;
}

ForwardResult Model::forward(const Tensor& images, bool training, bool keep_attention) const {
  if (images.rank() != 4 || images.dim(3) != 3) {
    throw InputError("forward: expected [N, H, W, 3] images, got " + shape_str(images.shape()));
  }
  if (images.dim(1) != cfg_.input_size || images.dim(2) != cfg_.input_size) {
    throw InputError("forward: images are " + std::to_string(images.dim(1)) + "x" + std::to_string(images.dim(2)) +
                     ", model expects " + std::to_string(cfg_.input_size) + "x" + std::to_string(cfg_.input_size));
  }
  const std::size_t N = images.dim(0), g = cfg_.grid_size(), C = cfg_.encoder.embed_dim;
  ForwardResult r;
  auto patches = ag::constant(patchify::serialize_batch(normalize(images), cfg_.encoder.patch_size));
  auto x = ag::add_broadcast(patchify::embed(patches, patch_w_, patch_b_), pos_);
  for (const auto& layer : layers_) {
    Tensor probs;
    x = encoder::transformer_layer(x, layer, cfg_.encoder.num_heads, keep_attention ? &probs : nullptr);
    r.features.push_back(ag::reshape(x, Shape{N, g, g, C}));
    if (keep_attention) r.attention.push_back(std::move(probs));
  }
  r.output = decoder_->forward(r.features, cfg_.input_size, cfg_.input_size, training);
  return r;
}

std::vector<SaliencyMap> Model::predict(const Image& image, std::size_t* final_index) const {
  ag::NoGradGuard guard;
  const Tensor& px = image.pixels();
  auto r = forward(px.reshaped(Shape{1, px.dim(0), px.dim(1), 3}), false);
  std::vector<SaliencyMap> maps;
  for (const auto& m : r.output.side_maps) maps.push_back(SaliencyMap{m->value.reshaped(Shape{px.dim(0), px.dim(1)})});
  if (final_index) *final_index = r.output.final_index;
  return maps;
}

FeatureGrid Model::attention_map(const Image& image, std::size_t layer, std::size_t token) const {
  if (layer < 1 || layer > cfg_.encoder.num_layers) {
    throw InputError("attention layer " + std::to_string(layer) + " out of range 1.." +
                     std::to_string(cfg_.encoder.num_layers));
  }
  if (token >= cfg_.num_tokens()) {
    throw InputError("attention token " + std::to_string(token) + " out of range 0.." +
                     std::to_string(cfg_.num_tokens() - 1));
  }
  ag::NoGradGuard guard;
  const Tensor& px = image.pixels();
  auto r = forward(px.reshaped(Shape{1, px.dim(0), px.dim(1), 3}), false, true);
  return encoder::averaged_attention_row(r.attention[layer - 1], token, cfg_.grid_size(), cfg_.grid_size());
}

void Model::assign(const std::vector<std::pair<std::string, Tensor>>& arrays, bool allow_extra) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : arrays) by_name[name] = &t;
  std::set<std::string> used;
  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint mismatch: missing array '" + name + "'");
    if (it->second->shape() != dst.shape()) {
      throw ConfigError("checkpoint mismatch: '" + name + "' has shape " + shape_str(it->second->shape()) +
                        ", model expects " + shape_str(dst.shape()));
    }
    dst = *it->second;
    used.insert(name);
  };
  for (auto& [name, var] : params_.entries()) take(name, var->value);
  for (auto& [name, stats] : buffers_.entries()) {
    take(name + ".running_mean", stats->running_mean);
    take(name + ".running_var", stats->running_var);
  }
  if (!allow_extra) {
    for (const auto& [name, t] : arrays) {
      if (!used.contains(name)) throw ConfigError("checkpoint mismatch: unexpected array '" + name + "'");
    }
  }
}

std::vector<std::pair<std::string, Tensor>> Model::arrays() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, var] : params_.entries()) out.emplace_back(name, var->value);
  for (const auto& [name, stats] : buffers_.entries()) {
    out.emplace_back(name + ".running_mean", stats->running_mean);
    out.emplace_back(name + ".running_var", stats->running_var);
  }
  return out;
}

} // namespace glstr
