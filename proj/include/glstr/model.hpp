#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "glstr/autograd.hpp"
#include "glstr/decoders.hpp"
#include "glstr/encoder.hpp"
#include "glstr/params.hpp"
#include "glstr/types.hpp"

namespace glstr {

/// Input scaling applied before patch embedding. "unit" feeds [0, 1] pixels
/// unchanged; "vit" maps them to [-1, 1] (mean 0.5, std 0.5 per channel), the
/// convention of the public ViT-B/16 weights.
enum class Normalization { unit, vit };

std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

struct ModelConfig {
  std::size_t input_size = 384;
  Normalization normalization = Normalization::unit;
  EncoderConfig encoder;
  DecoderConfig decoder;

  std::size_t grid_size() const { return input_size / encoder.patch_size; }
  std::size_t num_tokens() const { return grid_size() * grid_size(); }
  void validate() const;

  /// ViT-B/16 at 384 x 384 with the deep decoder (64 channels).
  static ModelConfig reference();
  /// 32 x 32 input, patch 16, width 16, 2 heads, 12 layers, 8 decoder channels.
  static ModelConfig tiny();
};

struct ForwardResult {
  DecodeOutput output;
  std::vector<ag::Var> features;  // F_1..F_n as [N, h, w, C]
  std::vector<Tensor> attention;  // per layer [N, heads, L, L]; empty unless requested
};

/// Patch embedding, positional code, transformer encoder and decoder over a
/// single parameter namespace:
///   patch_embed.w [P, C], patch_embed.b [C], pos_embed [L, C],
///   encoder.layer.{i}.*, decoder.*
class Model {
public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }
  BufferStore& buffers() noexcept { return buffers_; }
  const BufferStore& buffers() const noexcept { return buffers_; }
  const Decoder& decoder() const { return *decoder_; }

  /// images: [N, H, W, 3] in [0, 1] with H = W = input_size.
  ForwardResult forward(const Tensor& images, bool training, bool keep_attention = false) const;

  /// Evaluation-mode prediction for one image already at input_size.
  /// Returns the twelve side maps; the final map is element `final_index`.
  std::vector<SaliencyMap> predict(const Image& image, std::size_t* final_index = nullptr) const;

  /// Head-averaged attention of token `token` at 1-based layer `layer`.
  FeatureGrid attention_map(const Image& image, std::size_t layer, std::size_t token) const;

  /// Overwrites parameter and buffer values; throws ConfigError naming the
  /// first missing, unexpected or mis-shaped array.
  void assign(const std::vector<std::pair<std::string, Tensor>>& arrays, bool allow_extra = false);
  /// Every parameter followed by every batch-norm buffer (name.running_mean,
  /// name.running_var).
  std::vector<std::pair<std::string, Tensor>> arrays() const;

private:
  Tensor normalize(const Tensor& images) const;

  ModelConfig cfg_;
  ParameterStore params_;
  BufferStore buffers_;
  ag::Var patch_w_, patch_b_, pos_;
  std::vector<LayerParams> layers_;
  std::unique_ptr<Decoder> decoder_;
};

} // namespace glstr
