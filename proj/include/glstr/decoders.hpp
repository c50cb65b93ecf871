#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "glstr/autograd.hpp"
#include "glstr/params.hpp"
#include "glstr/types.hpp"

namespace glstr {

enum class DecoderVariant { naive, stagewise, mla, deep };
enum class UpsampleStrategy { single16x, setr4x4x, gradual };

std::string to_string(DecoderVariant v);
std::string to_string(UpsampleStrategy s);
DecoderVariant parse_variant(const std::string& s);
UpsampleStrategy parse_upsample(const std::string& s);

inline constexpr std::size_t kNumStages = 3;
inline constexpr std::size_t kLayersPerStage = 4;
inline constexpr std::size_t kSideOutputs = kNumStages * kLayersPerStage;

struct DecoderConfig {
  DecoderVariant variant = DecoderVariant::deep;
  std::size_t density = 4;
  UpsampleStrategy upsample = UpsampleStrategy::gradual;
  std::size_t channels = 64;
  std::size_t num_stages = kNumStages;
  std::size_t layers_per_stage = kLayersPerStage;
  std::size_t cbr_layers = 3;       // naive, stagewise
  std::size_t deep_cbr_layers = 1;  // deep decoder blocks

  void validate(std::size_t encoder_layers) const;
  /// Deep decoder with density 0 and a single 16x upsample is the naive decoder.
  bool is_naive() const;
};

/// Twelve side maps [N, H, W, 1] in (0, 1); slot (stage s, layer j) is
/// index (s - 1) * 4 + (j - 1). Single-output decoders repeat one map.
struct DecodeOutput {
  std::vector<ag::Var> side_maps;
  std::size_t final_index = 0;

  static std::size_t slot(std::size_t stage, std::size_t layer);
  const ag::Var& final_map() const { return side_maps.at(final_index); }
};

/// Conv3x3 -> batch norm -> ReLU.
struct ConvBnRelu {
  ag::Var weight;  // [3, 3, Cin, Cout]
  ag::Var gamma, beta;
  std::shared_ptr<ag::BatchNormStats> stats;

  static ConvBnRelu create(ParameterStore& params, BufferStore& buffers, const std::string& prefix, std::size_t cin,
                           std::size_t cout, Initializer& init);
  ag::Var forward(const ag::Var& x, bool training) const;
};

struct CbrBlock {
  std::vector<ConvBnRelu> layers;

  static CbrBlock create(ParameterStore& params, BufferStore& buffers, const std::string& prefix, std::size_t cin,
                         std::size_t cout, std::size_t count, Initializer& init);
  ag::Var forward(ag::Var x, bool training) const;
};

/// 1x1 convolution with bias; a linear map over the channel axis.
struct PointwiseConv {
  ag::Var weight;  // [Cin, Cout]
  ag::Var bias;    // [Cout]

  static PointwiseConv create(ParameterStore& params, const std::string& prefix, std::size_t cin, std::size_t cout,
                              Initializer& init);
  ag::Var forward(const ag::Var& x) const;
};

class Decoder {
public:
  virtual ~Decoder() = default;
  /// `features` holds F_1..F_n as [N, h, w, C] grids at 1/16 scale.
  virtual DecodeOutput forward(const std::vector<ag::Var>& features, std::size_t out_h, std::size_t out_w,
                               bool training) const = 0;
};

/// Z = Up(CBR^k(F_12); 16), S = sigmoid(Conv(Z)).
class NaiveDecoder final : public Decoder {
public:
  NaiveDecoder(const DecoderConfig& cfg, std::size_t embed_dim, ParameterStore& params, BufferStore& buffers,
               Initializer& init);
  DecodeOutput forward(const std::vector<ag::Var>& features, std::size_t out_h, std::size_t out_w,
                       bool training) const override;

private:
  CbrBlock block_;
  PointwiseConv head_;
};

/// Z_0 = CBR(F_12); Z_i = CBR(Up(Z_{i-1}; 2)), i = 1..4; S = sigmoid(Conv(Z_4)).
class StagewiseDecoder final : public Decoder {
public:
  StagewiseDecoder(const DecoderConfig& cfg, std::size_t embed_dim, ParameterStore& params, BufferStore& buffers,
                   Initializer& init);
  DecodeOutput forward(const std::vector<ag::Var>& features, std::size_t out_h, std::size_t out_w,
                       bool training) const override;

private:
  std::vector<CbrBlock> blocks_;
  PointwiseConv head_;
};

/// Streams from F_3, F_6, F_9, F_12: CBR then Up 4, top-down summed from
/// F_12 towards F_3, concatenated, fused to one channel, Up 4, sigmoid.
class MlaDecoder final : public Decoder {
public:
  static constexpr std::array<std::size_t, 4> kTaps{3, 6, 9, 12};

  MlaDecoder(const DecoderConfig& cfg, std::size_t embed_dim, ParameterStore& params, BufferStore& buffers,
             Initializer& init);
  DecodeOutput forward(const std::vector<ag::Var>& features, std::size_t out_h, std::size_t out_w,
                       bool training) const override;
  /// Stream outputs after Up 4, before aggregation (F_3 first).
  std::vector<ag::Var> streams(const std::vector<ag::Var>& features, bool training) const;

private:
  std::vector<CbrBlock> streams_;
  PointwiseConv fuse_;
};

/// Dense decoder over all twelve encoder features; see README for the
/// stage/layer indexing.
class DeepDecoder final : public Decoder {
public:
  DeepDecoder(const DecoderConfig& cfg, std::size_t embed_dim, ParameterStore& params, BufferStore& buffers,
              Initializer& init);
  DecodeOutput forward(const std::vector<ag::Var>& features, std::size_t out_h, std::size_t out_w,
                       bool training) const override;

  /// Transformer-feature connections concatenated into each stage (stage 1 first).
  std::array<std::size_t, kNumStages> connections_per_stage() const;
  /// Spatial factor of stage s relative to the 1/16 token grid.
  std::size_t stage_factor(std::size_t stage) const;
  /// Encoder feature (1-based) paired with layer (s, j).
  static std::size_t feature_index(std::size_t stage, std::size_t layer);
  /// Whether layer (s, j) concatenates a transformer feature at this density.
  bool is_connected(std::size_t stage, std::size_t layer) const;

  /// Z_{s,j} grids from the most recent forward, slot-indexed like side maps.
  const std::vector<Shape>& last_shapes() const noexcept { return last_shapes_; }

private:
  struct Layer {
    bool connected = false;
    bool has_injection = false;
    PointwiseConv projection;
    CbrBlock block;
    PointwiseConv head;
  };

  ag::Var inject(const Layer& layer, std::size_t stage, const ag::Var& feature) const;

  DecoderConfig cfg_;
  std::array<Layer, kSideOutputs> layers_;
  mutable std::vector<Shape> last_shapes_;
};

std::unique_ptr<Decoder> make_decoder(const DecoderConfig& cfg, std::size_t embed_dim, std::size_t encoder_layers,
                                      ParameterStore& params, BufferStore& buffers, Initializer& init);

namespace decoders {

/// Evaluation-mode CBR on a single grid.
struct CbrWeights {
  Tensor conv;  // [3, 3, Cin, Cout]
  Tensor gamma, beta, running_mean, running_var;
};
FeatureGrid cbr(const FeatureGrid& x, const CbrWeights& w);
/// s in {2, 4, 8, 16}.
FeatureGrid upsample_bilinear(const FeatureGrid& x, std::size_t s);
FeatureGrid pixel_shuffle(const FeatureGrid& x, std::size_t r);

/// Trainable scalar count of every parameter (optionally under a prefix).
std::size_t count_parameters(const ParameterStore& params, const std::string& prefix = {});
/// Decoder-only count for a configuration, built on a scratch store.
std::size_t count_parameters(const DecoderConfig& cfg, std::size_t embed_dim, std::size_t encoder_layers = 12);

} // namespace decoders
} // namespace glstr
