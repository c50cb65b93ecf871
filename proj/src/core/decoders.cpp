#include "glstr/decoders.hpp"

#include "glstr/error.hpp"

namespace glstr {

std::string to_string(DecoderVariant v) {
  switch (v) {
    case DecoderVariant::naive: return "naive";
    case DecoderVariant::stagewise: return "stagewise";
    case DecoderVariant::mla: return "mla";
    case DecoderVariant::deep: return "deep";
  }
  return "?";
}

std::string to_string(UpsampleStrategy s) {
  switch (s) {
    case UpsampleStrategy::single16x: return "single16x";
    case UpsampleStrategy::setr4x4x: return "setr4x4x";
    case UpsampleStrategy::gradual: return "gradual";
  }
  return "?";
}

DecoderVariant parse_variant(const std::string& s) {
  if (s == "naive") return DecoderVariant::naive;
  if (s == "stagewise") return DecoderVariant::stagewise;
  if (s == "mla") return DecoderVariant::mla;
  if (s == "deep") return DecoderVariant::deep;
  throw ConfigError("decoder.variant: unknown value '" + s + "' (naive, stagewise, mla, deep)");
}

UpsampleStrategy parse_upsample(const std::string& s) {
  if (s == "single16x") return UpsampleStrategy::single16x;
  if (s == "setr4x4x") return UpsampleStrategy::setr4x4x;
  if (s == "gradual") return UpsampleStrategy::gradual;
  throw ConfigError("decoder.upsample_strategy: unknown value '" + s + "' (single16x, setr4x4x, gradual)");
}

void DecoderConfig::validate(std::size_t encoder_layers) const {
  if (num_stages != kNumStages || layers_per_stage != kLayersPerStage) {
    throw ConfigError("decoder: only 3 stages x 4 layers are supported");
  }
  if (density > layers_per_stage) {
    throw ConfigError("decoder.density " + std::to_string(density) + " exceeds layers_per_stage " +
                      std::to_string(layers_per_stage));
  }
  if (channels == 0) throw ConfigError("decoder.decoder_channels must be positive");
  if (cbr_layers == 0 || deep_cbr_layers == 0) throw ConfigError("decoder: CBR layer counts must be positive");
  const std::size_t needed = variant == DecoderVariant::deep ? num_stages * layers_per_stage : 12;
  if (encoder_layers != needed) {
    throw ConfigError("decoder." + to_string(variant) + " needs " + std::to_string(needed) +
                      " encoder features, encoder has " + std::to_string(encoder_layers) + " layers");
  }
}

bool DecoderConfig::is_naive() const {
  return variant == DecoderVariant::naive ||
         (variant == DecoderVariant::deep && density == 0 && upsample == UpsampleStrategy::single16x);
}

std::size_t DecodeOutput::slot(std::size_t stage, std::size_t layer) {
  if (stage < 1 || stage > kNumStages || layer < 1 || layer > kLayersPerStage) {
    throw InputError("side output (" + std::to_string(stage) + "," + std::to_string(layer) + ") out of range");
  }
  return (stage - 1) * kLayersPerStage + (layer - 1);
}

ConvBnRelu ConvBnRelu::create(ParameterStore& params, BufferStore& buffers, const std::string& prefix,
                              std::size_t cin, std::size_t cout, Initializer& init) {
  ConvBnRelu c;
  c.weight = params.add(prefix + ".conv.w", init.fan_in_uniform({3, 3, cin, cout}, 9 * cin));
  c.gamma = params.add(prefix + ".bn.gamma", Tensor(Shape{cout}, 1.0));
  c.beta = params.add(prefix + ".bn.beta", Tensor(Shape{cout}, 0.0));
  c.stats = buffers.add_batch_norm(prefix + ".bn", cout);
  return c;
}

ag::Var ConvBnRelu::forward(const ag::Var& x, bool training) const {
  return ag::relu(ag::batch_norm(ag::conv3x3(x, weight), gamma, beta, *stats, training));
}

CbrBlock CbrBlock::create(ParameterStore& params, BufferStore& buffers, const std::string& prefix, std::size_t cin,
                          std::size_t cout, std::size_t count, Initializer& init) {
  CbrBlock b;
  for (std::size_t i = 0; i < count; ++i)
    b.layers.push_back(ConvBnRelu::create(params, buffers, prefix + ".cbr." + std::to_string(i), i == 0 ? cin : cout,
                                          cout, init));
  return b;
}

ag::Var CbrBlock::forward(ag::Var x, bool training) const {
  for (const auto& layer : layers) x = layer.forward(x, training);
  return x;
}

PointwiseConv PointwiseConv::create(ParameterStore& params, const std::string& prefix, std::size_t cin,
                                    std::size_t cout, Initializer& init) {
  PointwiseConv p;
  p.weight = params.add(prefix + ".w", init.fan_in_uniform({cin, cout}, cin));
  p.bias = params.add(prefix + ".b", init.fan_in_uniform({cout}, cin));
  return p;
}

ag::Var PointwiseConv::forward(const ag::Var& x) const { return ag::linear(x, weight, bias); }

namespace {

void check_features(const std::vector<ag::Var>& features, std::size_t needed) {
  if (features.size() < needed) {
    throw ConfigError("decoder: expected " + std::to_string(needed) + " encoder features, got " +
                      std::to_string(features.size()));
  }
  for (const auto& f : features)
    if (!f || f->value.rank() != 4) throw InputError("decoder: features must be [N, h, w, C] grids");
}

ag::Var upsample(const ag::Var& x, std::size_t factor) {
  if (factor == 1) return x;
  return ag::resize_bilinear(x, x->value.dim(1) * factor, x->value.dim(2) * factor);
}

// Conv1x1 commutes with bilinear resizing (both are linear and the bilinear
// weights sum to one), so the classifier runs before the resize.
ag::Var side_map(const PointwiseConv& head, const ag::Var& z, std::size_t out_h, std::size_t out_w) {
  ag::Var logits = head.forward(z);
  if (logits->value.dim(1) != out_h || logits->value.dim(2) != out_w) logits = ag::resize_bilinear(logits, out_h, out_w);
  return ag::sigmoid(logits);
}

DecodeOutput replicated(const ag::Var& map) {
  return DecodeOutput{std::vector<ag::Var>(kSideOutputs, map), 0};
}

} // namespace

NaiveDecoder::NaiveDecoder(const DecoderConfig& cfg, std::size_t embed_dim, ParameterStore& params,
                           BufferStore& buffers, Initializer& init)
    : block_(CbrBlock::create(params, buffers, "decoder.naive.block", embed_dim, cfg.channels, cfg.cbr_layers, init)),
      head_(PointwiseConv::create(params, "decoder.naive.head", cfg.channels, 1, init)) {}

DecodeOutput NaiveDecoder::forward(const std::vector<ag::Var>& features, std::size_t out_h, std::size_t out_w,
                                   bool training) const {
  check_features(features, 12);
  return replicated(side_map(head_, block_.forward(features[11], training), out_h, out_w));
}

StagewiseDecoder::StagewiseDecoder(const DecoderConfig& cfg, std::size_t embed_dim, ParameterStore& params,
                                   BufferStore& buffers, Initializer& init)
    : head_() {
  for (std::size_t i = 0; i <= 4; ++i)
    blocks_.push_back(CbrBlock::create(params, buffers, "decoder.stagewise.block." + std::to_string(i),
                                       i == 0 ? embed_dim : cfg.channels, cfg.channels, cfg.cbr_layers, init));
  head_ = PointwiseConv::create(params, "decoder.stagewise.head", cfg.channels, 1, init);
}

DecodeOutput StagewiseDecoder::forward(const std::vector<ag::Var>& features, std::size_t out_h, std::size_t out_w,
                                       bool training) const {
  check_features(features, 12);
  ag::Var z = blocks_[0].forward(features[11], training);
  for (std::size_t i = 1; i < blocks_.size(); ++i) z = blocks_[i].forward(upsample(z, 2), training);
  return replicated(side_map(head_, z, out_h, out_w));
}

MlaDecoder::MlaDecoder(const DecoderConfig& cfg, std::size_t embed_dim, ParameterStore& params, BufferStore& buffers,
                       Initializer& init) {
  for (std::size_t tap : kTaps)
    streams_.push_back(CbrBlock::create(params, buffers, "decoder.mla.stream." + std::to_string(tap), embed_dim,
                                        cfg.channels, 1, init));
  fuse_ = PointwiseConv::create(params, "decoder.mla.fuse", cfg.channels * kTaps.size(), 1, init);
}

std::vector<ag::Var> MlaDecoder::streams(const std::vector<ag::Var>& features, bool training) const {
  check_features(features, 12);
  std::vector<ag::Var> out;
  for (std::size_t i = 0; i < kTaps.size(); ++i)
    out.push_back(upsample(streams_[i].forward(features[kTaps[i] - 1], training), 4));
  return out;
}

DecodeOutput MlaDecoder::forward(const std::vector<ag::Var>& features, std::size_t out_h, std::size_t out_w,
                                 bool training) const {
  std::vector<ag::Var> s = streams(features, training);
  // Top-down: F_12 alone, then each shallower stream adds the deeper sum.
  std::vector<ag::Var> agg(s.size());
  agg[3] = s[3];
  for (std::size_t i = 3; i-- > 0;) agg[i] = ag::add(s[i], agg[i + 1]);
  ag::Var cat = agg[3];
  for (std::size_t i = 3; i-- > 0;) cat = ag::concat_channels(cat, agg[i]);
  ag::Var logits = upsample(fuse_.forward(cat), 4);
  if (logits->value.dim(1) != out_h || logits->value.dim(2) != out_w) logits = ag::resize_bilinear(logits, out_h, out_w);
  return replicated(ag::sigmoid(logits));
}

DeepDecoder::DeepDecoder(const DecoderConfig& cfg, std::size_t embed_dim, ParameterStore& params,
                         BufferStore& buffers, Initializer& init)
    : cfg_(cfg) {
  const std::size_t D = cfg.channels;
  for (std::size_t s = kNumStages; s >= 1; --s) {
    for (std::size_t j = kLayersPerStage; j >= 1; --j) {
      Layer& layer = layers_[DecodeOutput::slot(s, j)];
      const std::string tag = "s" + std::to_string(s) + "j" + std::to_string(j);
      const bool entry = s == kNumStages && j == kLayersPerStage;
      layer.connected = is_connected(s, j);
      layer.has_injection = entry || layer.connected;
      if (layer.has_injection) {
        const std::size_t r = cfg.upsample == UpsampleStrategy::gradual ? (std::size_t{1} << (3 - s)) : 1;
        layer.projection = PointwiseConv::create(params, "decoder.deep.inject." + tag, embed_dim, D * r * r, init);
      }
      const std::size_t cin = (layer.connected && !entry) ? 2 * D : D;
      layer.block = CbrBlock::create(params, buffers, "decoder.deep.block." + tag, cin, D, cfg.deep_cbr_layers, init);
      layer.head = PointwiseConv::create(params, "decoder.deep.head." + tag, D, 1, init);
    }
  }
}

bool DeepDecoder::is_connected(std::size_t stage, std::size_t layer) const {
  (void)stage;
  return layer + cfg_.density >= kLayersPerStage + 1;
}

std::size_t DeepDecoder::feature_index(std::size_t stage, std::size_t layer) {
  return (stage - 1) * kLayersPerStage + layer;
}

std::size_t DeepDecoder::stage_factor(std::size_t stage) const {
  switch (cfg_.upsample) {
    case UpsampleStrategy::gradual: return std::size_t{1} << (4 - stage);
    case UpsampleStrategy::setr4x4x: return 4;
    case UpsampleStrategy::single16x: return 1;
  }
  return 1;
}

std::array<std::size_t, kNumStages> DeepDecoder::connections_per_stage() const {
  std::array<std::size_t, kNumStages> counts{};
  for (std::size_t s = 1; s <= kNumStages; ++s)
    for (std::size_t j = 1; j <= kLayersPerStage; ++j)
      if (layers_[DecodeOutput::slot(s, j)].connected) ++counts[s - 1];
  return counts;
}

ag::Var DeepDecoder::inject(const Layer& layer, std::size_t stage, const ag::Var& feature) const {
  ag::Var x = layer.projection.forward(feature);
  switch (cfg_.upsample) {
    case UpsampleStrategy::gradual: {
      // pixel shuffle 2^(3-s) then bilinear 2x: 8x / 4x / 2x for stages 1 / 2 / 3.
      const std::size_t r = std::size_t{1} << (3 - stage);
      if (r > 1) x = ag::pixel_shuffle(x, r);
      return upsample(x, 2);
    }
    case UpsampleStrategy::setr4x4x: return upsample(x, 4);
    case UpsampleStrategy::single16x: return x;
  }
  return x;
}

DecodeOutput DeepDecoder::forward(const std::vector<ag::Var>& features, std::size_t out_h, std::size_t out_w,
                                  bool training) const {
  if (features.size() != kSideOutputs) {
    throw ConfigError("decoder.deep: expected 12 encoder features, got " + std::to_string(features.size()));
  }
  check_features(features, kSideOutputs);
  DecodeOutput out;
  out.side_maps.resize(kSideOutputs);
  last_shapes_.assign(kSideOutputs, Shape{});

  ag::Var z;
  for (std::size_t s = kNumStages; s >= 1; --s) {
    for (std::size_t j = kLayersPerStage; j >= 1; --j) {
      const std::size_t idx = DecodeOutput::slot(s, j);
      const Layer& layer = layers_[idx];
      const ag::Var& feature = features[feature_index(s, j) - 1];
      ag::Var input;
      if (!z) {
        input = inject(layer, s, feature);
      } else {
        ag::Var prev = (j == kLayersPerStage && cfg_.upsample == UpsampleStrategy::gradual) ? upsample(z, 2) : z;
        input = layer.connected ? ag::concat_channels(prev, inject(layer, s, feature)) : prev;
      }
      z = layer.block.forward(input, training);
      last_shapes_[idx] = z->value.shape();
      out.side_maps[idx] = side_map(layer.head, z, out_h, out_w);
    }
  }
  out.final_index = DecodeOutput::slot(1, 1);
  return out;
}

std::unique_ptr<Decoder> make_decoder(const DecoderConfig& cfg, std::size_t embed_dim, std::size_t encoder_layers,
                                      ParameterStore& params, BufferStore& buffers, Initializer& init) {
  cfg.validate(encoder_layers);
  if (cfg.is_naive()) return std::make_unique<NaiveDecoder>(cfg, embed_dim, params, buffers, init);
  switch (cfg.variant) {
    case DecoderVariant::stagewise: return std::make_unique<StagewiseDecoder>(cfg, embed_dim, params, buffers, init);
    case DecoderVariant::mla: return std::make_unique<MlaDecoder>(cfg, embed_dim, params, buffers, init);
    case DecoderVariant::deep: return std::make_unique<DeepDecoder>(cfg, embed_dim, params, buffers, init);
    case DecoderVariant::naive: break;
  }
  return std::make_unique<NaiveDecoder>(cfg, embed_dim, params, buffers, init);
}

namespace decoders {

namespace {

ag::Var batch_of_one(const FeatureGrid& x) {
  if (x.values.rank() != 3) throw InputError("decoder: expected [h, w, c] grid, got " + shape_str(x.values.shape()));
  return ag::constant(x.values.reshaped(Shape{1, x.height(), x.width(), x.channels()}));
}

FeatureGrid unbatch(const ag::Var& v) {
  const Shape& s = v->value.shape();
  return FeatureGrid{v->value.reshaped(Shape{s[1], s[2], s[3]})};
}

} // namespace

FeatureGrid cbr(const FeatureGrid& x, const CbrWeights& w) {
  ag::NoGradGuard guard;
  ag::BatchNormStats stats{w.running_mean, w.running_var};
  auto y = ag::batch_norm(ag::conv3x3(batch_of_one(x), ag::constant(w.conv)), ag::constant(w.gamma),
                          ag::constant(w.beta), stats, false);
  return unbatch(ag::relu(y));
}

FeatureGrid upsample_bilinear(const FeatureGrid& x, std::size_t s) {
  if (s != 2 && s != 4 && s != 8 && s != 16) {
    throw ConfigError("upsample_bilinear: unsupported factor " + std::to_string(s) + " (2, 4, 8, 16)");
  }
  ag::NoGradGuard guard;
  return unbatch(ag::resize_bilinear(batch_of_one(x), x.height() * s, x.width() * s));
}

FeatureGrid pixel_shuffle(const FeatureGrid& x, std::size_t r) {
  ag::NoGradGuard guard;
  return unbatch(ag::pixel_shuffle(batch_of_one(x), r));
}

std::size_t count_parameters(const ParameterStore& params, const std::string& prefix) {
  return params.scalar_count(prefix);
}

std::size_t count_parameters(const DecoderConfig& cfg, std::size_t embed_dim, std::size_t encoder_layers) {
  ParameterStore params;
  BufferStore buffers;
  Initializer init(0);
  make_decoder(cfg, embed_dim, encoder_layers, params, buffers, init);
  return params.scalar_count();
}

} // namespace decoders
} // namespace glstr
