#pragma once

#include <array>
#include <vector>

#include "glstr/autograd.hpp"
#include "glstr/decoders.hpp"
#include "glstr/types.hpp"

namespace glstr {

inline constexpr double kBceClamp = 1e-7;

struct LossReport {
  double total = 0.0;
  std::array<std::array<double, kLayersPerStage>, kNumStages> per_head{};  // [stage-1][layer-1]
};

namespace loss {

/// Mean over pixels of -[S log S' + (1 - S) log(1 - S')], S' clamped to
/// [1e-7, 1 - 1e-7].
double bce(const SaliencyMap& pred, const GroundTruth& gt);

/// Unweighted sum of bce over the twelve side maps (slot order as in DecodeOutput).
LossReport total_loss(const std::vector<SaliencyMap>& side_maps, const GroundTruth& gt);

struct GraphLoss {
  ag::Var total;
  LossReport report;
};

/// Differentiable deep-supervision loss over batched side maps; `gt` is [N, H, W, 1].
GraphLoss total_loss(const DecodeOutput& out, const Tensor& gt);

} // namespace loss
} // namespace glstr
