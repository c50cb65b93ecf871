#include "glstr/loss.hpp"

#include "glstr/error.hpp"

namespace glstr::loss {

double bce(const SaliencyMap& pred, const GroundTruth& gt) {
  if (!pred.values.same_shape(gt.values)) {
    throw InputError("bce: prediction " + shape_str(pred.values.shape()) + " and ground truth " +
                     shape_str(gt.values.shape()) + " differ");
  }
  ag::NoGradGuard guard;
  return ag::bce_mean(ag::constant(pred.values), gt.values, kBceClamp)->value[0];
}

LossReport total_loss(const std::vector<SaliencyMap>& side_maps, const GroundTruth& gt) {
  if (side_maps.size() != kSideOutputs) {
    throw ConfigError("total_loss: expected 12 side maps, got " + std::to_string(side_maps.size()));
  }
  LossReport report;
  for (std::size_t i = 0; i < kSideOutputs; ++i) {
    const double l = bce(side_maps[i], gt);
    report.per_head[i / kLayersPerStage][i % kLayersPerStage] = l;
    report.total += l;
  }
  return report;
}

GraphLoss total_loss(const DecodeOutput& out, const Tensor& gt) {
  if (out.side_maps.size() != kSideOutputs) {
    throw ConfigError("total_loss: expected 12 side maps, got " + std::to_string(out.side_maps.size()));
  }
  GraphLoss result;
  std::vector<ag::Var> terms;
  terms.reserve(kSideOutputs);
  for (std::size_t i = 0; i < kSideOutputs; ++i) {
    terms.push_back(ag::bce_mean(out.side_maps[i], gt, kBceClamp));
    result.report.per_head[i / kLayersPerStage][i % kLayersPerStage] = terms.back()->value[0];
  }
  result.total = ag::sum(terms);
  result.report.total = result.total->value[0];
  return result;
}

} // namespace glstr::loss
