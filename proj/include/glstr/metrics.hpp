#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "glstr/types.hpp"

namespace glstr {

enum class FbetaMode { adaptive, max_sweep };

std::string to_string(FbetaMode m);
FbetaMode parse_fbeta_mode(const std::string& s);

inline constexpr double kBetaSquared = 0.3;
inline constexpr std::size_t kSweepThresholds = 256;

struct ImageMetrics {
  std::string stem;
  double mae = 0.0;
  double f_beta = 0.0;
  double s_measure = 0.0;
  bool degenerate_gt = false;  // ground truth has no foreground
};

struct MetricReport {
  std::string dataset;
  FbetaMode mode = FbetaMode::adaptive;
  double mae = 0.0;
  double f_beta = 0.0;
  double s_measure = 0.0;
  std::vector<ImageMetrics> rows;     // sorted by stem
  std::vector<std::string> warnings;  // per-file problems; the run continues past them
};

namespace metrics {

double mae(const SaliencyMap& pred, const GroundTruth& gt);

/// (1 + b^2) P R / (b^2 P + R) with b^2 = 0.3; zero when P + R = 0.
double f_beta_from_counts(double tp, double fp, double fn);

/// Adaptive mode binarises at min(2 * mean(pred), 1) and counts a pixel as
/// foreground when pred > 0 and pred >= threshold. max_sweep takes the best
/// score over thresholds k/255, k = 0..255 (pred >= threshold). With an
/// all-background ground truth the score is 1 when the prediction binarises
/// to empty and 0 otherwise.
double f_beta(const SaliencyMap& pred, const GroundTruth& gt, FbetaMode mode = FbetaMode::adaptive);

/// Object-aware structural similarity.
double s_object(const SaliencyMap& pred, const GroundTruth& gt);
/// Region-aware structural similarity (four quadrants about the centroid).
double s_region(const SaliencyMap& pred, const GroundTruth& gt);
/// alpha * S_o + (1 - alpha) * S_r clamped to [0, 1]; all-background or
/// all-foreground ground truth scores 1 - mean(pred) or mean(pred).
double s_measure(const SaliencyMap& pred, const GroundTruth& gt, double alpha = 0.5);

ImageMetrics evaluate_image(const std::string& stem, const SaliencyMap& pred, const GroundTruth& gt, FbetaMode mode);

/// Unweighted means over `rows` (sorted by stem first).
MetricReport aggregate(std::string dataset, FbetaMode mode, std::vector<ImageMetrics> rows,
                       std::vector<std::string> warnings = {});

/// Stem-matches 8-bit prediction files against 8-bit masks (binarised at 128).
/// Unmatched files become warnings; an empty intersection throws InputError.
MetricReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                              FbetaMode mode, const std::string& dataset_name = {});

std::string report_json(const MetricReport& report);
/// "dataset,MAE,Fbeta,S" header plus one row per report.
std::string reports_csv(const std::vector<MetricReport>& reports);

} // namespace metrics
} // namespace glstr
