#include "glstr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include <json.hpp>

#include "glstr/autograd.hpp"
#include "glstr/error.hpp"
#include "glstr/image_io.hpp"

namespace glstr {

std::string to_string(FbetaMode m) { return m == FbetaMode::adaptive ? "adaptive" : "max_sweep"; }

FbetaMode parse_fbeta_mode(const std::string& s) {
  if (s == "adaptive") return FbetaMode::adaptive;
  if (s == "max_sweep") return FbetaMode::max_sweep;
  throw ConfigError("fbeta mode: unknown value '" + s + "' (adaptive, max_sweep)");
}

namespace metrics {

namespace {

// MATLAB's eps, as used by the reference S-measure code.
constexpr double kEps = std::numeric_limits<double>::epsilon();

void check_pair(const SaliencyMap& pred, const GroundTruth& gt, const char* op) {
  if (pred.values.rank() != 2 || !pred.values.same_shape(gt.values)) {
    throw InputError(std::string(op) + ": prediction " + shape_str(pred.values.shape()) + " and ground truth " +
                     shape_str(gt.values.shape()) + " differ");
  }
  if (pred.values.numel() == 0) throw InputError(std::string(op) + ": empty maps");
}

void check_binary(const GroundTruth& gt, const char* op) {
  if (!gt.is_binary()) throw InputError(std::string(op) + ": ground truth must be binary");
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// 2x / (x^2 + 1 + sigma_x + eps) over the pixels selected by `mask`.
double object_score(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double n = static_cast<double>(values.size());
  double x = 0.0;
  for (double v : values) x += v;
  x /= n;
  double sigma = 0.0;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - x) * (v - x);
    sigma = std::sqrt(ss / (n - 1.0));
  }
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

// SSIM-style similarity of one region; pixels given as parallel arrays.
double region_ssim(const std::vector<double>& p, const std::vector<double>& g) {
  const double N = static_cast<double>(p.size());
  double x = 0.0, y = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    x += p[i];
    y += g[i];
  }
  x /= N;
  y /= N;
  double sx = 0.0, sy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sx += (p[i] - x) * (p[i] - x);
    sy += (g[i] - y) * (g[i] - y);
    sxy += (p[i] - x) * (g[i] - y);
  }
  sx /= (N - 1.0 + kEps);
  sy /= (N - 1.0 + kEps);
  sxy /= (N - 1.0 + kEps);
  const double alpha = 4.0 * x * y * sxy;
  const double beta = (x * x + y * y) * (sx + sy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  if (beta == 0.0) return 1.0;
  return 0.0;
}

} // namespace

double mae(const SaliencyMap& pred, const GroundTruth& gt) {
  check_pair(pred, gt, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.values.numel(); ++i) s += std::abs(pred.values[i] - gt.values[i]);
  return s / static_cast<double>(pred.values.numel());
}

double f_beta_from_counts(double tp, double fp, double fn) {
  const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
  const double recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return (1.0 + kBetaSquared) * precision * recall / (kBetaSquared * precision + recall);
}

double f_beta(const SaliencyMap& pred, const GroundTruth& gt, FbetaMode mode) {
  check_pair(pred, gt, "f_beta");
  check_binary(gt, "f_beta");
  const std::size_t n = pred.values.numel();
  double positives = 0.0;
  for (double g : gt.values.values()) positives += g;
  const bool degenerate = positives == 0.0;

  if (mode == FbetaMode::adaptive) {
    const double threshold = std::min(2.0 * mean_of(pred.values.values()), 1.0);
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = pred.values[i];
      if (p > 0.0 && p >= threshold) (gt.values[i] > 0.0 ? tp : fp) += 1.0;
    }
    if (degenerate) return tp + fp == 0.0 ? 1.0 : 0.0;
    return f_beta_from_counts(tp, fp, positives - tp);
  }

  // Histogram of the highest sweep threshold each pixel clears.
  std::vector<double> tp_at(kSweepThresholds, 0.0), fp_at(kSweepThresholds, 0.0);
  const auto top = static_cast<long>(kSweepThresholds - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pred.values[i];
    long k = std::clamp(static_cast<long>(std::floor(p * 255.0)), -1L, top);
    while (k < top && static_cast<double>(k + 1) / 255.0 <= p) ++k;
    while (k >= 0 && static_cast<double>(k) / 255.0 > p) --k;
    if (k < 0) continue;
    (gt.values[i] > 0.0 ? tp_at : fp_at)[static_cast<std::size_t>(k)] += 1.0;
  }
  double best = 0.0, tp = 0.0, fp = 0.0;
  for (std::size_t k = kSweepThresholds; k-- > 0;) {
    tp += tp_at[k];
    fp += fp_at[k];
    const double score = degenerate ? (tp + fp == 0.0 ? 1.0 : 0.0) : f_beta_from_counts(tp, fp, positives - tp);
    best = std::max(best, score);
  }
  return best;
}

double s_object(const SaliencyMap& pred, const GroundTruth& gt) {
  check_pair(pred, gt, "s_object");
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < pred.values.numel(); ++i) {
    if (gt.values[i] > 0.5) {
      fg.push_back(pred.values[i]);
    } else {
      bg.push_back(1.0 - pred.values[i]);
    }
  }
  const double u = static_cast<double>(fg.size()) / static_cast<double>(pred.values.numel());
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

double s_region(const SaliencyMap& pred, const GroundTruth& gt) {
  check_pair(pred, gt, "s_region");
  const std::size_t H = gt.height(), W = gt.width();
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double g = gt.values[y * W + x];
      total += g;
      sx += g * static_cast<double>(x + 1);
      sy += g * static_cast<double>(y + 1);
    }
  // Split point as a 1-based count of leading columns / rows.
  std::size_t X, Y;
  if (total == 0.0) {
    X = static_cast<std::size_t>(std::round(static_cast<double>(W) / 2.0));
    Y = static_cast<std::size_t>(std::round(static_cast<double>(H) / 2.0));
  } else {
    X = static_cast<std::size_t>(std::round(sx / total));
    Y = static_cast<std::size_t>(std::round(sy / total));
  }
  const double area = static_cast<double>(H * W);
  const std::array<std::array<std::size_t, 4>, 4> regions{{
      {0, Y, 0, X},  // left-top
      {0, Y, X, W},  // right-top
      {Y, H, 0, X},  // left-bottom
      {Y, H, X, W},  // right-bottom
  }};
  double score = 0.0;
  for (const auto& [y0, y1, x0, x1] : regions) {
    if (y1 <= y0 || x1 <= x0) continue;  // empty quadrant has zero weight
    std::vector<double> p, g;
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) {
        p.push_back(pred.values[y * W + x]);
        g.push_back(gt.values[y * W + x]);
      }
    score += static_cast<double>((y1 - y0) * (x1 - x0)) / area * region_ssim(p, g);
  }
  return score;
}

double s_measure(const SaliencyMap& pred, const GroundTruth& gt, double alpha) {
  check_pair(pred, gt, "s_measure");
  check_binary(gt, "s_measure");
  const double y = mean_of(gt.values.values());
  if (y == 0.0) return std::clamp(1.0 - mean_of(pred.values.values()), 0.0, 1.0);
  if (y == 1.0) return std::clamp(mean_of(pred.values.values()), 0.0, 1.0);
  const double q = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt);
  return std::clamp(q, 0.0, 1.0);
}

ImageMetrics evaluate_image(const std::string& stem, const SaliencyMap& pred, const GroundTruth& gt, FbetaMode mode) {
  ImageMetrics m;
  m.stem = stem;
  m.mae = mae(pred, gt);
  m.f_beta = f_beta(pred, gt, mode);
  m.s_measure = s_measure(pred, gt);
  m.degenerate_gt = std::all_of(gt.values.values().begin(), gt.values.values().end(), [](double v) { return v == 0.0; });
  return m;
}

MetricReport aggregate(std::string dataset, FbetaMode mode, std::vector<ImageMetrics> rows,
                       std::vector<std::string> warnings) {
  std::sort(rows.begin(), rows.end(), [](const ImageMetrics& a, const ImageMetrics& b) { return a.stem < b.stem; });
  MetricReport r;
  r.dataset = std::move(dataset);
  r.mode = mode;
  for (const auto& row : rows) {
    r.mae += row.mae;
    r.f_beta += row.f_beta;
    r.s_measure += row.s_measure;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    r.mae /= n;
    r.f_beta /= n;
    r.s_measure /= n;
  }
  r.rows = std::move(rows);
  r.warnings = std::move(warnings);
  return r;
}

MetricReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                              FbetaMode mode, const std::string& dataset_name) {
  std::map<std::string, std::filesystem::path> preds, gts;
  for (const auto& p : io::list_images(pred_dir)) preds.emplace(p.stem().string(), p);
  for (const auto& p : io::list_images(gt_dir)) gts.emplace(p.stem().string(), p);

  std::vector<std::string> warnings;
  std::vector<ImageMetrics> rows;
  for (const auto& [stem, pred_path] : preds) {
    auto it = gts.find(stem);
    if (it == gts.end()) {
      warnings.push_back(stem + ": no ground-truth mask");
      continue;
    }
    try {
      SaliencyMap pred = io::read_saliency(pred_path);
      GroundTruth gt = io::read_mask(it->second);
      if (!pred.values.same_shape(gt.values)) {
        ag::NoGradGuard guard;
        auto resized = ag::resize_bilinear(
            ag::constant(pred.values.reshaped(Shape{1, pred.height(), pred.width(), 1})), gt.height(), gt.width());
        pred.values = resized->value.reshaped(Shape{gt.height(), gt.width()});
      }
      rows.push_back(evaluate_image(stem, pred, gt, mode));
    } catch (const std::exception& e) {
      warnings.push_back(stem + ": " + e.what());
    }
  }
  for (const auto& [stem, path] : gts)
    if (!preds.contains(stem)) warnings.push_back(stem + ": no prediction");
  if (rows.empty()) {
    throw InputError("evaluate: no stem-matched prediction/mask pairs between '" + pred_dir.string() + "' and '" +
                     gt_dir.string() + "'");
  }
  const std::string name = dataset_name.empty() ? gt_dir.parent_path().filename().string() : dataset_name;
  return aggregate(name, mode, std::move(rows), std::move(warnings));
}

std::string report_json(const MetricReport& report) {
  nlohmann::json j;
  j["dataset"] = report.dataset;
  j["fbeta_mode"] = to_string(report.mode);
  j["MAE"] = report.mae;
  j["Fbeta"] = report.f_beta;
  j["S"] = report.s_measure;
  j["images"] = report.rows.size();
  j["warnings"] = report.warnings;
  j["warning_count"] = report.warnings.size();
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"stem", r.stem},
                    {"MAE", r.mae},
                    {"Fbeta", r.f_beta},
                    {"S", r.s_measure},
                    {"degenerate_gt", r.degenerate_gt}});
  }
  j["per_image"] = std::move(rows);
  return j.dump(2);
}

std::string reports_csv(const std::vector<MetricReport>& reports) {
  std::string out = "dataset,MAE,Fbeta,S\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", r.dataset.c_str(), r.mae, r.f_beta, r.s_measure);
    out += buf;
  }
  return out;
}

} // namespace metrics
} // namespace glstr
