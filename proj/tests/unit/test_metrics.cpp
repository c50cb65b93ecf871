#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "glstr/error.hpp"
#include "glstr/image_io.hpp"
#include "glstr/metrics.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace glstr;
namespace fs = std::filesystem;
using testutil::random_tensor;
using namespace oracle;

namespace {

GroundTruth disk_mask() {
  Tensor t(Shape{16, 16}, 0.0);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      if ((x - 7.5) * (x - 7.5) + (y - 7.5) * (y - 7.5) <= 25.0) t.at({y, x}) = 1.0;
  return {t};
}

GroundTruth random_mask(std::size_t h, std::size_t w, std::mt19937_64& rng, double p = 0.3) {
  Tensor t = random_tensor({h, w}, rng, 0.0, 1.0);
  for (double& v : t.values()) v = v < p ? 1.0 : 0.0;
  return {t};
}

} // namespace

TEST_CASE("mae") {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({8, 8}, rng, 0, 1);
  CHECK(metrics::mae({a}, {a}) == 0.0);
  CHECK(metrics::mae({Tensor(Shape{4, 4}, 1.0)}, {Tensor(Shape{4, 4}, 0.0)}) == 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({8, 8}, rng, 0, 1), y = random_tensor({8, 8}, rng, 0, 1),
                 z = random_tensor({8, 8}, rng, 0, 1);
    CHECK(metrics::mae({x}, {y}) == doctest::Approx(mae_oracle(x, y)).epsilon(1e-12));
    CHECK(metrics::mae({x}, {y}) == metrics::mae({y}, {x}));
    CHECK(metrics::mae({x}, {z}) <= metrics::mae({x}, {y}) + metrics::mae({y}, {z}) + 1e-15);
  }
  CHECK_THROWS_AS(metrics::mae({Tensor(Shape{4, 4})}, {Tensor(Shape{4, 5})}), InputError);
}

TEST_CASE("f_beta analytic cases") {
  CHECK(metrics::f_beta_from_counts(5, 0, 5) == doctest::Approx(0.8125).epsilon(1e-12));
  CHECK(metrics::f_beta_from_counts(0, 3, 4) == 0.0);

  const GroundTruth g = disk_mask();
  for (FbetaMode m : {FbetaMode::adaptive, FbetaMode::max_sweep}) {
    CHECK(metrics::f_beta({g.values}, g, m) == doctest::Approx(1.0).epsilon(1e-12));
    Tensor inv = g.values;
    for (double& v : inv.values()) v = 1.0 - v;
    // the sweep's zero threshold selects every pixel, so only adaptive scores 0
    if (m == FbetaMode::adaptive) CHECK(metrics::f_beta({inv}, g, m) == 0.0);
  }
  // P = 1, R = 0.5: predict the left half of a horizontal bar
  Tensor bar(Shape{4, 8}, 0.0), half(Shape{4, 8}, 0.0);
  for (std::size_t x = 0; x < 8; ++x) bar.at({1, x}) = 1.0;
  for (std::size_t x = 0; x < 4; ++x) half.at({1, x}) = 1.0;
  CHECK(metrics::f_beta({half}, {bar}) == doctest::Approx(0.8125).epsilon(1e-9));

  const GroundTruth empty{Tensor(Shape{4, 4}, 0.0)};
  CHECK(metrics::f_beta({Tensor(Shape{4, 4}, 0.0)}, empty) == 1.0);
  Tensor blip(Shape{4, 4}, 0.0);
  blip[5] = 0.9;
  CHECK(metrics::f_beta({blip}, empty) == 0.0);
  CHECK(metrics::f_beta({blip}, empty, FbetaMode::max_sweep) == 1.0);  // threshold 1 empties it

  CHECK_THROWS_AS(metrics::f_beta({Tensor(Shape{4, 4}, 0.5)}, {Tensor(Shape{4, 4}, 0.5)}), InputError);
  CHECK_THROWS_AS(parse_fbeta_mode("weighted"), ConfigError);
}

TEST_CASE("f_beta matches brute-force thresholding") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const GroundTruth g = random_mask(9, 11, rng, trial % 10 == 0 ? 0.0 : 0.3);
    Tensor p = random_tensor({9, 11}, rng, 0, 1);
    if (trial % 3 == 0)
      for (double& v : p.values()) v = std::round(v * 255.0) / 255.0;
    if (trial % 5 == 0)
      for (double& v : p.values()) v = v < 0.3 ? 0.0 : v;
    CHECK(metrics::f_beta({p}, g) == doctest::Approx(f_adaptive_oracle(p, g.values)).epsilon(1e-12));
    CHECK(metrics::f_beta({p}, g, FbetaMode::max_sweep) ==
          doctest::Approx(f_sweep_oracle(p, g.values)).epsilon(1e-12));
  }
}

TEST_CASE("max_sweep is invariant to monotone regrading on the sweep grid") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> level(0, 15);
  for (int trial = 0; trial < 20; ++trial) {
    const GroundTruth g = random_mask(10, 10, rng);
    Tensor p(Shape{10, 10}), q(Shape{10, 10});
    for (std::size_t i = 0; i < 100; ++i) {
      const int m = level(rng);
      p[i] = 17.0 * m / 255.0;
      q[i] = std::round(289.0 * m * m / 255.0) / 255.0;  // strictly increasing in m
    }
    CHECK(metrics::f_beta({p}, g, FbetaMode::max_sweep) == metrics::f_beta({q}, g, FbetaMode::max_sweep));
  }
}

TEST_CASE("s_measure against the reference implementation") {
  // Frozen outputs of tests/oracles/smeasure_oracle.py.
  const GroundTruth disk = disk_mask();
  CHECK(metrics::s_measure({disk.values}, disk) == doctest::Approx(0.9999999999999984).epsilon(1e-12));
  CHECK(metrics::s_object({disk.values}, disk) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(metrics::s_region({disk.values}, disk) == doctest::Approx(0.9999999999999968).epsilon(1e-12));
  CHECK(metrics::s_measure({disk.values}, disk) >= 0.98);

  const SaliencyMap zero{Tensor(Shape{16, 16}, 0.0)};
  CHECK(metrics::s_measure(zero, disk) == doctest::Approx(0.34375).epsilon(1e-12));
  CHECK(metrics::s_object(zero, disk) == doctest::Approx(0.6875).epsilon(1e-12));
  CHECK(metrics::s_region(zero, disk) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(metrics::s_measure(zero, disk) < metrics::s_measure({disk.values}, disk));

  Tensor ramp(Shape{16, 16});
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) ramp.at({y, x}) = static_cast<double>((x * 7 + y * 3) % 16) / 15.0;
  CHECK(metrics::s_measure({ramp}, disk) == doctest::Approx(0.3442110190064507).epsilon(1e-12));
  CHECK(metrics::s_object({ramp}, disk) == doctest::Approx(0.6524784189185968).epsilon(1e-12));
  CHECK(metrics::s_region({ramp}, disk) == doctest::Approx(0.03594361909430452).epsilon(1e-12));

  Tensor rect(Shape{12, 20}, 0.0), shifted(Shape{12, 20}, 0.1);
  for (std::size_t y = 2; y <= 9; ++y)
    for (std::size_t x = 5; x <= 14; ++x) rect.at({y, x}) = 1.0;
  for (std::size_t y = 3; y <= 10; ++y)
    for (std::size_t x = 6; x <= 15; ++x) shifted.at({y, x}) = 0.8;
  CHECK(metrics::s_measure({shifted}, {rect}) == doctest::Approx(0.7355786514535945).epsilon(1e-12));
  CHECK(metrics::s_object({shifted}, {rect}) == doctest::Approx(0.8335425599996718).epsilon(1e-12));
  CHECK(metrics::s_region({shifted}, {rect}) == doctest::Approx(0.6376147429075172).epsilon(1e-12));
}

TEST_CASE("s_measure alpha endpoints and degenerate masks") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const GroundTruth g = random_mask(12, 12, rng);
    const SaliencyMap p{random_tensor({12, 12}, rng, 0, 1)};
    CHECK(metrics::s_measure(p, g, 1.0) == doctest::Approx(std::clamp(metrics::s_object(p, g), 0.0, 1.0)).epsilon(1e-15));
    CHECK(metrics::s_measure(p, g, 0.0) == doctest::Approx(std::clamp(metrics::s_region(p, g), 0.0, 1.0)).epsilon(1e-15));
    const double s = metrics::s_measure(p, g);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
  const SaliencyMap quarter{Tensor(Shape{4, 4}, 0.25)};
  CHECK(metrics::s_measure(quarter, {Tensor(Shape{4, 4}, 0.0)}) == doctest::Approx(0.75));
  CHECK(metrics::s_measure(quarter, {Tensor(Shape{4, 4}, 1.0)}) == doctest::Approx(0.25));
}

TEST_CASE("s_measure drops as pixels are misclassified on the disk") {
  const GroundTruth disk = disk_mask();
  const double exact = metrics::s_measure({disk.values}, disk);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor p = disk.values;
    const std::size_t flips = 1 + trial;
    std::vector<std::size_t> idx(256);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < flips; ++k) p[idx[k]] = 1.0 - p[idx[k]];
    CHECK(metrics::s_measure({p}, disk) <= exact);
  }
}

TEST_CASE("aggregate is an unweighted, order-free mean") {
  std::vector<ImageMetrics> rows{{"b", 0.2, 0.5, 0.7, false}, {"a", 0.4, 0.9, 0.1, false}};
  const MetricReport r = metrics::aggregate("set", FbetaMode::adaptive, rows);
  CHECK(r.mae == doctest::Approx(0.3));
  CHECK(r.f_beta == doctest::Approx(0.7));
  CHECK(r.s_measure == doctest::Approx(0.4));
  CHECK(r.rows.front().stem == "a");
  std::swap(rows[0], rows[1]);
  CHECK(metrics::aggregate("set", FbetaMode::adaptive, rows).mae == r.mae);
  CHECK(metrics::reports_csv({r}) == "dataset,MAE,Fbeta,S\nset,0.300000,0.700000,0.400000\n");
}

TEST_CASE("evaluate_dataset") {
  testutil::TempDir dir("metrics");
  const fs::path preds = dir.path / "preds", gts = dir.path / "toy" / "masks";
  fs::create_directories(preds);
  fs::create_directories(gts);
  std::mt19937_64 rng(6);
  double mae_sum = 0.0, f_sum = 0.0, s_sum = 0.0;
  for (int i = 0; i < 10; ++i) {
    const std::string stem = "img" + std::to_string(i);
    const GroundTruth g = random_mask(16, 16, rng);
    Tensor p = random_tensor({16, 16}, rng, 0, 1);
    for (double& v : p.values()) v = std::round(v * 255.0) / 255.0;
    io::write_gray(gts / (stem + ".png"), g.values);
    io::write_gray(preds / (stem + ".png"), p);
    mae_sum += mae_oracle(p, g.values);
    f_sum += f_adaptive_oracle(p, g.values);
    s_sum += metrics::s_measure({p}, g);
  }
  io::write_gray(preds / "orphan.png", Tensor(Shape{16, 16}, 0.0));

  const MetricReport r = metrics::evaluate_dataset(preds, gts, FbetaMode::adaptive);
  CHECK(r.rows.size() == 10);
  CHECK(r.dataset == "toy");
  CHECK(r.mae == doctest::Approx(mae_sum / 10).epsilon(1e-9));
  CHECK(r.f_beta == doctest::Approx(f_sum / 10).epsilon(1e-9));
  CHECK(r.s_measure == doctest::Approx(s_sum / 10).epsilon(1e-9));
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0] == "orphan: no ground-truth mask");

  const auto j = nlohmann::json::parse(metrics::report_json(r));
  CHECK(j["images"] == 10);
  CHECK(j["per_image"].size() == 10);
  CHECK(j["fbeta_mode"] == "adaptive");

  const fs::path other = dir.path / "other";
  fs::create_directories(other);
  io::write_gray(other / "zzz.png", Tensor(Shape{16, 16}, 0.0));
  CHECK_THROWS_AS(metrics::evaluate_dataset(other, gts, FbetaMode::adaptive), InputError);
}
