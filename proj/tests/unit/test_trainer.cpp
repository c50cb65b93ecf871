#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "glstr/config.hpp"
#include "glstr/error.hpp"
#include "glstr/trainer.hpp"
#include "helpers.hpp"

using namespace glstr;
namespace fs = std::filesystem;

namespace {

std::vector<SamplePair> synth_set(std::size_t n) {
  SynthSpec spec;
  spec.count = n;
  std::vector<SamplePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    SamplePair p = data::synth_sample(spec, i, 100 + i);
    p.stem = "s" + std::to_string(i);
    out.push_back(std::move(p));
  }
  return out;
}

TrainConfig small_run() {
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 4;
  t.seed = 5;
  return t;
}

} // namespace

TEST_CASE("lr_schedule") {
  const TrainConfig cfg;
  CHECK(lr_schedule(0, 1000, cfg) == 1e-3);
  CHECK(lr_schedule(1000, 1000, cfg) == 1e-5);
  CHECK(lr_schedule(500, 1000, cfg) == doctest::Approx(5.05e-4).epsilon(1e-12));
  double prev = lr_schedule(0, 999, cfg);
  for (std::size_t s = 1; s <= 999; ++s) {
    const double lr = lr_schedule(s, 999, cfg);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_schedule(1001, 1000, cfg), InputError);

  TrainConfig poly = cfg;
  poly.schedule = LrSchedule::poly;
  CHECK(lr_schedule(0, 100, poly) == 1e-3);
  CHECK(lr_schedule(100, 100, poly) == 1e-5);
  CHECK(lr_schedule(50, 100, poly) == doctest::Approx(1e-5 + (1e-3 - 1e-5) * std::pow(0.5, 0.9)).epsilon(1e-12));
}

TEST_CASE("sgd_update") {
  SUBCASE("zero gradient, buffer and decay leave weights alone") {
    Tensor w(Shape{3}, {1.0, -2.0, 0.5}), g(Shape{3}, 0.0), b(Shape{3}, 0.0);
    const Tensor before = w;
    sgd_update(w, g, b, 0.1, 0.9, 0.0);
    CHECK(testutil::max_abs_diff(w, before) == 0.0);
  }
  SUBCASE("plain gradient step") {
    Tensor w(Shape{2}, {1.0, 2.0}), g(Shape{2}, {0.5, -0.25}), b(Shape{2}, 0.0);
    sgd_update(w, g, b, 0.1, 0.0, 0.0);
    CHECK(w[0] == 1.0 - 0.1 * 0.5);
    CHECK(w[1] == 2.0 + 0.1 * 0.25);
  }
  SUBCASE("two steps on a quadratic") {
    // f(w) = 1.5 w^2, lr 0.1, momentum 0.9, weight decay 0.01, w0 = 2
    Tensor w(Shape{1}, 2.0), b(Shape{1}, 0.0);
    for (int i = 0; i < 2; ++i) sgd_update(w, Tensor(Shape{1}, 3.0 * w[0]), b, 0.1, 0.9, 0.01);
    // step 1: b = 6 + 0.02 = 6.02, w = 2 - 0.602 = 1.398
    // step 2: b = 0.9*6.02 + 4.194 + 0.01398 = 9.62598, w = 1.398 - 0.962598 = 0.435402
    CHECK(b[0] == doctest::Approx(9.62598).epsilon(1e-12));
    CHECK(w[0] == doctest::Approx(0.435402).epsilon(1e-12));
  }
  SUBCASE("zero learning rate is the identity") {
    Tensor w(Shape{2}, {0.3, 0.4}), b(Shape{2}, {1.0, 1.0});
    sgd_update(w, Tensor(Shape{2}, 5.0), b, 0.0, 0.9, 0.1);
    CHECK(w[0] == 0.3);
    CHECK(w[1] == 0.4);
  }
  Tensor w(Shape{2}), b(Shape{2});
  CHECK_THROWS_AS(sgd_update(w, Tensor(Shape{3}), b, 0.1, 0.9, 0.0), ConfigError);
}

TEST_CASE("batches are drop-last permutations") {
  Model model(ModelConfig::tiny(), 1);
  Trainer t(model, small_run(), SampleSource::in_memory(synth_set(10)));
  CHECK(t.steps_per_epoch() == 2);
  CHECK(t.total_steps() == 6);
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    std::set<std::size_t> seen;
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t i : t.batch_indices(epoch * 2 + k)) seen.insert(i);
    CHECK(seen.size() == 8);
  }
  CHECK(t.batch_indices(0) != t.batch_indices(2));
  CHECK_THROWS_AS(Trainer(model, small_run(), SampleSource::in_memory(synth_set(3))), InputError);
}

TEST_CASE("identical seeds give identical loss curves") {
  std::vector<double> curves[2];
  for (auto& curve : curves) {
    Model model(ModelConfig::tiny(), 3);
    Trainer t(model, small_run(), SampleSource::in_memory(synth_set(8)));
    t.run();
    for (const auto& r : t.history()) curve.push_back(r.loss.total);
  }
  CHECK(curves[0].size() == 6);
  CHECK(curves[0] == curves[1]);
}

TEST_CASE("resume reproduces the next step") {
  testutil::TempDir dir("trainer_resume");
  Model model(ModelConfig::tiny(), 4);
  Trainer t(model, small_run(), SampleSource::in_memory(synth_set(8)), {dir.path, {}});
  t.run();
  CHECK(fs::exists(dir.path / "final.ckpt"));
  for (const char* name : {"epoch_0001.ckpt", "epoch_0002.ckpt", "epoch_0003.ckpt"})
    CHECK(fs::exists(dir.path / "checkpoints" / name));

  std::ifstream log(dir.path / "train_log.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["per_head"].size() == 12);
    CHECK(j["step"] == lines);
    ++lines;
  }
  CHECK(lines == 6);

  Model fresh(ModelConfig::tiny(), 99);
  Trainer r(fresh, small_run(), SampleSource::in_memory(synth_set(8)));
  r.resume(dir.path / "checkpoints" / "epoch_0001.ckpt");
  CHECK(r.step() == 2);
  const StepRecord next = r.step_once();
  CHECK(next.loss.total == doctest::Approx(t.history()[2].loss.total).epsilon(1e-6));
  CHECK(next.lr == t.history()[2].lr);

  ModelConfig other = ModelConfig::tiny();
  other.decoder.density = 2;
  Model mismatched(other, 1);
  Trainer bad(mismatched, small_run(), SampleSource::in_memory(synth_set(8)));
  CHECK_THROWS_AS(bad.resume(dir.path / "final.ckpt"), ConfigError);
}

TEST_CASE("divergence writes a snapshot and aborts") {
  testutil::TempDir dir("trainer_diverge");
  Model model(ModelConfig::tiny(), 5);
  model.params().get("decoder.deep.head.s1j1.b")->value[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer t(model, small_run(), SampleSource::in_memory(synth_set(8)), {dir.path, {}});
  CHECK_THROWS_AS(t.step_once(), DivergenceError);
  CHECK(fs::exists(dir.path / "diverged.ckpt"));
  CHECK(fs::exists(dir.path / "diverged.json"));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.lr_end = 1e-2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
