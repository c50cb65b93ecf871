#include <doctest.h>

#include <fstream>

#include "glstr/config.hpp"
#include "glstr/error.hpp"
#include "helpers.hpp"

using namespace glstr;
namespace fs = std::filesystem;
using testutil::random_tensor;

TEST_CASE("checkpoint container round trip") {
  testutil::TempDir dir("ckpt");
  std::mt19937_64 rng(1);
  checkpoint::Archive a;
  a.meta = {{"hello", "world"}, {"n", 3}};
  a.arrays = {{"x", random_tensor({2, 3, 4}, rng)}, {"scalar", Tensor(Shape{1}, 0.1)}, {"empty.dims", Tensor(Shape{0})}};
  checkpoint::write(dir.path / "a.ckpt", a);
  CHECK(!fs::exists(dir.path / "a.ckpt.tmp"));
  const checkpoint::Archive b = checkpoint::read(dir.path / "a.ckpt");
  CHECK(b.meta == a.meta);
  REQUIRE(b.arrays.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(b.arrays[i].first == a.arrays[i].first);
    CHECK(b.arrays[i].second.shape() == a.arrays[i].second.shape());
    CHECK(testutil::max_abs_diff(b.arrays[i].second, a.arrays[i].second) == 0.0);
  }
  CHECK(b.find("scalar") != nullptr);
  CHECK(b.find("nope") == nullptr);

  std::ofstream(dir.path / "junk.ckpt") << "GLSTRCK0 garbage";
  CHECK_THROWS_AS(checkpoint::read(dir.path / "junk.ckpt"), IoError);
  CHECK_THROWS_AS(checkpoint::read(dir.path / "missing.ckpt"), IoError);

  // truncation anywhere is reported, never read past
  std::ifstream is(dir.path / "a.ckpt", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::ofstream(dir.path / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  CHECK_THROWS_AS(checkpoint::read(dir.path / "cut.ckpt"), IoError);
}

TEST_CASE("model save and load is bit-identical") {
  testutil::TempDir dir("model_ckpt");
  std::mt19937_64 rng(2);
  Model model(ModelConfig::tiny(), 7);
  // move the batch-norm buffers off their defaults so they are exercised too
  for (const auto& [name, stats] : model.buffers().entries()) stats->running_var.fill(1.7);
  save_model(dir.path / "m.ckpt", model);
  const auto loaded = load_model(dir.path / "m.ckpt");
  const Tensor img = random_tensor({2, 32, 32, 3}, rng, 0, 1);
  const ForwardResult a = model.forward(img, false), b = loaded->forward(img, false);
  for (std::size_t k = 0; k < 12; ++k) CHECK(testutil::max_abs_diff(a.output.side_maps[k]->value, b.output.side_maps[k]->value) == 0.0);

  ModelConfig other = ModelConfig::tiny();
  other.decoder.channels = 4;
  Model wrong(other, 1);
  checkpoint::Archive arch = checkpoint::read(dir.path / "m.ckpt");
  CHECK_THROWS_AS(wrong.assign(arch.arrays), ConfigError);
  arch.arrays.pop_back();
  CHECK_THROWS_AS(model.assign(arch.arrays), ConfigError);
}

TEST_CASE("config resolution") {
  const RunConfig tiny = resolve_config("tiny");
  CHECK(tiny.model.input_size == 32);
  CHECK(tiny.train.epochs == 40);
  const RunConfig ref = resolve_config("reference");
  CHECK(ref.model.encoder.embed_dim == 768);
  CHECK(ref.model.decoder.channels == 64);
  CHECK(ref.train.lr_start == 1e-3);

  const RunConfig o = resolve_config("tiny", {{"decoder.density", "2"},
                                             {"train.lr_start", "0.01"},
                                             {"train.augment", "false"},
                                             {"decoder.upsample", "setr4x4x"}});
  CHECK(o.model.decoder.density == 2);
  CHECK(o.train.lr_start == 0.01);
  CHECK(!o.train.augment);
  CHECK(o.model.decoder.upsample == UpsampleStrategy::setr4x4x);

  const RunConfig inline_json = resolve_config(R"({"preset": "tiny", "train": {"epochs": 2}})");
  CHECK(inline_json.train.epochs == 2);
  CHECK(run_config_from_json(to_json(o)).model.decoder.density == 2);
  CHECK(to_json(run_config_from_json(to_json(o))) == to_json(o));

  CHECK_THROWS_WITH_AS(resolve_config(R"({"model": {"decoder": {"densty": 2}}})"),
                       "unknown config field 'model.decoder.densty'", ConfigError);
  CHECK_THROWS_AS(resolve_config("tiny", {{"decoder.density", "two"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config("tiny", {{"decoder.density", "-1"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config("tiny", {{"decoder.density", "7"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config("tiny", {{"train.augment", "maybe"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config("tiny", {{"decoder", "x"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config("tiny", {{"encoder.num_heads", "3"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config("no_such_preset_or_file"), ConfigError);
  CHECK_THROWS_AS(resolve_config("{not json"), ConfigError);
}

TEST_CASE("load_matching copies named arrays and keeps the rest") {
  testutil::TempDir dir("load_matching");
  Model source(ModelConfig::tiny(), 1), target(ModelConfig::tiny(), 2);
  checkpoint::Archive a;
  for (const auto& [name, t] : source.arrays())
    if (!name.starts_with("decoder.")) a.arrays.emplace_back(name, t);
  a.arrays.emplace_back("head.unused", Tensor(Shape{3}, 1.0));
  checkpoint::write(dir.path / "enc.ckpt", a);

  const auto before = target.arrays();
  CHECK(load_matching(target, dir.path / "enc.ckpt") == a.arrays.size() - 1);
  const auto after = target.arrays(), src = source.arrays();
  for (std::size_t i = 0; i < after.size(); ++i) {
    const Tensor& expected = after[i].first.starts_with("decoder.") ? before[i].second : src[i].second;
    CHECK(testutil::max_abs_diff(after[i].second, expected) == 0.0);
  }

  a.arrays = {{"pos_embed", Tensor(Shape{3, 3})}};
  checkpoint::write(dir.path / "bad.ckpt", a);
  CHECK_THROWS_AS(load_matching(target, dir.path / "bad.ckpt"), ConfigError);
  a.arrays = {{"nothing.here", Tensor(Shape{1})}};
  checkpoint::write(dir.path / "none.ckpt", a);
  CHECK_THROWS_AS(load_matching(target, dir.path / "none.ckpt"), ConfigError);
}

TEST_CASE("train.init_checkpoint round-trips through the config") {
  const RunConfig c = resolve_config("tiny", {{"train.init_checkpoint", "vit.ckpt"}});
  CHECK(c.train.init_checkpoint == "vit.ckpt");
  CHECK(resolve_config("tiny").train.init_checkpoint.empty());
}
