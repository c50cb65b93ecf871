#include <doctest.h>

#include <cmath>

#include "glstr/encoder.hpp"
#include "glstr/error.hpp"
#include "glstr/model.hpp"
#include "glstr/patchify.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace glstr;
using testutil::max_abs_diff;
using testutil::random_tensor;
using namespace oracle;

namespace {

LayerWeights zero_branches(LayerWeights w) {
  w.proj_w.fill(0.0);
  w.proj_b.fill(0.0);
  w.fc2_w.fill(0.0);
  w.fc2_b.fill(0.0);
  return w;
}

LayerWeights weights_from(const Model& m, std::size_t layer) {
  const std::string p = "encoder.layer." + std::to_string(layer);
  auto g = [&](const char* s) { return m.params().get(p + s)->value; };
  return {g(".ln1.gamma"), g(".ln1.beta"), g(".attn.wq"),  g(".attn.bq"),  g(".attn.wk"),
          g(".attn.bk"),   g(".attn.wv"),  g(".attn.bv"),  g(".attn.proj.w"), g(".attn.proj.b"),
          g(".ln2.gamma"), g(".ln2.beta"), g(".mlp.fc1.w"), g(".mlp.fc1.b"), g(".mlp.fc2.w"), g(".mlp.fc2.b")};
}

} // namespace

TEST_CASE("add_positional") {
  std::mt19937_64 rng(1);
  const TokenSequence x{random_tensor({4, 6}, rng), 2, 2};
  const PositionalCode pos{random_tensor({4, 6}, rng)};
  CHECK(max_abs_diff(encoder::add_positional(x, {Tensor(Shape{4, 6}, 0.0)}).tokens, x.tokens) == 0.0);
  CHECK(max_abs_diff(encoder::add_positional({Tensor(Shape{4, 6}, 0.0), 2, 2}, pos).tokens, pos.table) == 0.0);
  const Tensor sum = encoder::add_positional(x, pos).tokens;
  for (std::size_t i = 0; i < sum.numel(); ++i) CHECK(sum[i] == x.tokens[i] + pos.table[i]);
  CHECK_THROWS_AS(encoder::add_positional(x, {Tensor(Shape{5, 6})}), InputError);
}

TEST_CASE("self_attention with a single token returns its value row") {
  std::mt19937_64 rng(2);
  const Tensor F = random_tensor({1, 4}, rng);
  const HeadWeights h{random_tensor({4, 2}, rng), random_tensor({2}, rng), random_tensor({4, 2}, rng),
                      random_tensor({2}, rng),    random_tensor({4, 2}, rng), random_tensor({2}, rng)};
  CHECK(encoder::attention_weights(F, h)[0] == 1.0);
  CHECK(max_abs_diff(encoder::self_attention(F, h), affine(F, h.wv, h.bv)) < 1e-15);
}

TEST_CASE("self_attention over constant value rows returns that constant") {
  std::mt19937_64 rng(3);
  const Tensor F = random_tensor({5, 4}, rng);
  const Tensor bv = random_tensor({2}, rng);
  const HeadWeights h{random_tensor({4, 2}, rng), random_tensor({2}, rng), random_tensor({4, 2}, rng),
                      random_tensor({2}, rng),    Tensor(Shape{4, 2}, 0.0), bv};
  const Tensor out = encoder::self_attention(F, h);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 2; ++k) CHECK(out.at({i, k}) == doctest::Approx(bv[k]).epsilon(1e-14));
}

TEST_CASE("self_attention matches the three-loop oracle") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor F = random_tensor({3, 4}, rng);
    const HeadWeights h{random_tensor({4, 2}, rng), random_tensor({2}, rng), random_tensor({4, 2}, rng),
                        random_tensor({2}, rng),    random_tensor({4, 2}, rng), random_tensor({2}, rng)};
    CHECK(max_abs_diff(encoder::self_attention(F, h), oracle_attention(F, h)) < 1e-6);
    const Tensor P = encoder::attention_weights(F, h);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(P.at({i, j}) >= 0.0);
        s += P.at({i, j});
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("multi_head_attention") {
  std::mt19937_64 rng(5);
  SUBCASE("one head is self-attention then projection") {
    const LayerWeights w = testutil::random_weights(4, 8, rng);
    const Tensor F = random_tensor({3, 4}, rng);
    const Tensor expected = affine(encoder::self_attention(F, w.head(0, 1)), w.proj_w, w.proj_b);
    CHECK(max_abs_diff(encoder::multi_head_attention(F, w, 1), expected) < 1e-12);
  }
  SUBCASE("duplicate heads give identical halves before projection") {
    LayerWeights w = testutil::random_weights(4, 8, rng);
    for (Tensor* m : {&w.wq, &w.wk, &w.wv})
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 2; ++k) m->at({i, 2 + k}) = m->at({i, k});
    for (Tensor* b : {&w.bq, &w.bk, &w.bv})
      for (std::size_t k = 0; k < 2; ++k) (*b)[2 + k] = (*b)[k];
    Tensor eye(Shape{4, 4}, 0.0);
    for (std::size_t i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
    w.proj_w = eye;
    w.proj_b.fill(0.0);
    const Tensor out = encoder::multi_head_attention(random_tensor({3, 4}, rng), w, 2);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < 2; ++k) CHECK(out.at({i, k}) == out.at({i, 2 + k}));
  }
  SUBCASE("two heads match the per-head oracle") {
    for (int trial = 0; trial < 20; ++trial) {
      const LayerWeights w = testutil::random_weights(4, 8, rng);
      const Tensor F = random_tensor({3, 4}, rng);
      CHECK(max_abs_diff(encoder::multi_head_attention(F, w, 2), oracle_mha(F, w, 2)) < 1e-6);
    }
  }
  SUBCASE("head count must divide the width") {
    CHECK_THROWS_AS(encoder::multi_head_attention(random_tensor({3, 4}, rng), testutil::random_weights(4, 8, rng), 3),
                    ConfigError);
  }
}

TEST_CASE("transformer_layer") {
  std::mt19937_64 rng(6);
  const LayerWeights w = testutil::random_weights(8, 32, rng);
  const Tensor F = random_tensor({4, 8}, rng);
  CHECK(encoder::transformer_layer(F, w, 2).shape() == Shape{4, 8});
  CHECK(max_abs_diff(encoder::transformer_layer(F, zero_branches(w), 2), F) == 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    const LayerWeights wt = testutil::random_weights(8, 32, rng);
    const Tensor Ft = random_tensor({4, 8}, rng);
    CHECK(max_abs_diff(encoder::transformer_layer(Ft, wt, 2), oracle_layer(Ft, wt, 2)) < 1e-5);
  }
}

TEST_CASE("transformer_layer stays finite on large inputs") {
  std::mt19937_64 rng(7);
  const LayerWeights w = testutil::random_weights(8, 32, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor out = encoder::transformer_layer(random_tensor({6, 8}, rng, -1e3, 1e3), w, 2);
    for (double v : out.values()) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("encode") {
  std::mt19937_64 rng(8);
  EncoderConfig cfg;
  cfg.embed_dim = 8;
  cfg.num_heads = 2;
  cfg.mlp_hidden = 32;
  cfg.num_layers = 12;
  std::vector<LayerWeights> layers;
  for (int i = 0; i < 12; ++i) layers.push_back(zero_branches(testutil::random_weights(8, 32, rng)));
  const TokenSequence f0{random_tensor({4, 8}, rng), 2, 2};
  const auto out = encoder::encode(f0, layers, cfg);
  REQUIRE(out.size() == 12);
  for (const auto& f : out) CHECK(max_abs_diff(f.tokens, f0.tokens) == 0.0);

  cfg.num_layers = 2;
  const std::vector<LayerWeights> two{testutil::random_weights(8, 32, rng), testutil::random_weights(8, 32, rng)};
  const auto chained = encoder::encode(f0, two, cfg);
  const Tensor o1 = oracle_layer(f0.tokens, two[0], 2);
  CHECK(max_abs_diff(chained[0].tokens, o1) < 1e-5);
  CHECK(max_abs_diff(chained[1].tokens, oracle_layer(o1, two[1], 2)) < 1e-5);

  CHECK_THROWS_AS(encoder::encode(f0, layers, cfg), ConfigError);
}

TEST_CASE("token permutation equivariance without positional code") {
  std::mt19937_64 rng(9);
  EncoderConfig cfg;
  cfg.embed_dim = 8;
  cfg.num_heads = 2;
  cfg.mlp_hidden = 16;
  cfg.num_layers = 3;
  std::vector<LayerWeights> layers;
  for (int i = 0; i < 3; ++i) layers.push_back(testutil::random_weights(8, 16, rng));
  const Tensor x = random_tensor({4, 8}, rng);
  const std::array<std::size_t, 4> perm{2, 0, 3, 1};
  Tensor xp(x.shape());
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) xp.at({i, c}) = x.at({perm[i], c});
  const auto a = encoder::encode({x, 2, 2}, layers, cfg);
  const auto b = encoder::encode({xp, 2, 2}, layers, cfg);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 8; ++c) CHECK(b[l].tokens.at({i, c}) == doctest::Approx(a[l].tokens.at({perm[i], c})).epsilon(1e-10));
}

TEST_CASE("attention_map") {
  SUBCASE("single token") {
    Tensor probs(Shape{2, 1, 1}, 1.0);
    const FeatureGrid g = encoder::averaged_attention_row(probs, 0, 1, 1);
    CHECK(g.values.numel() == 1);
    CHECK(g.values[0] == 1.0);
  }
  SUBCASE("tiny model rows match the attention oracle") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.input_size = 64;  // 4 x 4 token grid
    const Model model(cfg, 11);
    std::mt19937_64 rng(10);
    const Image img(random_tensor({64, 64, 3}, rng, 0, 1));

    const Tensor patches = patchify::serialize_image(img, 16);
    Tensor F = affine(patches, model.params().get("patch_embed.w")->value, model.params().get("patch_embed.b")->value);
    F = plus(F, model.params().get("pos_embed")->value);
    const std::size_t C = cfg.encoder.embed_dim, m = cfg.encoder.num_heads, d = C / m;
    for (std::size_t layer = 1; layer <= 3; ++layer) {
      const LayerWeights w = weights_from(model, layer - 1);
      const Tensor X = oracle_ln(F, w.ln1_gamma, w.ln1_beta);
      for (std::size_t token : {0u, 5u, 15u}) {
        Tensor expected(Shape{16}, 0.0);
        for (std::size_t h = 0; h < m; ++h) {
          const HeadWeights hw = oracle_head(w, h, d);
          const Tensor P = oracle_probs(X, hw.wq, hw.bq, hw.wk, hw.bk);
          for (std::size_t j = 0; j < 16; ++j) expected[j] += P.at({token, j}) / m;
        }
        const FeatureGrid g = model.attention_map(img, layer, token);
        CHECK(g.values.shape() == Shape{4, 4, 1});
        double sum = 0.0;
        for (std::size_t j = 0; j < 16; ++j) {
          CHECK(g.values[j] == doctest::Approx(expected[j]).epsilon(1e-9));
          sum += g.values[j];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
      }
      F = oracle_layer(F, w, m);
    }
    CHECK_THROWS_AS(model.attention_map(img, 0, 0), InputError);
    CHECK_THROWS_AS(model.attention_map(img, 13, 0), InputError);
    CHECK_THROWS_AS(model.attention_map(img, 1, 16), InputError);
  }
}

TEST_CASE("positional code init is truncated at two standard deviations") {
  const Model model(ModelConfig::tiny(), 3);
  const Tensor& pos = model.params().get("pos_embed")->value;
  for (double v : pos.values()) CHECK(std::abs(v) <= 0.04);
}
