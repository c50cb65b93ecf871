#include <doctest.h>

#include <cmath>
#include <functional>

#include "glstr/autograd.hpp"
#include "glstr/error.hpp"
#include "helpers.hpp"

using namespace glstr;
using testutil::random_tensor;

namespace {

// Random linear functional of an op's output, so every output element
// contributes to the checked gradient.
ag::Var probe(const ag::Var& out, const Tensor& weights) {
  const std::size_t n = out->value.numel();
  return ag::linear(ag::reshape(out, Shape{1, n}), ag::constant(weights.reshaped(Shape{n, 1})), nullptr);
}

void gradcheck(const std::vector<Tensor>& inputs, const std::function<ag::Var(const std::vector<ag::Var>&)>& op,
               double tol = 1e-6, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::vector<ag::Var> vars;
  for (const auto& t : inputs) vars.push_back(ag::parameter(t));
  const ag::Var out0 = op(vars);
  const Tensor w = random_tensor(out0->value.shape(), rng);
  ag::backward(probe(out0, w));

  const double h = 1e-6;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t i = 0; i < inputs[a].numel(); ++i) {
      auto eval = [&](double delta) {
        ag::NoGradGuard guard;
        std::vector<ag::Var> vs;
        for (std::size_t b = 0; b < inputs.size(); ++b) {
          Tensor t = inputs[b];
          if (b == a) t[i] += delta;
          vs.push_back(ag::constant(t));
        }
        return probe(op(vs), w)->value[0];
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double analytic = vars[a]->grad()[i];
      CHECK(std::abs(numeric - analytic) <= tol * std::max(1.0, std::abs(numeric)));
    }
  }
}

} // namespace

TEST_CASE("linear and add gradients") {
  std::mt19937_64 rng(1);
  gradcheck({random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)},
            [](const auto& v) { return ag::linear(v[0], v[1], v[2]); });
  gradcheck({random_tensor({2, 3, 4}, rng), random_tensor({3, 4}, rng)},
            [](const auto& v) { return ag::add_broadcast(ag::add(v[0], v[0]), v[1]); });
}

TEST_CASE("layer norm, gelu, relu and sigmoid gradients") {
  std::mt19937_64 rng(2);
  gradcheck({random_tensor({2, 3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)},
            [](const auto& v) { return ag::layer_norm(v[0], v[1], v[2], 1e-6); }, 1e-5);
  gradcheck({random_tensor({3, 5}, rng, -3, 3)}, [](const auto& v) { return ag::gelu(v[0]); });
  gradcheck({random_tensor({3, 5}, rng, 0.1, 2)}, [](const auto& v) { return ag::relu(v[0]); });
  gradcheck({random_tensor({3, 5}, rng, -4, 4)}, [](const auto& v) { return ag::sigmoid(ag::scale(v[0], 0.7)); });
}

TEST_CASE("attention gradients") {
  std::mt19937_64 rng(3);
  gradcheck({random_tensor({2, 4, 6}, rng), random_tensor({2, 4, 6}, rng), random_tensor({2, 4, 6}, rng)},
            [](const auto& v) { return ag::attention(v[0], v[1], v[2], 2); }, 1e-5);
}

TEST_CASE("spatial op gradients") {
  std::mt19937_64 rng(4);
  gradcheck({random_tensor({2, 3, 4, 2}, rng), random_tensor({3, 3, 2, 3}, rng)},
            [](const auto& v) { return ag::conv3x3(v[0], v[1]); });
  gradcheck({random_tensor({2, 3, 3, 2}, rng)}, [](const auto& v) { return ag::resize_bilinear(v[0], 7, 5); });
  gradcheck({random_tensor({1, 2, 2, 8}, rng)}, [](const auto& v) { return ag::pixel_shuffle(v[0], 2); });
  gradcheck({random_tensor({1, 2, 2, 3}, rng), random_tensor({1, 2, 2, 2}, rng)},
            [](const auto& v) { return ag::concat_channels(v[0], v[1]); });
}

TEST_CASE("batch norm gradients in training mode") {
  std::mt19937_64 rng(5);
  gradcheck({random_tensor({2, 3, 3, 4}, rng), random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng)},
            [](const auto& v) {
              ag::BatchNormStats stats{Tensor(Shape{4}, 0.0), Tensor(Shape{4}, 1.0)};
              return ag::batch_norm(v[0], v[1], v[2], stats, true);
            },
            1e-5);
}

TEST_CASE("batch norm running statistics use momentum 0.1 and unbiased variance") {
  Tensor x(Shape{1, 1, 2, 1}, std::vector<double>{1.0, 3.0});
  ag::BatchNormStats stats{Tensor(Shape{1}, 0.0), Tensor(Shape{1}, 1.0)};
  ag::NoGradGuard guard;
  auto y = ag::batch_norm(ag::constant(x), ag::constant(Tensor(Shape{1}, 1.0)), ag::constant(Tensor(Shape{1}, 0.0)),
                          stats, true);
  CHECK(stats.running_mean[0] == doctest::Approx(0.2).epsilon(1e-12));
  // batch variance 1 (biased), unbiased 2: 0.9 * 1 + 0.1 * 2
  CHECK(stats.running_var[0] == doctest::Approx(1.1).epsilon(1e-12));
  CHECK(y->value[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("bce gradient is zero inside the clamp") {
  auto p = ag::parameter(Tensor(Shape{2}, std::vector<double>{0.0, 0.5}));
  ag::backward(ag::bce_mean(p, Tensor(Shape{2}, std::vector<double>{1.0, 1.0})));
  CHECK(p->grad()[0] == 0.0);
  CHECK(p->grad()[1] == doctest::Approx(-1.0 / 0.5 / 2.0));
}

TEST_CASE("gradients accumulate across shared uses") {
  auto x = ag::parameter(Tensor(Shape{1}, 3.0));
  auto y = ag::add(x, ag::scale(x, 2.0));
  ag::backward(y);
  CHECK(x->grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("no-grad guard skips graph recording") {
  auto x = ag::parameter(Tensor(Shape{2}, 1.0));
  ag::Var y;
  {
    ag::NoGradGuard guard;
    y = ag::scale(x, 2.0);
  }
  CHECK(y->inputs.empty());
  CHECK(ag::grad_enabled());
}

TEST_CASE("shape errors are rejected") {
  auto a = ag::constant(Tensor(Shape{2, 3}));
  auto b = ag::constant(Tensor(Shape{3, 2}));
  CHECK_THROWS_AS(ag::add(a, b), InputError);
  CHECK_THROWS_AS(ag::pixel_shuffle(ag::constant(Tensor(Shape{1, 2, 2, 3})), 2), ConfigError);
}
