#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "glstr/autograd.hpp"

namespace glstr {

/// Named trainable arrays in insertion order. Names are the dotted keys used
/// by the checkpoint container.
class ParameterStore {
public:
  ag::Var add(const std::string& name, Tensor init);
  const ag::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, ag::Var>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Total scalar count of every parameter whose name starts with `prefix`.
  std::size_t scalar_count(std::string_view prefix = {}) const;
  void zero_grad();

private:
  std::vector<std::pair<std::string, ag::Var>> entries_;
};

/// Non-trainable state (batch-norm running statistics).
class BufferStore {
public:
  std::shared_ptr<ag::BatchNormStats> add_batch_norm(const std::string& name, std::size_t channels);
  const std::shared_ptr<ag::BatchNormStats>& get(const std::string& name) const;

  const std::vector<std::pair<std::string, std::shared_ptr<ag::BatchNormStats>>>& entries() const noexcept {
    return entries_;
  }

private:
  std::vector<std::pair<std::string, std::shared_ptr<ag::BatchNormStats>>> entries_;
};

/// Deterministic weight initialisers.
class Initializer {
public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(Shape shape, double bound);
  /// Normal(0, std) resampled until within +-limit_sigmas * std.
  Tensor truncated_normal(Shape shape, double std, double limit_sigmas = 2.0);
  /// Default fan-in uniform init of linear/conv layers: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor fan_in_uniform(Shape shape, std::size_t fan_in);

  std::mt19937_64& engine() noexcept { return rng_; }

private:
  double uniform01();

  std::mt19937_64 rng_;
};

} // namespace glstr
