#include "glstr/params.hpp"

#include <cmath>
#include <numbers>

#include "glstr/error.hpp"

namespace glstr {

ag::Var ParameterStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw ConfigError("parameter '" + name + "' registered twice");
  entries_.emplace_back(name, ag::parameter(std::move(init)));
  return entries_.back().second;
}

const ag::Var& ParameterStore::get(const std::string& name) const {
  for (const auto& [key, var] : entries_)
    if (key == name) return var;
  throw ConfigError("unknown parameter '" + name + "'");
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& entry : entries_)
    if (entry.first == name) return true;
  return false;
}

std::size_t ParameterStore::scalar_count(std::string_view prefix) const {
  std::size_t total = 0;
  for (const auto& [name, var] : entries_)
    if (name.starts_with(prefix)) total += var->value.numel();
  return total;
}

void ParameterStore::zero_grad() {
  for (auto& entry : entries_) entry.second->zero_grad();
}

std::shared_ptr<ag::BatchNormStats> BufferStore::add_batch_norm(const std::string& name, std::size_t channels) {
  for (const auto& entry : entries_)
    if (entry.first == name) throw ConfigError("buffer '" + name + "' registered twice");
  auto stats = std::make_shared<ag::BatchNormStats>(
      ag::BatchNormStats{Tensor(Shape{channels}, 0.0), Tensor(Shape{channels}, 1.0)});
  entries_.emplace_back(name, stats);
  return stats;
}

const std::shared_ptr<ag::BatchNormStats>& BufferStore::get(const std::string& name) const {
  for (const auto& [key, stats] : entries_)
    if (key == name) return stats;
  throw ConfigError("unknown buffer '" + name + "'");
}

double Initializer::uniform01() {
  // 53 random mantissa bits; identical across standard libraries.
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

Tensor Initializer::uniform(Shape shape, double bound) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = (2.0 * uniform01() - 1.0) * bound;
  return t;
}

Tensor Initializer::truncated_normal(Shape shape, double std, double limit_sigmas) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    double z;
    do {
      // Box-Muller on our own uniforms keeps the stream portable.
      const double u1 = 1.0 - uniform01();
      const double u2 = uniform01();
      z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    } while (std::abs(z) > limit_sigmas);
    v = z * std;
  }
  return t;
}

Tensor Initializer::fan_in_uniform(Shape shape, std::size_t fan_in) {
  return uniform(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

} // namespace glstr
