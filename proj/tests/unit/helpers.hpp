#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "glstr/encoder.hpp"
#include "glstr/tensor.hpp"

namespace testutil {

inline glstr::Tensor random_tensor(glstr::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  glstr::Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

inline double max_abs_diff(const glstr::Tensor& a, const glstr::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Plain triple loop, independent of the Eigen-backed kernels.
inline glstr::Tensor matmul(const glstr::Tensor& a, const glstr::Tensor& b) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  glstr::Tensor out(glstr::Shape{n, m}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * m + j];
      out[i * m + j] = s;
    }
  return out;
}

inline glstr::LayerWeights random_weights(std::size_t C, std::size_t hidden, std::mt19937_64& rng) {
  glstr::LayerWeights w;
  w.ln1_gamma = random_tensor({C}, rng, 0.5, 1.5);
  w.ln1_beta = random_tensor({C}, rng, -0.2, 0.2);
  w.wq = random_tensor({C, C}, rng);
  w.bq = random_tensor({C}, rng);
  w.wk = random_tensor({C, C}, rng);
  w.bk = random_tensor({C}, rng);
  w.wv = random_tensor({C, C}, rng);
  w.bv = random_tensor({C}, rng);
  w.proj_w = random_tensor({C, C}, rng);
  w.proj_b = random_tensor({C}, rng);
  w.ln2_gamma = random_tensor({C}, rng, 0.5, 1.5);
  w.ln2_beta = random_tensor({C}, rng, -0.2, 0.2);
  w.fc1_w = random_tensor({C, hidden}, rng);
  w.fc1_b = random_tensor({hidden}, rng);
  w.fc2_w = random_tensor({hidden, C}, rng);
  w.fc2_b = random_tensor({C}, rng);
  return w;
}

// Fresh per-process scratch directory, removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag)
      : path(std::filesystem::temp_directory_path() / ("glstr_" + tag + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

} // namespace testutil
