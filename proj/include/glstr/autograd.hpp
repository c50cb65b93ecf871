#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "glstr/tensor.hpp"

// Reverse-mode differentiation over Tensor values. Every op computes its
// forward value eagerly; when gradients are enabled and an input requires
// them, the op also records a closure that accumulates into its inputs.

namespace glstr::ag {

class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
  explicit Node(Tensor v, bool needs_grad = false) : value(std::move(v)), requires_grad(needs_grad) {}

  Tensor value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first access.
  Tensor& grad();
  bool has_grad() const noexcept { return !grad_.empty(); }
  void zero_grad();

private:
  Tensor grad_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

bool grad_enabled() noexcept;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

/// Back-propagates from a single-element root. Intermediate nodes drop their
/// graph links afterwards; leaf gradients accumulate.
void backward(const Var& root);

// Dense ops -----------------------------------------------------------------

/// x[..., K] * w[K, N] + b[N]; bias may be null.
Var linear(const Var& x, const Var& w, const Var& b);
Var add(const Var& a, const Var& b);
/// x[N, L, C] + rows[L, C] broadcast over N.
Var add_broadcast(const Var& x, const Var& rows);
Var scale(const Var& x, double factor);
Var reshape(const Var& x, Shape shape);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
Var gelu(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);

/// Scaled dot-product attention over `heads` equal column blocks of q, k, v
/// (each [N, L, C]). When `probs` is non-null it receives the row-stochastic
/// attention weights as [N, heads, L, L].
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, Tensor* probs = nullptr);

// Spatial ops (channels-last [N, H, W, C]) -----------------------------------

/// 3x3 convolution, stride 1, zero padding 1, no bias. w is [3, 3, Cin, Cout].
Var conv3x3(const Var& x, const Var& w);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
};

/// Per-channel batch normalisation. Training mode normalises with batch
/// statistics and updates `stats` (unbiased variance); evaluation mode uses
/// the running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training,
               double momentum = 0.1, double eps = 1e-5);

/// Bilinear resize with half-pixel centres (align_corners = false).
Var resize_bilinear(const Var& x, std::size_t out_h, std::size_t out_w);
/// [N, H, W, C*r*r] -> [N, rH, rW, C]; output (y*r+i, x*r+j, c) reads input
/// channel c*r*r + i*r + j.
Var pixel_shuffle(const Var& x, std::size_t r);
Var concat_channels(const Var& a, const Var& b);

// Reductions ------------------------------------------------------------------

/// Mean binary cross-entropy of probabilities against targets in [0,1].
/// Predictions are clamped to [eps, 1 - eps].
Var bce_mean(const Var& pred, const Tensor& target, double eps = 1e-7);
/// Sum of single-element vars.
Var sum(const std::vector<Var>& scalars);

} // namespace glstr::ag
