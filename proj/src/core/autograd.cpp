#include "glstr/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "glstr/error.hpp"

namespace glstr::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Strided = Eigen::OuterStride<>;
using StridedMap = Eigen::Map<RowMat, 0, Strided>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Strided>;

thread_local bool g_grad_enabled = true;

bool any_requires_grad(const std::vector<Var>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v && v->requires_grad; });
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto out = std::make_shared<Node>(std::move(value));
  if (g_grad_enabled && any_requires_grad(inputs)) {
    out->requires_grad = true;
    out->inputs = std::move(inputs);
    out->backward = std::move(fn);
  }
  return out;
}

bool wants(const Var& v) { return v && v->requires_grad; }

void require(bool ok, const std::string& msg) {
  if (!ok) throw InputError(msg);
}

void require_spatial(const Var& x, const char* op) {
  require(x && x->value.rank() == 4, std::string(op) + ": expected [N,H,W,C], got " +
                                         (x ? shape_str(x->value.shape()) : std::string("null")));
}

struct AxisWeights {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_hi;
};

AxisWeights bilinear_axis(std::size_t in, std::size_t out) {
  AxisWeights a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.w_hi.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    a.lo[o] = lo;
    a.hi[o] = std::min(lo + 1, in - 1);
    a.w_hi[o] = src - static_cast<double>(lo);
  }
  return a;
}

// Rows [y0, y1) of image n unrolled into a ((y1-y0)*W, 9*C) patch matrix whose
// column order (ky, kx, c) matches the [3,3,Cin,Cout] weight layout.
void im2col_rows(const double* img, std::size_t H, std::size_t W, std::size_t C, std::size_t y0,
                 std::size_t y1, RowMat& col) {
  col.resize(static_cast<Eigen::Index>((y1 - y0) * W), static_cast<Eigen::Index>(9 * C));
  col.setZero();
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double* row = col.data() + ((y - y0) * W + x) * 9 * C;
      for (int ky = 0; ky < 3; ++ky) {
        const long sy = static_cast<long>(y) + ky - 1;
        if (sy < 0 || sy >= static_cast<long>(H)) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const long sx = static_cast<long>(x) + kx - 1;
          if (sx < 0 || sx >= static_cast<long>(W)) continue;
          const double* src = img + (static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * C;
          std::copy(src, src + C, row + static_cast<std::size_t>(ky * 3 + kx) * C);
        }
      }
    }
  }
}

void col2im_rows(const RowMat& col, std::size_t H, std::size_t W, std::size_t C, std::size_t y0,
                 std::size_t y1, double* img) {
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double* row = col.data() + ((y - y0) * W + x) * 9 * C;
      for (int ky = 0; ky < 3; ++ky) {
        const long sy = static_cast<long>(y) + ky - 1;
        if (sy < 0 || sy >= static_cast<long>(H)) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const long sx = static_cast<long>(x) + kx - 1;
          if (sx < 0 || sx >= static_cast<long>(W)) continue;
          double* dst = img + (static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * C;
          const double* src = row + static_cast<std::size_t>(ky * 3 + kx) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

std::size_t conv_chunk_rows(std::size_t W, std::size_t C) {
  constexpr std::size_t kBudget = std::size_t{1} << 20;  // doubles per im2col buffer
  const std::size_t per_row = std::max<std::size_t>(1, W * 9 * C);
  return std::max<std::size_t>(1, kBudget / per_row);
}

} // namespace

Tensor& Node::grad() {
  if (grad_.empty()) grad_ = Tensor::zeros_like(value);
  return grad_;
}

void Node::zero_grad() {
  if (!grad_.empty()) grad_.fill(0.0);
}

Var constant(Tensor value) { return std::make_shared<Node>(std::move(value), false); }
Var parameter(Tensor value) { return std::make_shared<Node>(std::move(value), true); }

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
  require(root && root->value.numel() == 1, "backward: root must hold a single element");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
  for (Node* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->inputs.clear();
    }
  }
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require(x && w && w->value.rank() == 2, "linear: weight must be [K, N]");
  const std::size_t K = w->value.dim(0), N = w->value.dim(1);
  require(x->value.rank() >= 1 && x->value.shape().back() == K,
          "linear: input " + shape_str(x->value.shape()) + " does not match weight " + shape_str(w->value.shape()));
  if (b) require(b->value.numel() == N, "linear: bias length mismatch");
  const std::size_t R = x->value.numel() / K;

  Shape out_shape = x->value.shape();
  out_shape.back() = N;
  Tensor out(out_shape);
  const auto Ri = static_cast<Eigen::Index>(R), Ki = static_cast<Eigen::Index>(K), Ni = static_cast<Eigen::Index>(N);
  MatMap Y(out.data(), Ri, Ni);
  Y.noalias() = ConstMatMap(x->value.data(), Ri, Ki) * ConstMatMap(w->value.data(), Ki, Ni);
  if (b) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), Ni);

  return make_result(std::move(out), {x, w, b}, [Ri, Ki, Ni](Node& self) {
    const Var& x = self.inputs[0];
    const Var& w = self.inputs[1];
    const Var& b = self.inputs[2];
    ConstMatMap G(self.grad().data(), Ri, Ni);
    if (wants(x)) MatMap(x->grad().data(), Ri, Ki).noalias() += G * ConstMatMap(w->value.data(), Ki, Ni).transpose();
    if (wants(w)) MatMap(w->grad().data(), Ki, Ni).noalias() += ConstMatMap(x->value.data(), Ri, Ki).transpose() * G;
    if (wants(b)) Eigen::Map<Eigen::RowVectorXd>(b->grad().data(), Ni) += G.colwise().sum();
  });
}

Var add(const Var& a, const Var& b) {
  require(a && b && a->value.same_shape(b->value),
          "add: shape mismatch " + shape_str(a->value.shape()) + " vs " + shape_str(b->value.shape()));
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& g = self.grad();
    for (const Var& in : self.inputs) {
      if (!wants(in)) continue;
      Tensor& d = in->grad();
      for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
    }
  });
}

Var add_broadcast(const Var& x, const Var& rows) {
  require(x && rows && x->value.rank() == 3 && rows->value.rank() == 2 && x->value.dim(1) == rows->value.dim(0) &&
              x->value.dim(2) == rows->value.dim(1),
          "add_broadcast: cannot add " + shape_str(rows->value.shape()) + " to " + shape_str(x->value.shape()));
  const std::size_t block = rows->value.numel();
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += rows->value[i % block];
  return make_result(std::move(out), {x, rows}, [block](Node& self) {
    const Tensor& g = self.grad();
    if (wants(self.inputs[0])) {
      Tensor& d = self.inputs[0]->grad();
      for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
    }
    if (wants(self.inputs[1])) {
      Tensor& d = self.inputs[1]->grad();
      for (std::size_t i = 0; i < g.numel(); ++i) d[i % block] += g[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x->value;
  for (double& v : out.values()) v *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    const Tensor& g = self.grad();
    Tensor& d = self.inputs[0]->grad();
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] += factor * g[i];
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    const Tensor& g = self.grad();
    Tensor& d = self.inputs[0]->grad();
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t C = x->value.shape().back();
  require(gamma->value.numel() == C && beta->value.numel() == C, "layer_norm: parameter length mismatch");
  const std::size_t R = x->value.numel() / C;
  Tensor out(x->value.shape());
  Tensor xhat(x->value.shape());
  std::vector<double> inv(R);
  for (std::size_t r = 0; r < R; ++r) {
    const double* xr = x->value.data() + r * C;
    double mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) mean += xr[c];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(C);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (xr[c] - mean) * inv[r];
      xhat[r * C + c] = h;
      out[r * C + c] = h * gamma->value[c] + beta->value[c];
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [C, R, xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
                       const Tensor& g = self.grad();
                       const Var& x = self.inputs[0];
                       const Var& gamma = self.inputs[1];
                       const Var& beta = self.inputs[2];
                       for (std::size_t r = 0; r < R; ++r) {
                         const double* gr = g.data() + r * C;
                         const double* hr = xhat.data() + r * C;
                         if (wants(gamma))
                           for (std::size_t c = 0; c < C; ++c) gamma->grad()[c] += gr[c] * hr[c];
                         if (wants(beta))
                           for (std::size_t c = 0; c < C; ++c) beta->grad()[c] += gr[c];
                         if (!wants(x)) continue;
                         double sum_d = 0.0, sum_dh = 0.0;
                         for (std::size_t c = 0; c < C; ++c) {
                           const double d = gr[c] * gamma->value[c];
                           sum_d += d;
                           sum_dh += d * hr[c];
                         }
                         double* dx = x->grad().data() + r * C;
                         const double n = static_cast<double>(C);
                         for (std::size_t c = 0; c < C; ++c) {
                           const double d = gr[c] * gamma->value[c];
                           dx[c] += inv[r] / n * (n * d - sum_d - hr[c] * sum_dh);
                         }
                       }
                     });
}

Var gelu(const Var& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = x->value[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  }
  return make_result(std::move(out), {x}, [](Node& self) {
    const Var& x = self.inputs[0];
    const Tensor& g = self.grad();
    Tensor& d = x->grad();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = x->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      d[i] += g[i] * (cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v));
    }
  });
}

Var relu(const Var& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, x->value[i]);
  return make_result(std::move(out), {x}, [](Node& self) {
    const Var& x = self.inputs[0];
    const Tensor& g = self.grad();
    Tensor& d = x->grad();
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (x->value[i] > 0.0) d[i] += g[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = x->value[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  auto result = make_result(std::move(out), {x}, nullptr);
  if (result->requires_grad) {
    result->backward = [](Node& self) {
      const Tensor& g = self.grad();
      Tensor& d = self.inputs[0]->grad();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double y = self.value[i];
        d[i] += g[i] * y * (1.0 - y);
      }
    };
  }
  return result;
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, Tensor* probs) {
  require(q && k && v && q->value.rank() == 3 && q->value.same_shape(k->value) && q->value.same_shape(v->value),
          "attention: q, k, v must share an [N, L, C] shape");
  const std::size_t N = q->value.dim(0), L = q->value.dim(1), C = q->value.dim(2);
  if (heads == 0 || C % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(C) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const std::size_t d = C / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(d));
  const auto Li = static_cast<Eigen::Index>(L), di = static_cast<Eigen::Index>(d);
  const Strided stride(static_cast<Eigen::Index>(C));

  Tensor out(q->value.shape());
  auto P = std::make_shared<Tensor>(Shape{N, heads, L, L});
  RowMat scores;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = n * L * C + h * d;
      ConstStridedMap Q(q->value.data() + off, Li, di, stride);
      ConstStridedMap K(k->value.data() + off, Li, di, stride);
      ConstStridedMap V(v->value.data() + off, Li, di, stride);
      scores.noalias() = (Q * K.transpose()) * sc;
      for (Eigen::Index r = 0; r < Li; ++r) {
        const double mx = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - mx).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      MatMap(P->data() + (n * heads + h) * L * L, Li, Li) = scores;
      StridedMap(out.data() + off, Li, di, stride).noalias() = scores * V;
    }
  }
  if (probs) *probs = *P;

  return make_result(std::move(out), {q, k, v}, [P, N, L, C, heads, d, sc](Node& self) {
    const Var& q = self.inputs[0];
    const Var& k = self.inputs[1];
    const Var& v = self.inputs[2];
    const auto Li = static_cast<Eigen::Index>(L), di = static_cast<Eigen::Index>(d);
    const Strided stride(static_cast<Eigen::Index>(C));
    RowMat dP, dS;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = n * L * C + h * d;
        ConstMatMap Pm(P->data() + (n * heads + h) * L * L, Li, Li);
        ConstStridedMap G(self.grad().data() + off, Li, di, stride);
        ConstStridedMap Q(q->value.data() + off, Li, di, stride);
        ConstStridedMap K(k->value.data() + off, Li, di, stride);
        ConstStridedMap V(v->value.data() + off, Li, di, stride);
        if (wants(v)) StridedMap(v->grad().data() + off, Li, di, stride).noalias() += Pm.transpose() * G;
        if (!wants(q) && !wants(k)) continue;
        dP.noalias() = G * V.transpose();
        dS = Pm.array() * (dP.array().colwise() - (dP.array() * Pm.array()).rowwise().sum());
        if (wants(q)) StridedMap(q->grad().data() + off, Li, di, stride).noalias() += (dS * K) * sc;
        if (wants(k)) StridedMap(k->grad().data() + off, Li, di, stride).noalias() += (dS.transpose() * Q) * sc;
      }
    }
  });
}

Var conv3x3(const Var& x, const Var& w) {
  require_spatial(x, "conv3x3");
  const std::size_t N = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2), Cin = x->value.dim(3);
  if (w->value.rank() != 4 || w->value.dim(0) != 3 || w->value.dim(1) != 3 || w->value.dim(2) != Cin) {
    throw ConfigError("conv3x3: weight " + shape_str(w->value.shape()) + " does not accept " + std::to_string(Cin) +
                      " input channels");
  }
  const std::size_t Cout = w->value.dim(3);
  const std::size_t chunk = conv_chunk_rows(W, Cin);
  const auto Kc = static_cast<Eigen::Index>(9 * Cin), Co = static_cast<Eigen::Index>(Cout);

  Tensor out(Shape{N, H, W, Cout});
  ConstMatMap Wm(w->value.data(), Kc, Co);
  RowMat col;
  for (std::size_t n = 0; n < N; ++n) {
    const double* img = x->value.data() + n * H * W * Cin;
    for (std::size_t y0 = 0; y0 < H; y0 += chunk) {
      const std::size_t y1 = std::min(H, y0 + chunk);
      im2col_rows(img, H, W, Cin, y0, y1, col);
      MatMap(out.data() + (n * H + y0) * W * Cout, static_cast<Eigen::Index>((y1 - y0) * W), Co).noalias() = col * Wm;
    }
  }
  return make_result(std::move(out), {x, w}, [N, H, W, Cin, Cout, chunk, Kc, Co](Node& self) {
    const Var& x = self.inputs[0];
    const Var& w = self.inputs[1];
    ConstMatMap Wm(w->value.data(), Kc, Co);
    RowMat col, dcol;
    for (std::size_t n = 0; n < N; ++n) {
      const double* img = x->value.data() + n * H * W * Cin;
      for (std::size_t y0 = 0; y0 < H; y0 += chunk) {
        const std::size_t y1 = std::min(H, y0 + chunk);
        const auto rows = static_cast<Eigen::Index>((y1 - y0) * W);
        ConstMatMap G(self.grad().data() + (n * H + y0) * W * Cout, rows, Co);
        if (wants(w)) {
          im2col_rows(img, H, W, Cin, y0, y1, col);
          MatMap(w->grad().data(), Kc, Co).noalias() += col.transpose() * G;
        }
        if (wants(x)) {
          dcol.noalias() = G * Wm.transpose();
          col2im_rows(dcol, H, W, Cin, y0, y1, x->grad().data() + n * H * W * Cin);
        }
      }
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training,
               double momentum, double eps) {
  require_spatial(x, "batch_norm");
  const std::size_t C = x->value.dim(3);
  if (gamma->value.numel() != C || beta->value.numel() != C || stats.running_mean.numel() != C ||
      stats.running_var.numel() != C) {
    throw ConfigError("batch_norm: parameters do not match " + std::to_string(C) + " channels");
  }
  const std::size_t R = x->value.numel() / C;
  std::vector<double> mean(C, 0.0), inv(C, 0.0);
  if (training) {
    std::vector<double> var(C, 0.0);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) mean[c] += x->value[r * C + c];
    for (double& m : mean) m /= static_cast<double>(R);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double dv = x->value[r * C + c] - mean[c];
        var[c] += dv * dv;
      }
    const double unbias = R > 1 ? static_cast<double>(R) / static_cast<double>(R - 1) : 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      var[c] /= static_cast<double>(R);
      inv[c] = 1.0 / std::sqrt(var[c] + eps);
      stats.running_mean[c] = (1.0 - momentum) * stats.running_mean[c] + momentum * mean[c];
      stats.running_var[c] = (1.0 - momentum) * stats.running_var[c] + momentum * var[c] * unbias;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = stats.running_mean[c];
      inv[c] = 1.0 / std::sqrt(stats.running_var[c] + eps);
    }
  }

  Tensor out(x->value.shape());
  Tensor xhat(x->value.shape());
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (x->value[r * C + c] - mean[c]) * inv[c];
      xhat[r * C + c] = h;
      out[r * C + c] = h * gamma->value[c] + beta->value[c];
    }

  return make_result(std::move(out), {x, gamma, beta},
                     [R, C, training, xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
                       const Tensor& g = self.grad();
                       const Var& x = self.inputs[0];
                       const Var& gamma = self.inputs[1];
                       const Var& beta = self.inputs[2];
                       std::vector<double> sum_g(C, 0.0), sum_gh(C, 0.0);
                       for (std::size_t r = 0; r < R; ++r)
                         for (std::size_t c = 0; c < C; ++c) {
                           sum_g[c] += g[r * C + c];
                           sum_gh[c] += g[r * C + c] * xhat[r * C + c];
                         }
                       if (wants(gamma))
                         for (std::size_t c = 0; c < C; ++c) gamma->grad()[c] += sum_gh[c];
                       if (wants(beta))
                         for (std::size_t c = 0; c < C; ++c) beta->grad()[c] += sum_g[c];
                       if (!wants(x)) return;
                       Tensor& dx = x->grad();
                       const double n = static_cast<double>(R);
                       for (std::size_t r = 0; r < R; ++r)
                         for (std::size_t c = 0; c < C; ++c) {
                           const double gc = gamma->value[c];
                           if (training) {
                             dx[r * C + c] +=
                                 gc * inv[c] / n * (n * g[r * C + c] - sum_g[c] - xhat[r * C + c] * sum_gh[c]);
                           } else {
                             dx[r * C + c] += gc * inv[c] * g[r * C + c];
                           }
                         }
                     });
}

Var resize_bilinear(const Var& x, std::size_t out_h, std::size_t out_w) {
  require_spatial(x, "resize_bilinear");
  require(out_h > 0 && out_w > 0, "resize_bilinear: empty target size");
  const std::size_t N = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2), C = x->value.dim(3);
  auto ay = std::make_shared<AxisWeights>(bilinear_axis(H, out_h));
  auto ax = std::make_shared<AxisWeights>(bilinear_axis(W, out_w));
  Tensor out(Shape{N, out_h, out_w, C});
  for (std::size_t n = 0; n < N; ++n) {
    const double* src = x->value.data() + n * H * W * C;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double wy = ay->w_hi[oy];
      const double* r0 = src + ay->lo[oy] * W * C;
      const double* r1 = src + ay->hi[oy] * W * C;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double wx = ax->w_hi[ox];
        const std::size_t c0 = ax->lo[ox] * C, c1 = ax->hi[ox] * C;
        double* dst = out.data() + ((n * out_h + oy) * out_w + ox) * C;
        for (std::size_t c = 0; c < C; ++c) {
          const double top = (1.0 - wx) * r0[c0 + c] + wx * r0[c1 + c];
          const double bot = (1.0 - wx) * r1[c0 + c] + wx * r1[c1 + c];
          dst[c] = (1.0 - wy) * top + wy * bot;
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [ay, ax, N, H, W, C, out_h, out_w](Node& self) {
    const Tensor& g = self.grad();
    Tensor& d = self.inputs[0]->grad();
    for (std::size_t n = 0; n < N; ++n) {
      double* dst = d.data() + n * H * W * C;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const double wy = ay->w_hi[oy];
        double* r0 = dst + ay->lo[oy] * W * C;
        double* r1 = dst + ay->hi[oy] * W * C;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const double wx = ax->w_hi[ox];
          const std::size_t c0 = ax->lo[ox] * C, c1 = ax->hi[ox] * C;
          const double* src = g.data() + ((n * out_h + oy) * out_w + ox) * C;
          for (std::size_t c = 0; c < C; ++c) {
            r0[c0 + c] += (1.0 - wy) * (1.0 - wx) * src[c];
            r0[c1 + c] += (1.0 - wy) * wx * src[c];
            r1[c0 + c] += wy * (1.0 - wx) * src[c];
            r1[c1 + c] += wy * wx * src[c];
          }
        }
      }
    }
  });
}

Var pixel_shuffle(const Var& x, std::size_t r) {
  require_spatial(x, "pixel_shuffle");
  const std::size_t N = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2), Cin = x->value.dim(3);
  if (r == 0 || Cin % (r * r) != 0) {
    throw ConfigError("pixel_shuffle: " + std::to_string(Cin) + " channels not divisible by r^2 = " +
                      std::to_string(r * r));
  }
  const std::size_t C = Cin / (r * r);
  const std::size_t OH = H * r, OW = W * r;
  // Maps every output element to its source index.
  auto index = std::make_shared<std::vector<std::size_t>>(x->value.numel());
  Tensor out(Shape{N, OH, OW, C});
  std::size_t o = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox)
        for (std::size_t c = 0; c < C; ++c, ++o) {
          const std::size_t y = oy / r, i = oy % r, xx = ox / r, j = ox % r;
          const std::size_t src = ((n * H + y) * W + xx) * Cin + c * r * r + i * r + j;
          (*index)[o] = src;
          out[o] = x->value[src];
        }
  return make_result(std::move(out), {x}, [index](Node& self) {
    const Tensor& g = self.grad();
    Tensor& d = self.inputs[0]->grad();
    for (std::size_t o = 0; o < g.numel(); ++o) d[(*index)[o]] += g[o];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_spatial(a, "concat_channels");
  require_spatial(b, "concat_channels");
  require(a->value.dim(0) == b->value.dim(0) && a->value.dim(1) == b->value.dim(1) && a->value.dim(2) == b->value.dim(2),
          "concat_channels: spatial mismatch " + shape_str(a->value.shape()) + " vs " + shape_str(b->value.shape()));
  const std::size_t P = a->value.numel() / a->value.dim(3);
  const std::size_t Ca = a->value.dim(3), Cb = b->value.dim(3);
  Tensor out(Shape{a->value.dim(0), a->value.dim(1), a->value.dim(2), Ca + Cb});
  for (std::size_t p = 0; p < P; ++p) {
    std::copy_n(a->value.data() + p * Ca, Ca, out.data() + p * (Ca + Cb));
    std::copy_n(b->value.data() + p * Cb, Cb, out.data() + p * (Ca + Cb) + Ca);
  }
  return make_result(std::move(out), {a, b}, [P, Ca, Cb](Node& self) {
    const Tensor& g = self.grad();
    const Var& a = self.inputs[0];
    const Var& b = self.inputs[1];
    for (std::size_t p = 0; p < P; ++p) {
      if (wants(a))
        for (std::size_t c = 0; c < Ca; ++c) a->grad()[p * Ca + c] += g[p * (Ca + Cb) + c];
      if (wants(b))
        for (std::size_t c = 0; c < Cb; ++c) b->grad()[p * Cb + c] += g[p * (Ca + Cb) + Ca + c];
    }
  });
}

Var bce_mean(const Var& pred, const Tensor& target, double eps) {
  require(pred && pred->value.same_shape(target), "bce: prediction " + shape_str(pred->value.shape()) +
                                                      " and target " + shape_str(target.shape()) + " differ");
  const std::size_t n = target.numel();
  require(n > 0, "bce: empty maps");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(pred->value[i], eps, 1.0 - eps);
    const double t = target[i];
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  Tensor out(Shape{1}, total / static_cast<double>(n));
  return make_result(std::move(out), {pred}, [target, eps, n](Node& self) {
    const Var& pred = self.inputs[0];
    const double g = self.grad()[0] / static_cast<double>(n);
    Tensor& d = pred->grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double p = pred->value[i];
      if (p <= eps || p >= 1.0 - eps) continue;  // clamped region is flat
      d[i] += g * (p - target[i]) / (p * (1.0 - p));
    }
  });
}

Var sum(const std::vector<Var>& scalars) {
  double total = 0.0;
  for (const Var& s : scalars) {
    require(s && s->value.numel() == 1, "sum: expected single-element inputs");
    total += s->value[0];
  }
  return make_result(Tensor(Shape{1}, total), scalars, [](Node& self) {
    const double g = self.grad()[0];
    for (const Var& in : self.inputs)
      if (wants(in)) in->grad()[0] += g;
  });
}

} // namespace glstr::ag
