#include "rulex/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "rulex/error.hpp"

namespace rulex {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap grad_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.grad().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::size_t last_extent(const Tensor& t) { return t.shape().back(); }

}  // namespace

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::Dimension,
          "matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, ErrorKind::Dimension,
          "matmul inner extents disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

  Tensor out = Tensor::zeros({m, n});
  MatMap(out.data().data(), m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, k, n);

  if (g.should_record({&a, &b})) {
    g.record("matmul", {a, b}, out, [a = Tensor(a), b = Tensor(b), out, m, k, n]() mutable {
      ConstMatMap dc(out.grad().data(), m, n);
      if (a.requires_grad()) grad_matrix(a, m, k).noalias() += dc * as_matrix(b, k, n).transpose();
      if (b.requires_grad()) grad_matrix(b, k, n).noalias() += as_matrix(a, m, k).transpose() * dc;
    });
  }
  return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (g.should_record({&a, &b})) {
    g.record("add", {a, b}, out, [a = Tensor(a), b = Tensor(b), out]() mutable {
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (g.should_record({&a, &b})) {
    g.record("mul", {a, b}, out, [a = Tensor(a), b = Tensor(b), out]() mutable {
      auto dy = out.grad();
      auto x = a.data(), y = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(Graph& g, const Tensor& x, float factor) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * factor;
  if (g.should_record({&x})) {
    g.record("scale", {x}, out, [x = Tensor(x), out, factor]() mutable {
      auto dy = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i] * factor;
    });
  }
  return out;
}

Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
  require(bias.rank() == 1 && bias.dim(0) == last_extent(x), ErrorKind::Dimension,
          "add_bias: bias " + shape_str(bias.shape()) + " does not match last extent of " + shape_str(x.shape()));
  const auto n = bias.dim(0);
  const auto rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.data();
  auto in = x.data();
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = in[r * n + j] + bv[j];
  if (g.should_record({&x, &bias})) {
    g.record("add_bias", {x, bias}, out, [x = Tensor(x), bias = Tensor(bias), out, rows, n]() mutable {
      auto dy = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gb[j] += dy[r * n + j];
      }
    });
  }
  return out;
}

Tensor add_positional(Graph& g, const Tensor& x, const Tensor& table, std::size_t seq_len) {
  require(x.rank() == 2 && table.rank() == 2 && x.dim(1) == table.dim(1), ErrorKind::Dimension,
          "add_positional: " + shape_str(x.shape()) + " vs table " + shape_str(table.shape()));
  require(seq_len > 0 && x.dim(0) % seq_len == 0, ErrorKind::Dimension,
          "add_positional: rows " + std::to_string(x.dim(0)) + " not a multiple of seq_len " + std::to_string(seq_len));
  require(seq_len <= table.dim(0), ErrorKind::Index,
          "sequence length " + std::to_string(seq_len) + " exceeds positional table of " + std::to_string(table.dim(0)));
  const auto rows = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.data();
  auto in = x.data();
  auto tb = table.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto t = r % seq_len;
    for (std::size_t j = 0; j < d; ++j) o[r * d + j] = in[r * d + j] + tb[t * d + j];
  }
  if (g.should_record({&x, &table})) {
    g.record("add_positional", {x, table}, out, [x = Tensor(x), table = Tensor(table), out, rows, d, seq_len]() mutable {
      auto dy = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i];
      }
      if (table.requires_grad()) {
        auto gt = table.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const auto t = r % seq_len;
          for (std::size_t j = 0; j < d; ++j) gt[t * d + j] += dy[r * d + j];
        }
      }
    });
  }
  return out;
}

Tensor gelu(Graph& g, const Tensor& x) {
  constexpr float inv_sqrt2 = 0.70710678118654752f;
  constexpr float inv_sqrt_2pi = 0.39894228040143268f;
  Tensor out = Tensor::zeros(x.shape());
  const auto n = static_cast<Eigen::Index>(x.numel());
  Eigen::Map<const Eigen::ArrayXf> in(x.data().data(), n);
  Eigen::Map<Eigen::ArrayXf> o(out.data().data(), n);
  const Eigen::ArrayXf cdf = 0.5f * (1.0f + (in * inv_sqrt2).erf());
  o = in * cdf;
  if (g.should_record({&x})) {
    Eigen::ArrayXf deriv = cdf + in * inv_sqrt_2pi * (-0.5f * in.square()).exp();
    g.record("gelu", {x}, out, [x = Tensor(x), out, deriv = std::move(deriv)]() mutable {
      const auto m = static_cast<Eigen::Index>(deriv.size());
      Eigen::Map<Eigen::ArrayXf>(x.grad().data(), m) += Eigen::Map<const Eigen::ArrayXf>(out.grad().data(), m) * deriv;
    });
  }
  return out;
}

Tensor relu(Graph& g, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > 0.0f ? in[i] : 0.0f;
  if (g.should_record({&x})) {
    g.record("relu", {x}, out, [x = Tensor(x), out]() mutable {
      auto dy = out.grad();
      auto in = x.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (in[i] > 0.0f) gx[i] += dy[i];
    });
  }
  return out;
}

Tensor dropout(Graph& g, const Tensor& x, float p, std::uint64_t seed) {
  require(p >= 0.0f && p < 1.0f, ErrorKind::Contract, "dropout probability must lie in [0, 1)");
  if (p == 0.0f) return x;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  const float inv = 1.0f / (1.0f - p);
  std::vector<float> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? inv : 0.0f;
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * mask[i];
  if (g.should_record({&x})) {
    g.record("dropout", {x}, out, [x = Tensor(x), out, mask = std::move(mask)]() mutable {
      auto dy = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i] * mask[i];
    });
  }
  return out;
}

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  const auto n = last_extent(x);
  require(gain.rank() == 1 && bias.rank() == 1 && gain.dim(0) == n && bias.dim(0) == n, ErrorKind::Dimension,
          "layer_norm: gain/bias must match last extent " + std::to_string(n));
  const auto rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape());
  std::vector<float> xhat(x.numel());
  std::vector<float> inv_std(rows);
  auto in = x.data();
  auto o = out.data();
  auto gv = gain.data(), bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = in.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const float h = static_cast<float>(row[j] - mean) * is;
      xhat[r * n + j] = h;
      o[r * n + j] = h * gv[j] + bv[j];
    }
  }
  if (g.should_record({&x, &gain, &bias})) {
    g.record("layer_norm", {x, gain, bias}, out,
             [x = Tensor(x), gain = Tensor(gain), bias = Tensor(bias), out, rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
               auto dy = out.grad();
               auto gv = gain.data();
               if (gain.requires_grad()) {
                 auto gg = gain.grad();
                 for (std::size_t r = 0; r < rows; ++r)
                   for (std::size_t j = 0; j < n; ++j) gg[j] += dy[r * n + j] * xhat[r * n + j];
               }
               if (bias.requires_grad()) {
                 auto gb = bias.grad();
                 for (std::size_t r = 0; r < rows; ++r)
                   for (std::size_t j = 0; j < n; ++j) gb[j] += dy[r * n + j];
               }
               if (!x.requires_grad()) return;
               auto gx = x.grad();
               const float inv_n = 1.0f / static_cast<float>(n);
               for (std::size_t r = 0; r < rows; ++r) {
                 const float* dyr = dy.data() + r * n;
                 const float* hr = xhat.data() + r * n;
                 float mean_d = 0.0f, mean_dx = 0.0f;
                 for (std::size_t j = 0; j < n; ++j) {
                   const float dh = dyr[j] * gv[j];
                   mean_d += dh;
                   mean_dx += dh * hr[j];
                 }
                 mean_d *= inv_n;
                 mean_dx *= inv_n;
                 float* gxr = gx.data() + r * n;
                 for (std::size_t j = 0; j < n; ++j)
                   gxr[j] += inv_std[r] * (dyr[j] * gv[j] - mean_d - hr[j] * mean_dx);
               }
             });
  }
  return out;
}

Tensor softmax(Graph& g, const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  require(axis < s.size(), ErrorKind::Index, "softmax axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const auto n = s[axis];

  Tensor out = Tensor::zeros(s);
  auto in = x.data();
  auto o = out.data();
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t c = 0; c < inner; ++c) {
      const auto base = a * n * inner + c;
      float mx = in[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const float e = std::exp(in[base + j * inner] - mx);
        o[base + j * inner] = e;
        z += e;
      }
      const float inv = static_cast<float>(1.0 / z);
      for (std::size_t j = 0; j < n; ++j) o[base + j * inner] *= inv;
    }

  if (g.should_record({&x})) {
    g.record("softmax", {x}, out, [x = Tensor(x), out, outer, inner, n]() mutable {
      auto dy = out.grad();
      auto y = out.data();
      auto gx = x.grad();
      for (std::size_t a = 0; a < outer; ++a)
        for (std::size_t c = 0; c < inner; ++c) {
          const auto base = a * n * inner + c;
          double dotp = 0.0;
          for (std::size_t j = 0; j < n; ++j) dotp += static_cast<double>(dy[base + j * inner]) * y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const auto idx = base + j * inner;
            gx[idx] += y[idx] * static_cast<float>(dy[idx] - dotp);
          }
        }
    });
  }
  return out;
}

namespace {

// Row-wise softmax probabilities and per-row losses, computed in double.
void softmax_xent_rows(std::span<const float> logits, std::size_t rows, std::size_t v,
                       std::span<const std::size_t> targets, std::vector<float>& probs, double& total) {
  probs.assign(rows * v, 0.0f);
  total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = logits.data() + r * v;
    const float mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] = static_cast<float>(std::exp(row[j] - lse));
    total += lse - row[targets[r]];
  }
}

Tensor xent_impl(Graph& g, const Tensor& logits, std::size_t rows, std::size_t v, std::vector<std::size_t> targets,
                 const char* name) {
  for (auto t : targets)
    require(t < v, ErrorKind::Index, "cross_entropy target " + std::to_string(t) + " out of range for " +
                                         std::to_string(v) + " logits");
  std::vector<float> probs;
  double total = 0.0;
  softmax_xent_rows(logits.data(), rows, v, targets, probs, total);
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(rows)));
  if (g.should_record({&logits})) {
    g.record(name, {logits}, out,
             [logits = Tensor(logits), out, rows, v, targets = std::move(targets), probs = std::move(probs)]() mutable {
               const float dl = out.grad()[0] / static_cast<float>(rows);
               auto gx = logits.grad();
               for (std::size_t r = 0; r < rows; ++r)
                 for (std::size_t j = 0; j < v; ++j)
                   gx[r * v + j] += dl * (probs[r * v + j] - (j == targets[r] ? 1.0f : 0.0f));
             });
  }
  return out;
}

}  // namespace

Tensor cross_entropy(Graph& g, const Tensor& logits, std::size_t target) {
  require(logits.rank() == 1 || (logits.rank() == 2 && logits.dim(0) == 1), ErrorKind::Dimension,
          "cross_entropy expects a logit vector, got " + shape_str(logits.shape()));
  return xent_impl(g, logits, 1, logits.numel(), {target}, "cross_entropy");
}

Tensor cross_entropy_mean(Graph& g, const Tensor& logits, std::span<const std::size_t> targets) {
  require(logits.rank() == 2 && logits.dim(0) == targets.size(), ErrorKind::Dimension,
          "cross_entropy_mean: logits " + shape_str(logits.shape()) + " vs " + std::to_string(targets.size()) +
              " targets");
  return xent_impl(g, logits, logits.dim(0), logits.dim(1), {targets.begin(), targets.end()}, "cross_entropy_mean");
}

Tensor sum(Graph& g, const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  Tensor out = Tensor::scalar(static_cast<float>(s));
  if (g.should_record({&x})) {
    g.record("sum", {x}, out, [x = Tensor(x), out]() mutable {
      const float d = out.grad()[0];
      for (auto& gi : x.grad()) gi += d;
    });
  }
  return out;
}

Tensor dot(Graph& g, const Tensor& a, const Tensor& b) {
  require(a.numel() == b.numel(), ErrorKind::Dimension,
          "dot: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0.0;
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(x[i]) * y[i];
  Tensor out = Tensor::scalar(static_cast<float>(s));
  if (g.should_record({&a, &b})) {
    g.record("dot", {a, b}, out, [a = Tensor(a), b = Tensor(b), out]() mutable {
      const float d = out.grad()[0];
      auto x = a.data(), y = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += d * x[i];
      }
    });
  }
  return out;
}

Tensor gather_rows(Graph& g, const Tensor& x, std::vector<std::size_t> rows) {
  require(x.rank() == 2, ErrorKind::Dimension, "gather_rows expects rank 2, got " + shape_str(x.shape()));
  require(!rows.empty(), ErrorKind::Contract, "gather_rows needs at least one row");
  const auto d = x.dim(1);
  for (auto r : rows)
    require(r < x.dim(0), ErrorKind::Index, "gather_rows: row " + std::to_string(r) + " out of range");
  Tensor out = Tensor::zeros({rows.size(), d});
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(in.data() + rows[i] * d, d, o.data() + i * d);
  if (g.should_record({&x})) {
    g.record("gather_rows", {x}, out, [x = Tensor(x), out, d, rows = std::move(rows)]() mutable {
      auto dy = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gx[rows[i] * d + j] += dy[i * d + j];
    });
  }
  return out;
}

namespace {

struct AttnDims {
  std::size_t B, T, Tq, H, d, dh, offset;
  bool causal;
  float inv_sqrt;
};

// DH > 0 fixes the head width at compile time so the inner loops unroll;
// DH == 0 reads it from the dims.
template <std::size_t DH>
void attention_forward(const AttnDims& a, const float* Q, const float* K, const float* V, float* O, float* probs) {
  const std::size_t dh = DH ? DH : a.dh;
  const std::size_t d = a.d, T = a.T;
  detail::FloatBuffer row(T);
  for (std::size_t b = 0; b < a.B; ++b)
    for (std::size_t h = 0; h < a.H; ++h) {
      float* P = probs + (b * a.H + h) * a.Tq * T;
      for (std::size_t i = 0; i < a.Tq; ++i) {
        const float* qi = Q + (b * a.Tq + i) * d + h * dh;
        const std::size_t jmax = a.causal ? a.offset + i + 1 : T;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j < jmax; ++j) {
          const float* kj = K + (b * T + j) * d + h * dh;
          float s = 0.0f;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          row[j] = s * a.inv_sqrt;
          mx = std::max(mx, row[j]);
        }
        Eigen::Map<Eigen::ArrayXf> r(row.data(), static_cast<Eigen::Index>(jmax));
        r = (r - mx).exp();
        const float inv = 1.0f / r.sum();
        float* oi = O + (b * a.Tq + i) * d + h * dh;
        for (std::size_t j = 0; j < jmax; ++j) {
          const float p = row[j] * inv;
          P[i * T + j] = p;
          const float* vj = V + (b * T + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
}

template <std::size_t DH>
void attention_backward(const AttnDims& a, const float* Q, const float* K, const float* V, const float* dO,
                        const float* probs, float* dQ, float* dK, float* dV) {
  const std::size_t dh = DH ? DH : a.dh;
  const std::size_t d = a.d, T = a.T;
  detail::FloatBuffer dp(T);
  for (std::size_t b = 0; b < a.B; ++b)
    for (std::size_t h = 0; h < a.H; ++h) {
      const float* P = probs + (b * a.H + h) * a.Tq * T;
      for (std::size_t i = 0; i < a.Tq; ++i) {
        const std::size_t jmax = a.causal ? a.offset + i + 1 : T;
        const float* doi = dO + (b * a.Tq + i) * d + h * dh;
        float rowdot = 0.0f;
        for (std::size_t j = 0; j < jmax; ++j) {
          const float* vj = V + (b * T + j) * d + h * dh;
          float s = 0.0f;
          for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
          dp[j] = s;
          rowdot += s * P[i * T + j];
          if (dV) {
            float* dvj = dV + (b * T + j) * d + h * dh;
            const float p = P[i * T + j];
            for (std::size_t c = 0; c < dh; ++c) dvj[c] += p * doi[c];
          }
        }
        const float* qi = Q + (b * a.Tq + i) * d + h * dh;
        float* dqi = dQ ? dQ + (b * a.Tq + i) * d + h * dh : nullptr;
        for (std::size_t j = 0; j < jmax; ++j) {
          const float ds = P[i * T + j] * (dp[j] - rowdot) * a.inv_sqrt;
          const float* kj = K + (b * T + j) * d + h * dh;
          if (dqi)
            for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
          if (dK) {
            float* dkj = dK + (b * T + j) * d + h * dh;
            for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
          }
        }
      }
    }
}

}  // namespace

Tensor multi_head_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& as,
                            std::vector<float>* probs_out) {
  require_same_shape(k, v, "attention");
  require(k.rank() == 2 && k.dim(0) == as.batch * as.seq_len, ErrorKind::Dimension,
          "attention: expected keys [" + std::to_string(as.batch * as.seq_len) + ", D], got " + shape_str(k.shape()));
  require(as.query_len >= 1 && as.query_len <= as.seq_len, ErrorKind::Dimension, "attention: bad query length");
  require(q.rank() == 2 && q.dim(0) == as.batch * as.query_len && q.dim(1) == k.dim(1), ErrorKind::Dimension,
          "attention: expected queries [" + std::to_string(as.batch * as.query_len) + ", " + std::to_string(k.dim(1)) +
              "], got " + shape_str(q.shape()));
  const auto d = k.dim(1);
  require(as.heads > 0 && d % as.heads == 0, ErrorKind::Dimension,
          "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(as.heads) + " heads");
  const AttnDims dims{as.batch, as.seq_len, as.query_len, as.heads, d, d / as.heads, as.seq_len - as.query_len,
                      as.causal, 1.0f / std::sqrt(static_cast<float>(d / as.heads))};

  Tensor out = Tensor::zeros(q.shape());
  std::vector<float> probs(dims.B * dims.H * dims.Tq * dims.T, 0.0f);
  {
    const float* Q = q.data().data();
    const float* K = k.data().data();
    const float* V = v.data().data();
    float* O = out.data().data();
    switch (dims.dh) {
      case 8: attention_forward<8>(dims, Q, K, V, O, probs.data()); break;
      case 16: attention_forward<16>(dims, Q, K, V, O, probs.data()); break;
      default: attention_forward<0>(dims, Q, K, V, O, probs.data()); break;
    }
  }

  if (probs_out) *probs_out = probs;

  if (g.should_record({&q, &k, &v})) {
    g.record("multi_head_attention", {q, k, v}, out,
             [q = Tensor(q), k = Tensor(k), v = Tensor(v), out, dims, probs = std::move(probs)]() mutable {
               auto grad_or_null = [](Tensor& t) -> float* { return t.requires_grad() ? t.grad().data() : nullptr; };
               float* dQ = grad_or_null(q);
               float* dK = grad_or_null(k);
               float* dV = grad_or_null(v);
               const float* Q = q.data().data();
               const float* K = k.data().data();
               const float* V = v.data().data();
               const float* dO = out.grad().data();
               switch (dims.dh) {
                 case 8: attention_backward<8>(dims, Q, K, V, dO, probs.data(), dQ, dK, dV); break;
                 case 16: attention_backward<16>(dims, Q, K, V, dO, probs.data(), dQ, dK, dV); break;
                 default: attention_backward<0>(dims, Q, K, V, dO, probs.data(), dQ, dK, dV); break;
               }
             });
  }
  return out;
}

}  // namespace rulex
