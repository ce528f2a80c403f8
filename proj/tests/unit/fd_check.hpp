#pragma once

// Central-difference gradient check for single ops on small float tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rulex/ops.hpp"
#include "rulex/tensor.hpp"

namespace fdtest {

inline rulex::Tensor random_tensor(rulex::Shape shape, std::uint64_t seed, float scale = 1.0f, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, scale);
  std::vector<float> v(rulex::shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return rulex::Tensor(std::move(shape), std::move(v), grad);
}

using ScalarFn = std::function<rulex::Tensor(rulex::Graph&, const std::vector<rulex::Tensor>&)>;

// Projects the op output on fixed random weights so every output element
// contributes to the scalar, then compares reverse-mode gradients with
// (f(x+h) - f(x-h)) / 2h. Returns the largest over inputs of
// ||analytic - numeric|| / max(||analytic||, ||numeric||); per-element ratios
// on near-zero entries only measure float rounding in the differences.
inline double max_relative_error(std::vector<rulex::Tensor> inputs,
                                 const std::function<rulex::Tensor(rulex::Graph&, const std::vector<rulex::Tensor>&)>& op,
                                 double h = 1e-3) {
  rulex::Tensor weights;
  auto evaluate = [&](bool record) {
    rulex::Graph g(record);
    auto out = op(g, inputs);
    if (!weights.defined()) weights = random_tensor(out.shape(), 4242, 1.0f, false);
    double acc = 0.0;
    auto d = out.data();
    auto w = weights.data();
    for (std::size_t i = 0; i < d.size(); ++i) acc += static_cast<double>(d[i]) * w[i];
    return acc;
  };
  for (auto& t : inputs) t.zero_grad();
  {
    rulex::Graph g;
    auto out = op(g, inputs);
    if (!weights.defined()) weights = random_tensor(out.shape(), 4242, 1.0f, false);
    auto loss = rulex::dot(g, out, weights);
    g.backward(loss);
  }
  double worst = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> numeric(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const float orig = t.data()[i];
      // The float perturbation is not exactly h, so divide by the step taken.
      const float hi = static_cast<float>(orig + h), lo = static_cast<float>(orig - h);
      t.data()[i] = hi;
      const double up = evaluate(false);
      t.data()[i] = lo;
      const double down = evaluate(false);
      t.data()[i] = orig;
      numeric[i] = (up - down) / (static_cast<double>(hi) - lo);
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto analytic = t.grad();
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff2 += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      a2 += double(analytic[i]) * analytic[i];
      n2 += numeric[i] * numeric[i];
    }
    const double denom = std::sqrt(std::max(a2, n2));
    if (denom > 0.0) worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

}  // namespace fdtest
