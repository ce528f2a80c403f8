#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rulex/tensor.hpp"

namespace rulex {

inline constexpr float kLayerNormEps = 1e-5f;

// [M,K] x [K,N] -> [M,N]
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);

// Elementwise, identical shapes.
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, float factor);

// x[..., N] + bias[N]
Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias);

// x[B*T, D] + table[t, :] for each row (b, t); requires T <= table rows.
Tensor add_positional(Graph& g, const Tensor& x, const Tensor& table, std::size_t seq_len);

Tensor gelu(Graph& g, const Tensor& x);
Tensor relu(Graph& g, const Tensor& x);

// Zeroes each element with probability p and rescales survivors by 1/(1-p).
// p == 0 is the identity and records nothing.
Tensor dropout(Graph& g, const Tensor& x, float p, std::uint64_t seed);

// Normalizes over the last axis, then applies gain/bias of that extent.
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = kLayerNormEps);

// Max-subtracted softmax along `axis`.
Tensor softmax(Graph& g, const Tensor& x, std::size_t axis);

// -log softmax(logits)[target]; logits is a vector ([V] or [1,V]).
Tensor cross_entropy(Graph& g, const Tensor& logits, std::size_t target);

// Mean over rows of per-row cross entropy; logits [B,V].
Tensor cross_entropy_mean(Graph& g, const Tensor& logits, std::span<const std::size_t> targets);

Tensor sum(Graph& g, const Tensor& x);
Tensor dot(Graph& g, const Tensor& a, const Tensor& b);

// Rows of x[R, D] at `rows` stacked into [rows.size(), D].
Tensor gather_rows(Graph& g, const Tensor& x, std::vector<std::size_t> rows);

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t seq_len = 1;    // key/value positions per sequence
  std::size_t query_len = 1;  // queries are the last query_len positions
  std::size_t heads = 1;
  bool causal = true;
};

// Scaled dot-product attention. k, v are [batch*seq_len, D]; q is
// [batch*query_len, D] and holds the trailing query_len positions of each
// sequence. Width D is split into `heads` slices. If `probs` is non-null it
// receives the attention weights laid out [batch][head][query][key].
Tensor multi_head_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                            std::vector<float>* probs = nullptr);

}  // namespace rulex
