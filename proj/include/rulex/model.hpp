#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rulex/ops.hpp"
#include "rulex/stimulus.hpp"
#include "rulex/tensor.hpp"

namespace rulex {

enum class Activation { Gelu, Relu };
enum class AttentionMask { Causal, Bidirectional };

std::string to_string(Activation a);
std::string to_string(AttentionMask m);
Activation activation_from_string(const std::string& s);
AttentionMask attention_mask_from_string(const std::string& s);

struct ModelConfig {
  std::size_t num_layers = 12;
  std::size_t d_model = 64;
  std::size_t num_heads = 8;
  std::size_t ff_multiplier = 4;
  std::size_t label_vocab_size = 3;
  std::size_t max_seq_len = 25;
  // Width of the raw token vectors (stimulus length); label tokens are
  // one-hot vectors of this width.
  std::size_t input_dim = 64;
  float dropout = 0.0f;
  Activation activation = Activation::Gelu;
  AttentionMask attention = AttentionMask::Causal;

  void validate() const;
  // max_seq_len must hold `context_pairs` pairs plus the query.
  void validate_context(std::size_t context_pairs) const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

struct ModelParams {
  ModelConfig config;
  Tensor input_proj;  // [input_dim, d_model]
  Tensor positional;  // [max_seq_len, d_model]
  std::vector<LayerParams> layers;
  Tensor lnf_gain, lnf_bias;
  Tensor head, head_bias;  // [d_model, label_vocab_size], [label_vocab_size]

  // Canonical (name, handle) list; handles share storage with the fields.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::size_t num_parameters() const;
  ModelParams clone() const;
  void zero_grad();
  void set_requires_grad(bool on);
};

// Allocates every parameter for `config` with zero values.
ModelParams zero_params(const ModelConfig& config);

// Scaled-normal init: N(0, 1/fan_in) for projections, residual outputs
// further scaled by 1/sqrt(2*num_layers), a near-zero output head, unit gains.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Alternating stimulus/label tokens ending with the query stimulus.
struct TokenSequence {
  std::size_t dim = 0;
  std::vector<float> tokens;  // [length, dim]
  std::size_t target = 0;
  std::size_t length() const { return dim ? tokens.size() / dim : 0; }
};

std::vector<float> encode_label_token(std::size_t label, const ModelConfig& config);
TokenSequence encode_sequence(const SequenceExample& ex, const ModelConfig& config);

struct TokenBatch {
  Tensor tokens;  // [batch*seq_len, input_dim]
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::size_t> targets;
};

TokenBatch make_batch(const std::vector<TokenSequence>& seqs);

struct ForwardOptions {
  bool training = false;          // enables dropout
  std::uint64_t dropout_seed = 0;
  // Keep every position through the last layer (needed to inspect
  // per-position representations; logits are identical either way).
  bool all_positions = false;
  // When non-null, receives per-layer attention weights [batch][head][query][key].
  std::vector<std::vector<float>>* attention = nullptr;
  // When non-null (forces all_positions), receives the final normalized
  // representation of every position, [batch*seq_len, d_model].
  Tensor* hidden = nullptr;
};

// Logits [batch, label_vocab_size] read from the final position.
Tensor forward(Graph& g, const ModelParams& params, const TokenBatch& batch, const ForwardOptions& opts = {});
std::vector<float> forward(const ModelParams& params, const TokenSequence& seq);

struct Prediction {
  std::size_t label = 0;
  std::vector<float> probs;
};

// Argmax of softmax(logits); ties go to the lowest index.
Prediction prediction_from_logits(std::span<const float> logits);
Prediction predict_label(const ModelParams& params, const TokenSequence& seq);
std::vector<Prediction> predict_batch(const ModelParams& params, const std::vector<TokenSequence>& seqs);

}  // namespace rulex
