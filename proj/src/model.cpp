#include "rulex/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rulex/error.hpp"

namespace rulex {

std::string to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "relu"; }
std::string to_string(AttentionMask m) { return m == AttentionMask::Causal ? "causal" : "bidirectional"; }

Activation activation_from_string(const std::string& s) {
  if (s == "gelu") return Activation::Gelu;
  if (s == "relu") return Activation::Relu;
  fail(ErrorKind::Config, "unknown activation '" + s + "'");
}

AttentionMask attention_mask_from_string(const std::string& s) {
  if (s == "causal") return AttentionMask::Causal;
  if (s == "bidirectional") return AttentionMask::Bidirectional;
  fail(ErrorKind::Config, "unknown attention mask '" + s + "'");
}

void ModelConfig::validate() const {
  require(num_layers >= 1, ErrorKind::Config, "model.num_layers must be at least 1");
  require(d_model >= 1 && num_heads >= 1, ErrorKind::Config, "model.d_model and model.num_heads must be positive");
  require(d_model % num_heads == 0, ErrorKind::Config,
          "model.d_model (" + std::to_string(d_model) + ") must be divisible by model.num_heads (" +
              std::to_string(num_heads) + ")");
  require(ff_multiplier >= 1, ErrorKind::Config, "model.ff_multiplier must be positive");
  require(label_vocab_size >= 2, ErrorKind::Config, "model.label_vocab_size must be at least 2");
  require(input_dim >= label_vocab_size, ErrorKind::Config, "model.input_dim must fit one-hot label tokens");
  require(max_seq_len >= 1, ErrorKind::Config, "model.max_seq_len must be positive");
  require(dropout >= 0.0f && dropout < 1.0f, ErrorKind::Config, "model.dropout must lie in [0, 1)");
}

void ModelConfig::validate_context(std::size_t context_pairs) const {
  require(max_seq_len >= 2 * context_pairs + 1, ErrorKind::Config,
          "model.max_seq_len (" + std::to_string(max_seq_len) + ") cannot hold " + std::to_string(context_pairs) +
              " context pairs plus a query");
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("input_proj", input_proj);
  out.emplace_back("positional", positional);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const auto p = "layers." + std::to_string(l) + ".";
    out.emplace_back(p + "ln1.gain", L.ln1_gain);
    out.emplace_back(p + "ln1.bias", L.ln1_bias);
    out.emplace_back(p + "attn.wq", L.wq);
    out.emplace_back(p + "attn.wk", L.wk);
    out.emplace_back(p + "attn.wv", L.wv);
    out.emplace_back(p + "attn.wo", L.wo);
    out.emplace_back(p + "attn.bo", L.bo);
    out.emplace_back(p + "ln2.gain", L.ln2_gain);
    out.emplace_back(p + "ln2.bias", L.ln2_bias);
    out.emplace_back(p + "ff.w1", L.w1);
    out.emplace_back(p + "ff.b1", L.b1);
    out.emplace_back(p + "ff.w2", L.w2);
    out.emplace_back(p + "ff.b2", L.b2);
  }
  out.emplace_back("lnf.gain", lnf_gain);
  out.emplace_back("lnf.bias", lnf_bias);
  out.emplace_back("head.weight", head);
  out.emplace_back("head.bias", head_bias);
  return out;
}

std::size_t ModelParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t.numel();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams p = zero_params(config);
  auto src = named();
  auto dst = p.named();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto d = dst[i].second.data();
    auto s = src[i].second.data();
    std::copy(s.begin(), s.end(), d.begin());
    dst[i].second.set_requires_grad(src[i].second.requires_grad());
  }
  return p;
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : named()) t.zero_grad();
}

void ModelParams::set_requires_grad(bool on) {
  for (auto& [name, t] : named()) t.set_requires_grad(on);
}

ModelParams zero_params(const ModelConfig& c) {
  c.validate();
  const auto d = c.d_model, ff = c.d_model * c.ff_multiplier;
  ModelParams p;
  p.config = c;
  p.input_proj = Tensor::zeros({c.input_dim, d});
  p.positional = Tensor::zeros({c.max_seq_len, d});
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    LayerParams L;
    L.ln1_gain = Tensor::zeros({d});
    L.ln1_bias = Tensor::zeros({d});
    L.wq = Tensor::zeros({d, d});
    L.wk = Tensor::zeros({d, d});
    L.wv = Tensor::zeros({d, d});
    L.wo = Tensor::zeros({d, d});
    L.bo = Tensor::zeros({d});
    L.ln2_gain = Tensor::zeros({d});
    L.ln2_bias = Tensor::zeros({d});
    L.w1 = Tensor::zeros({d, ff});
    L.b1 = Tensor::zeros({ff});
    L.w2 = Tensor::zeros({ff, d});
    L.b2 = Tensor::zeros({d});
    p.layers.push_back(std::move(L));
  }
  p.lnf_gain = Tensor::zeros({d});
  p.lnf_bias = Tensor::zeros({d});
  p.head = Tensor::zeros({d, c.label_vocab_size});
  p.head_bias = Tensor::zeros({c.label_vocab_size});
  return p;
}

ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = zero_params(c);
  Rng rng(mix_seed(seed, 0x696e6974ull, 0));
  auto fill_normal = [&rng](Tensor& t, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    for (auto& v : t.data()) v = static_cast<float>(dist(rng));
  };
  auto fill_const = [](Tensor& t, float v) { std::fill(t.data().begin(), t.data().end(), v); };

  const double d = static_cast<double>(c.d_model);
  const double ff = d * static_cast<double>(c.ff_multiplier);
  const double residual = 1.0 / std::sqrt(2.0 * static_cast<double>(c.num_layers));
  fill_normal(p.input_proj, 1.0 / std::sqrt(static_cast<double>(c.input_dim)));
  fill_normal(p.positional, 0.02);
  for (auto& L : p.layers) {
    fill_const(L.ln1_gain, 1.0f);
    fill_const(L.ln2_gain, 1.0f);
    fill_normal(L.wq, 1.0 / std::sqrt(d));
    fill_normal(L.wk, 1.0 / std::sqrt(d));
    fill_normal(L.wv, 1.0 / std::sqrt(d));
    fill_normal(L.wo, residual / std::sqrt(d));
    fill_normal(L.w1, 1.0 / std::sqrt(d));
    fill_normal(L.w2, residual / std::sqrt(ff));
  }
  fill_const(p.lnf_gain, 1.0f);
  fill_normal(p.head, 0.02);
  p.set_requires_grad(true);
  return p;
}

std::vector<float> encode_label_token(std::size_t label, const ModelConfig& config) {
  require(label < config.label_vocab_size, ErrorKind::Index,
          "label " + std::to_string(label) + " out of range for vocabulary of " +
              std::to_string(config.label_vocab_size));
  std::vector<float> t(config.input_dim, 0.0f);
  t[label] = 1.0f;
  return t;
}

TokenSequence encode_sequence(const SequenceExample& ex, const ModelConfig& config) {
  TokenSequence seq;
  seq.dim = config.input_dim;
  auto push_stimulus = [&](const std::vector<float>& s) {
    require(s.size() == config.input_dim, ErrorKind::Dimension,
            "stimulus length " + std::to_string(s.size()) + " does not match model input_dim " +
                std::to_string(config.input_dim));
    seq.tokens.insert(seq.tokens.end(), s.begin(), s.end());
  };
  for (const auto& item : ex.context) {
    push_stimulus(item.stimulus);
    const auto lt = encode_label_token(item.label, config);
    seq.tokens.insert(seq.tokens.end(), lt.begin(), lt.end());
  }
  push_stimulus(ex.query);
  require(ex.target < config.label_vocab_size, ErrorKind::Index, "target label out of range");
  seq.target = ex.target;
  return seq;
}

TokenBatch make_batch(const std::vector<TokenSequence>& seqs) {
  require(!seqs.empty(), ErrorKind::Contract, "empty batch");
  const auto dim = seqs.front().dim;
  const auto len = seqs.front().length();
  require(dim > 0 && len > 0, ErrorKind::Contract, "empty token sequence");
  std::vector<float> flat;
  flat.reserve(seqs.size() * len * dim);
  TokenBatch b;
  for (const auto& s : seqs) {
    require(s.dim == dim && s.length() == len && s.tokens.size() == len * dim, ErrorKind::Dimension,
            "batch sequences must share length and width");
    flat.insert(flat.end(), s.tokens.begin(), s.tokens.end());
    b.targets.push_back(s.target);
  }
  b.tokens = Tensor({seqs.size() * len, dim}, std::move(flat));
  b.batch = seqs.size();
  b.seq_len = len;
  return b;
}

namespace {

std::vector<std::size_t> last_rows(std::size_t batch, std::size_t seq_len) {
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = b * seq_len + seq_len - 1;
  return rows;
}

}  // namespace

Tensor forward(Graph& g, const ModelParams& P, const TokenBatch& batch, const ForwardOptions& opts) {
  const auto& c = P.config;
  require(batch.tokens.defined() && batch.tokens.rank() == 2 && batch.tokens.dim(1) == c.input_dim,
          ErrorKind::Dimension, "token width does not match model input_dim");
  require(batch.seq_len >= 1 && batch.tokens.dim(0) == batch.batch * batch.seq_len, ErrorKind::Dimension,
          "token rows do not match batch * seq_len");
  require(batch.seq_len <= c.max_seq_len, ErrorKind::Contract,
          "sequence of length " + std::to_string(batch.seq_len) + " exceeds max_seq_len " +
              std::to_string(c.max_seq_len));
  const bool all_positions = opts.all_positions || opts.hidden != nullptr;
  const float p_drop = opts.training ? c.dropout : 0.0f;
  std::uint64_t drop_counter = 0;
  auto drop = [&](const Tensor& t) {
    return dropout(g, t, p_drop, mix_seed(opts.dropout_seed, 0x64726f70ull, drop_counter++));
  };
  auto act = [&](const Tensor& t) { return c.activation == Activation::Gelu ? gelu(g, t) : relu(g, t); };

  const auto B = batch.batch, T = batch.seq_len;
  const auto final_rows = last_rows(B, T);
  if (opts.attention) opts.attention->clear();

  Tensor x = matmul(g, batch.tokens, P.input_proj);
  x = add_positional(g, x, P.positional, T);
  for (std::size_t l = 0; l < P.layers.size(); ++l) {
    const auto& L = P.layers[l];
    // In the last layer only the query position feeds the output head.
    const bool query_only = !all_positions && l + 1 == P.layers.size();
    Tensor h = layer_norm(g, x, L.ln1_gain, L.ln1_bias);
    Tensor q_src = query_only ? gather_rows(g, h, final_rows) : h;
    Tensor q = matmul(g, q_src, L.wq);
    Tensor k = matmul(g, h, L.wk);
    Tensor v = matmul(g, h, L.wv);
    AttentionShape as{B, T, query_only ? 1 : T, c.num_heads, c.attention == AttentionMask::Causal};
    std::vector<float> probs;
    Tensor a = multi_head_attention(g, q, k, v, as, opts.attention ? &probs : nullptr);
    if (opts.attention) opts.attention->push_back(std::move(probs));
    a = drop(add_bias(g, matmul(g, a, L.wo), L.bo));
    Tensor resid = query_only ? gather_rows(g, x, final_rows) : x;
    x = add(g, resid, a);
    Tensor h2 = layer_norm(g, x, L.ln2_gain, L.ln2_bias);
    Tensor f = act(add_bias(g, matmul(g, h2, L.w1), L.b1));
    f = drop(add_bias(g, matmul(g, f, L.w2), L.b2));
    x = add(g, x, f);
  }
  Tensor final_x;
  if (all_positions) {
    Tensor normed = layer_norm(g, x, P.lnf_gain, P.lnf_bias);
    if (opts.hidden) *opts.hidden = normed;
    final_x = gather_rows(g, normed, final_rows);
  } else {
    final_x = layer_norm(g, x, P.lnf_gain, P.lnf_bias);
  }
  return add_bias(g, matmul(g, final_x, P.head), P.head_bias);
}

std::vector<float> forward(const ModelParams& params, const TokenSequence& seq) {
  Graph g(false);
  auto logits = forward(g, params, make_batch({seq}));
  return {logits.data().begin(), logits.data().end()};
}

Prediction prediction_from_logits(std::span<const float> logits) {
  require(!logits.empty(), ErrorKind::Contract, "empty logits");
  Prediction p;
  p.label = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const float mx = logits[p.label];
  double z = 0.0;
  p.probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) z += std::exp(static_cast<double>(logits[i]) - mx);
  for (std::size_t i = 0; i < logits.size(); ++i)
    p.probs[i] = static_cast<float>(std::exp(static_cast<double>(logits[i]) - mx) / z);
  return p;
}

Prediction predict_label(const ModelParams& params, const TokenSequence& seq) {
  return prediction_from_logits(forward(params, seq));
}

std::vector<Prediction> predict_batch(const ModelParams& params, const std::vector<TokenSequence>& seqs) {
  Graph g(false);
  auto logits = forward(g, params, make_batch(seqs));
  const auto V = params.config.label_vocab_size;
  std::vector<Prediction> out;
  out.reserve(seqs.size());
  for (std::size_t b = 0; b < seqs.size(); ++b) out.push_back(prediction_from_logits(logits.data().subspan(b * V, V)));
  return out;
}

}  // namespace rulex
