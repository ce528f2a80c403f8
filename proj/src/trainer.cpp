#include "rulex/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rulex/checkpoint.hpp"
#include "rulex/error.hpp"
#include "rulex/ops.hpp"

namespace rulex {
namespace {

constexpr std::uint64_t kStreamVocab = 0x766f636162ull;
constexpr std::uint64_t kStreamSpec = 0x73706563ull;
constexpr std::uint64_t kStreamTrain = 0x747261696eull;
constexpr std::uint64_t kStreamEvalPartial = 0x6576616c70ull;
constexpr std::uint64_t kStreamEvalControl = 0x6576616c63ull;
constexpr std::uint64_t kStreamEvalAccuracy = 0x6576616c61ull;
constexpr std::uint64_t kStreamDropout = 0x64726f70ull;
constexpr std::uint64_t kAccuracyIndexBase = 1ull << 40;
constexpr std::size_t kEvalChunk = 128;

const char* kCsvHeader =
    "seed,step,loss,lr,rule_consistent,exemplar_alternative,other,n,control_rule_consistent,"
    "control_exemplar_alternative,control_other,accuracy";

nlohmann::json histogram_json(const OutcomeHistogram& h) {
  return {{"rule_consistent", h.rule_consistent}, {"exemplar_alternative", h.exemplar_alternative},
          {"other", h.other}, {"n", h.n()}};
}

OutcomeHistogram histogram_from_json(const nlohmann::json& j) {
  OutcomeHistogram h;
  h.rule_consistent = j.at("rule_consistent").get<std::size_t>();
  h.exemplar_alternative = j.at("exemplar_alternative").get<std::size_t>();
  h.other = j.at("other").get<std::size_t>();
  require(h.n() == j.at("n").get<std::size_t>(), ErrorKind::Io, "histogram counts do not sum to n");
  return h;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

OutcomeHistogram classify_all(const std::vector<SequenceExample>& eps, const std::vector<Prediction>& preds) {
  OutcomeHistogram h;
  for (std::size_t i = 0; i < eps.size(); ++i) h.add(classify_outcome(*eps[i].spec, preds[i].label));
  return h;
}

std::vector<Prediction> predict_examples(const ModelParams& params, const std::vector<SequenceExample>& eps) {
  std::vector<Prediction> out;
  out.reserve(eps.size());
  for (std::size_t start = 0; start < eps.size(); start += kEvalChunk) {
    std::vector<TokenSequence> seqs;
    for (std::size_t i = start; i < std::min(eps.size(), start + kEvalChunk); ++i)
      seqs.push_back(encode_sequence(eps[i], params.config));
    auto preds = predict_batch(params, seqs);
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

struct EvalSets {
  std::vector<SequenceExample> partial, control, accuracy;
};

EvalResult evaluate_sets(const ModelParams& params, const EvalSets& sets) {
  EvalResult r;
  r.partial = classify_all(sets.partial, predict_examples(params, sets.partial));
  if (!sets.control.empty()) r.control = classify_all(sets.control, predict_examples(params, sets.control));
  if (!sets.accuracy.empty()) {
    const auto preds = predict_examples(params, sets.accuracy);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i].label == sets.accuracy[i].target;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
  }
  return r;
}

EvalSets make_eval_sets(const TrainingData& data, std::size_t n) {
  return {data.partial_eval(n), data.control_eval(n), data.accuracy_eval(n)};
}

void append_csv_row(std::ofstream& csv, std::uint64_t seed, std::uint64_t step, double loss, double lr,
                    const CheckpointRecord* ck) {
  if (!csv.is_open()) return;
  csv << seed << ',' << step << ',' << fmt_double(loss) << ',' << fmt_double(lr);
  if (ck) {
    const auto& e = ck->eval;
    csv << ',' << e.partial.rule_consistent << ',' << e.partial.exemplar_alternative << ',' << e.partial.other << ','
        << e.partial.n();
    if (e.control) csv << ',' << e.control->rule_consistent << ',' << e.control->exemplar_alternative << ','
                       << e.control->other;
    else csv << ",,,";
    csv << ',' << (e.accuracy ? fmt_double(*e.accuracy) : std::string());
  } else {
    csv << ",,,,,,,,";
  }
  csv << '\n';
}

}  // namespace

std::string to_string(TrainRegime r) {
  switch (r) {
    case TrainRegime::InWeights: return "inweights";
    case TrainRegime::FewShot: return "fewshot";
    case TrainRegime::RulePretrain: return "rulepretrain";
  }
  return "unknown";
}

TrainRegime train_regime_from_string(const std::string& s) {
  for (auto r : {TrainRegime::InWeights, TrainRegime::FewShot, TrainRegime::RulePretrain})
    if (to_string(r) == s) return r;
  fail(ErrorKind::Config, "unknown training regime '" + s + "' (expected inweights, fewshot or rulepretrain)");
}

void TrainConfig::validate() const {
  require(batch_size >= 1, ErrorKind::Config, "train.batch_size must be positive");
  require(warmup_steps >= 1, ErrorKind::Config, "train.warmup_steps must be positive");
  require(total_steps > warmup_steps, ErrorKind::Config,
          "train.total_steps (" + std::to_string(total_steps) + ") must exceed train.warmup_steps (" +
              std::to_string(warmup_steps) + ")");
  require(base_lr > 0.0 && std::isfinite(base_lr), ErrorKind::Config, "train.base_lr must be positive");
  require(eval_every >= 1, ErrorKind::Config, "train.eval_every must be positive");
  require(eval_episodes >= 1, ErrorKind::Config, "train.eval_episodes must be positive");
  require(!seeds.empty(), ErrorKind::Config, "train.seeds must list at least one seed");
}

double lr_at(std::uint64_t step, double base_lr, std::uint64_t warmup_steps) {
  require(step >= 1, ErrorKind::Contract, "lr_at is undefined at step 0");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return std::min(base_lr / w * s, std::pow(w, 0.5) * base_lr * std::pow(s, -0.5));
}

AdamState AdamState::for_params(const std::vector<std::pair<std::string, Tensor>>& params) {
  AdamState st;
  for (const auto& [name, t] : params) {
    st.m.emplace_back(t.numel(), 0.0f);
    st.v.emplace_back(t.numel(), 0.0f);
  }
  return st;
}

void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& st, double lr) {
  require(st.m.size() == params.size() && st.v.size() == params.size(), ErrorKind::Dimension,
          "optimizer state does not match the parameter list");
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& [name, t] = params[p];
    require(st.m[p].size() == t.numel() && st.v[p].size() == t.numel(), ErrorKind::Dimension,
            "optimizer moments do not match parameter " + name);
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        fail(ErrorKind::Numeric, "non-finite gradient " + std::to_string(g[i]) + " in " + name + "[" +
                                     std::to_string(i) + "] at optimizer step " + std::to_string(st.step + 1));
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const float b1 = static_cast<float>(st.beta1), b2 = static_cast<float>(st.beta2);
  const float step_size = static_cast<float>(lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(st.eps);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    if (!t.has_grad()) continue;
    auto w = t.data();
    const auto g = std::as_const(t).grad();
    auto& m = st.m[p];
    auto& v = st.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

TrainingData::TrainingData(TrainRegime regime, std::uint64_t seed, const VocabConfig& vocab)
    : regime_(regime), seed_(seed), vocab_(StimulusVocab::build(mix_seed(seed, kStreamVocab, 0), vocab)) {
  if (regime_ == TrainRegime::InWeights) {
    Rng rng(mix_seed(seed, kStreamSpec, 0));
    fixed_spec_ = PartialExposureSpec::random(rng, vocab_.config().num_classes);
    inweights_.emplace(vocab_, *fixed_spec_, mix_seed(seed, kStreamTrain, 0));
  }
}

SequenceExample TrainingData::train_example(std::uint64_t index) const {
  switch (regime_) {
    case TrainRegime::InWeights: return inweights_->train_example(index);
    case TrainRegime::FewShot: return generate_episode(vocab_, Regime::FewShot, mix_seed(seed_, kStreamTrain, 0), index);
    case TrainRegime::RulePretrain:
      return generate_episode(vocab_, Regime::RulePretrain, mix_seed(seed_, kStreamTrain, 0), index);
  }
  fail(ErrorKind::Contract, "unhandled regime");
}

std::vector<SequenceExample> TrainingData::partial_eval(std::size_t n) const {
  std::vector<SequenceExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (inweights_) out.push_back(inweights_->eval_example(i));
    else out.push_back(generate_episode(vocab_, Regime::PartialExposure, mix_seed(seed_, kStreamEvalPartial, 0), i));
  }
  return out;
}

std::vector<SequenceExample> TrainingData::control_eval(std::size_t n) const {
  std::vector<SequenceExample> out;
  if (inweights_) return out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(generate_episode(vocab_, Regime::Control, mix_seed(seed_, kStreamEvalControl, 0), i));
  return out;
}

std::vector<SequenceExample> TrainingData::accuracy_eval(std::size_t n) const {
  std::vector<SequenceExample> out;
  if (regime_ == TrainRegime::RulePretrain) return out;
  for (std::size_t i = 0; i < n; ++i) {
    if (inweights_) out.push_back(inweights_->train_example(kAccuracyIndexBase + i));
    else out.push_back(generate_episode(vocab_, Regime::FewShot, mix_seed(seed_, kStreamEvalAccuracy, 0), i));
  }
  return out;
}

EvalResult evaluate(const ModelParams& params, const TrainingData& data, std::size_t episodes) {
  return evaluate_sets(params, make_eval_sets(data, episodes));
}

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json j;
  j["partial"] = histogram_json(r.partial);
  j["control"] = r.control ? histogram_json(*r.control) : nlohmann::json(nullptr);
  j["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["regime"] = to_string(r.regime);
  j["config"] = r.config;
  j["steps_completed"] = r.steps_completed;
  auto& cks = j["checkpoints"] = nlohmann::json::array();
  for (const auto& c : r.checkpoints) {
    auto e = to_json(c.eval);
    e["step"] = c.step;
    e["loss"] = c.loss;
    e["lr"] = c.lr;
    cks.push_back(std::move(e));
  }
  return j;
}

RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  try {
    r.seed = j.at("seed").get<std::uint64_t>();
    r.regime = train_regime_from_string(j.at("regime").get<std::string>());
    r.config = j.value("config", nlohmann::json::object());
    r.steps_completed = j.value("steps_completed", std::uint64_t{0});
    for (const auto& e : j.at("checkpoints")) {
      CheckpointRecord c;
      c.step = e.at("step").get<std::uint64_t>();
      c.loss = e.at("loss").get<double>();
      c.lr = e.at("lr").get<double>();
      c.eval.partial = histogram_from_json(e.at("partial"));
      if (!e.at("control").is_null()) c.eval.control = histogram_from_json(e.at("control"));
      if (!e.at("accuracy").is_null()) c.eval.accuracy = e.at("accuracy").get<double>();
      require(r.checkpoints.empty() || c.step > r.checkpoints.back().step, ErrorKind::Io,
              "run record checkpoints must be strictly increasing in step");
      r.checkpoints.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, std::string("malformed run record: ") + e.what());
  }
  return r;
}

ModelParams train_params(const ModelConfig& model, const TrainConfig& cfg, std::uint64_t seed, RunRecord* record_out,
                         const TrainOutputs& out, const VocabConfig& vocab) {
  model.validate();
  model.validate_context(kContextPairs);
  cfg.validate();
  require(model.input_dim == vocab.num_slots * vocab.feature_len, ErrorKind::Config,
          "model.input_dim must equal the stimulus length (" + std::to_string(vocab.num_slots * vocab.feature_len) +
              ")");

  const TrainingData data(cfg.regime, seed, vocab);
  const EvalSets eval_sets = make_eval_sets(data, cfg.eval_episodes);
  ModelParams params = init_params(model, mix_seed(seed, 0x6d6f64656cull, 0));
  const auto named = params.named();
  AdamState opt = AdamState::for_params(named);

  RunRecord record;
  record.seed = seed;
  record.regime = cfg.regime;
  record.config = {{"model", to_json(model)}};

  std::ofstream csv;
  if (!out.metrics_csv.empty()) {
    const bool fresh = !std::filesystem::exists(out.metrics_csv) || std::filesystem::file_size(out.metrics_csv) == 0;
    if (out.metrics_csv.has_parent_path()) std::filesystem::create_directories(out.metrics_csv.parent_path());
    csv.open(out.metrics_csv, std::ios::app);
    require(csv.good(), ErrorKind::Io, "cannot open metrics file " + out.metrics_csv.string());
    if (fresh) csv << kCsvHeader << '\n';
  }
  const auto ckpt_dir = out.checkpoint_dir.empty() ? std::filesystem::path()
                                                   : out.checkpoint_dir / ("seed_" + std::to_string(seed));
  auto ckpt_meta = [&](std::uint64_t step) {
    return nlohmann::json{{"seed", seed}, {"step", step}, {"regime", to_string(cfg.regime)}};
  };

  double window_loss = 0.0;
  std::size_t window_n = 0;
  std::vector<SequenceExample> examples(cfg.batch_size);
  std::vector<TokenSequence> seqs(cfg.batch_size);
  for (std::uint64_t step = 1; step <= cfg.total_steps; ++step) {
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      examples[i] = data.train_example((step - 1) * cfg.batch_size + i);
      seqs[i] = encode_sequence(examples[i], model);
    }
    const TokenBatch batch = make_batch(seqs);
    Graph g;
    ForwardOptions fo;
    fo.training = true;
    fo.dropout_seed = mix_seed(seed, kStreamDropout, step);
    Tensor logits = forward(g, params, batch, fo);
    Tensor loss = cross_entropy_mean(g, logits, batch.targets);
    const double loss_v = loss.item();
    if (!std::isfinite(loss_v)) {
      std::string where = ckpt_dir.empty() ? std::string("none written") : (ckpt_dir / "latest").string();
      fail(ErrorKind::Numeric, "non-finite loss at step " + std::to_string(step) + " (seed " + std::to_string(seed) +
                                   "); last good checkpoint: " + where);
    }
    params.zero_grad();
    g.backward(loss);
    const double lr = lr_at(step, cfg.base_lr, cfg.warmup_steps);
    adam_step(named, opt, lr);
    window_loss += loss_v;
    ++window_n;

    const CheckpointRecord* ck_ptr = nullptr;
    if (step % cfg.eval_every == 0 || step == cfg.total_steps) {
      CheckpointRecord ck;
      ck.step = step;
      ck.loss = window_loss / static_cast<double>(window_n);
      ck.lr = lr;
      ck.eval = evaluate_sets(params, eval_sets);
      record.checkpoints.push_back(std::move(ck));
      ck_ptr = &record.checkpoints.back();
      window_loss = 0.0;
      window_n = 0;
      if (!ckpt_dir.empty()) save_checkpoint(ckpt_dir / "latest", params, ckpt_meta(step));
    }
    record.steps_completed = step;
    append_csv_row(csv, seed, step, loss_v, lr, ck_ptr);
    if (out.on_step) out.on_step(StepInfo{seed, step, loss_v, lr, ck_ptr});
  }
  if (!ckpt_dir.empty()) save_checkpoint(ckpt_dir / "final", params, ckpt_meta(cfg.total_steps));
  if (record_out) *record_out = std::move(record);
  return params;
}

RunRecord train(const ModelConfig& model, const TrainConfig& config, std::uint64_t seed, const TrainOutputs& outputs,
                const VocabConfig& vocab) {
  RunRecord record;
  train_params(model, config, seed, &record, outputs, vocab);
  return record;
}

std::map<std::string, double> window_average(const RunRecord& r) {
  require(!r.checkpoints.empty(), ErrorKind::Contract, "run for seed " + std::to_string(r.seed) + " has no checkpoints");
  const std::size_t start = r.checkpoints.size() / 2;
  std::map<std::string, double> sums;
  std::map<std::string, std::size_t> counts;
  auto acc = [&](const std::string& k, double v) {
    sums[k] += v;
    ++counts[k];
  };
  for (std::size_t i = start; i < r.checkpoints.size(); ++i) {
    const auto& c = r.checkpoints[i];
    for (auto o : {Outcome::RuleConsistent, Outcome::ExemplarAlternative, Outcome::Other}) {
      acc(to_string(o), c.eval.partial.frequency(o));
      if (c.eval.control) acc("control_" + to_string(o), c.eval.control->frequency(o));
    }
    if (c.eval.accuracy) acc("accuracy", *c.eval.accuracy);
    acc("loss", c.loss);
  }
  std::map<std::string, double> out;
  for (const auto& [k, s] : sums) out[k] = s / static_cast<double>(counts[k]);
  return out;
}

RunSummary summarize_runs(const std::vector<RunRecord>& records) {
  require(!records.empty(), ErrorKind::Contract, "summary needs at least one completed run");
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : records)
    for (const auto& [k, v] : window_average(r)) values[k].push_back(v);
  RunSummary s;
  s.runs = records.size();
  s.single_run = records.size() == 1;
  for (const auto& [k, vs] : values) {
    MetricSummary m;
    m.runs = vs.size();
    double mean = 0.0;
    for (double v : vs) mean += v;
    mean /= static_cast<double>(vs.size());
    m.mean = mean;
    if (vs.size() > 1) {
      double ss = 0.0;
      for (double v : vs) ss += (v - mean) * (v - mean);
      const double sd = std::sqrt(ss / static_cast<double>(vs.size() - 1));
      m.halfwidth = kZ95 * sd / std::sqrt(static_cast<double>(vs.size()));
    }
    s.metrics[k] = m;
  }
  return s;
}

RunSummary summarize_run(const RunRecord& record) { return summarize_runs({record}); }

nlohmann::json to_json(const RunSummary& s) {
  nlohmann::json j;
  j["runs"] = s.runs;
  j["single_run"] = s.single_run;
  auto& m = j["metrics"] = nlohmann::json::object();
  for (const auto& [k, v] : s.metrics) m[k] = {{"mean", v.mean}, {"halfwidth", v.halfwidth}, {"runs", v.runs}};
  return j;
}

}  // namespace rulex
