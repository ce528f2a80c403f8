#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rulex/metrics.hpp"
#include "rulex/model.hpp"
#include "rulex/stimulus.hpp"

namespace rulex {

enum class TrainRegime { InWeights, FewShot, RulePretrain };

std::string to_string(TrainRegime r);
TrainRegime train_regime_from_string(const std::string& s);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t total_steps = 200000;
  double base_lr = 3e-4;
  std::size_t warmup_steps = 4000;
  std::size_t eval_every = 500;
  std::size_t eval_episodes = 256;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  TrainRegime regime = TrainRegime::FewShot;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// min(base/warmup * step, sqrt(warmup) * base * step^-1/2). Undefined at 0.
double lr_at(std::uint64_t step, double base_lr = 3e-4, std::uint64_t warmup_steps = 4000);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  static AdamState for_params(const std::vector<std::pair<std::string, Tensor>>& params);
};

// Bias-corrected Adam update from each tensor's gradient buffer. Throws a
// Numeric error naming the parameter when any gradient is non-finite;
// nothing is modified in that case.
void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state, double lr);

// Per-run data: vocab, fixed spec (in-weights only) and fixed evaluation sets.
class TrainingData {
 public:
  TrainingData(TrainRegime regime, std::uint64_t seed, const VocabConfig& vocab = {});

  TrainRegime regime() const noexcept { return regime_; }
  const StimulusVocab& vocab() const noexcept { return vocab_; }
  const std::optional<PartialExposureSpec>& fixed_spec() const noexcept { return fixed_spec_; }

  SequenceExample train_example(std::uint64_t index) const;
  // Held-out BX queries (fixed spec for in-weights, fresh specs otherwise).
  std::vector<SequenceExample> partial_eval(std::size_t n) const;
  // Control episodes; empty for in-weights (no control analogue there).
  std::vector<SequenceExample> control_eval(std::size_t n) const;
  // Fresh few-shot episodes (few-shot regime) or exposed-class queries
  // (in-weights); empty for rule pretraining.
  std::vector<SequenceExample> accuracy_eval(std::size_t n) const;

 private:
  TrainRegime regime_;
  std::uint64_t seed_;
  StimulusVocab vocab_;
  std::optional<PartialExposureSpec> fixed_spec_;
  std::optional<InWeightsDataset> inweights_;
};

struct EvalResult {
  OutcomeHistogram partial;
  std::optional<OutcomeHistogram> control;
  std::optional<double> accuracy;  // few-shot accuracy, or exposed-class accuracy for in-weights
};

EvalResult evaluate(const ModelParams& params, const TrainingData& data, std::size_t episodes);

struct CheckpointRecord {
  std::uint64_t step = 0;
  double loss = 0.0;  // mean training loss since the previous checkpoint
  double lr = 0.0;
  EvalResult eval;
};

struct RunRecord {
  std::uint64_t seed = 0;
  TrainRegime regime = TrainRegime::FewShot;
  nlohmann::json config;  // model + train snapshot
  std::vector<CheckpointRecord> checkpoints;
  std::uint64_t steps_completed = 0;
};

nlohmann::json to_json(const EvalResult& r);
nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

struct StepInfo {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  const CheckpointRecord* checkpoint = nullptr;  // set on evaluation steps
};

struct TrainOutputs {
  std::filesystem::path metrics_csv;     // appended; header written when new
  std::filesystem::path checkpoint_dir;  // <dir>/seed_<s>/{latest,final}
  std::function<void(const StepInfo&)> on_step;
};

// Trains one seed. Loss is cross entropy on the query prediction only.
// A non-finite loss aborts with a Numeric error; the most recent checkpoint
// on disk is the last good one.
RunRecord train(const ModelConfig& model, const TrainConfig& config, std::uint64_t seed,
                const TrainOutputs& outputs = {}, const VocabConfig& vocab = {});

// One trained run's parameters, as left by train() (exposed for tests/tools).
ModelParams train_params(const ModelConfig& model, const TrainConfig& config, std::uint64_t seed,
                         RunRecord* record = nullptr, const TrainOutputs& outputs = {}, const VocabConfig& vocab = {});

struct MetricSummary {
  double mean = 0.0;
  double halfwidth = 0.0;  // 1.96 standard errors across runs; 0 for a single run
  std::size_t runs = 0;
};

// Per-run metrics averaged over the last half of its checkpoints.
std::map<std::string, double> window_average(const RunRecord& record);

struct RunSummary {
  std::map<std::string, MetricSummary> metrics;
  std::size_t runs = 0;
  bool single_run = false;
};

RunSummary summarize_runs(const std::vector<RunRecord>& records);
RunSummary summarize_run(const RunRecord& record);
nlohmann::json to_json(const RunSummary& s);

}  // namespace rulex
