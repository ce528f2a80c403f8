#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rulex/lm_harness.hpp"
#include "rulex/model.hpp"
#include "rulex/stimulus.hpp"
#include "rulex/trainer.hpp"

namespace rulex {

inline constexpr int kConfigSchemaVersion = 1;

struct EvalSettings {
  std::size_t episodes = 1000;  // episodes per condition for `eval`
  double similarity_scale = kDefaultSimilarityScale;
  bool operator==(const EvalSettings&) const = default;
};

struct LmSettings {
  std::string endpoints_file;  // relative paths resolve against the config file
  std::string vocab_file;      // empty: built-in vocabulary
  std::vector<std::string> conditions{"shape", "color", "control"};
  std::vector<int> formats{1, 2, 3, 4};
  std::size_t episodes = 100;
  bool operator==(const LmSettings&) const = default;
};

// Everything needed to reproduce a run. `regime` is one of fewshot,
// inweights, rulepretrain (synthetic) or lm.
struct ExperimentManifest {
  std::string name = "experiment";
  std::string regime = "fewshot";
  ModelConfig model;
  TrainConfig train;
  VocabConfig data;
  EvalSettings eval;
  LmSettings lm;
  std::string code_version;
  std::string created;  // RFC 3339 UTC; informational, excluded from reports
  std::string config_file;
  std::vector<std::string> overrides;           // "key.path=value" in application order
  std::map<std::string, std::string> provenance;  // key path -> "file" | "override"

  bool synthetic() const { return regime != "lm"; }
  // The resolved configuration tree (schema_version, name, regime, model,
  // train, data, eval, lm), i.e. what a config file would contain.
  nlohmann::json config_json() const;
};

// Defaults as a config tree: the full-scale architecture and optimizer values.
nlohmann::json default_config_json();

// defaults <- file <- overrides. An empty (or whitespace-only) file means
// defaults. Unknown keys, type mismatches and malformed JSON raise Config
// errors naming the key path or line/column; schema versions other than the
// supported one are rejected.
ExperimentManifest resolve_config(const std::optional<std::filesystem::path>& file,
                                  const std::vector<std::string>& overrides = {});
ExperimentManifest resolve_config_text(const std::string& text, const std::vector<std::string>& overrides = {},
                                       const std::string& origin = "<config>");

nlohmann::json to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const nlohmann::json& j);
ExperimentManifest load_manifest(const std::filesystem::path& path);

struct RunObserver {
  std::function<void(const StepInfo&)> on_step;
  std::function<void(const std::string&)> log;
  // Replaces the HTTP client for lm experiments (one per endpoint).
  std::function<CompleteFn(const EndpointConfig&)> make_client;
};

// Experiment directory:
//   manifest.json            resolved manifest
//   metrics.csv              per-step metrics, all seeds
//   checkpoints/seed_<s>/    latest.{json,bin}, final.{json,bin}
//   runs/seed_<s>.json       RunRecord
//   reports/eval_report.json deterministic summary (no timestamps)
//   transcripts/<model>.jsonl lm transcripts
//   FAILED                   present (with the error text) when a run aborts
// Returns the eval report. Errors propagate after FAILED is written.
nlohmann::json run_experiment(const ExperimentManifest& manifest, const std::filesystem::path& dir,
                              const RunObserver& observer = {});

// Synthetic-regime evaluation report for a completed set of runs.
nlohmann::json synthetic_report(const ExperimentManifest& manifest, const std::vector<RunRecord>& runs);

// Evaluation of one trained model on fresh episodes of the three probes.
nlohmann::json evaluate_checkpoint(const ModelParams& params, TrainRegime regime, std::uint64_t seed,
                                   std::size_t episodes, const VocabConfig& vocab = {});

// Rule and exemplar oracles on `n` random partial-exposure and control
// episodes, classified like model predictions.
struct OracleReport {
  OutcomeHistogram rule_partial, rule_control;
  OutcomeHistogram exemplar_partial, exemplar_control;
  std::size_t rule_no_unique_partial = 0;
  std::size_t rule_no_unique_control = 0;
};
OracleReport run_oracles(std::size_t n, std::uint64_t seed, const VocabConfig& vocab = {},
                         double similarity_scale = kDefaultSimilarityScale);
nlohmann::json to_json(const OracleReport& r);

// Dataset generation for `gen`: `count` episodes of `regime`. In-weights
// regimes draw their fixed spec from the seed.
std::vector<SequenceExample> generate_dataset(Regime regime, std::size_t count, std::uint64_t seed,
                                              const VocabConfig& vocab = {});

// Bar-chart rows (series, category, frequency, halfwidth) from an eval report.
std::string report_csv(const nlohmann::json& report);

// Looks up a dotted path such as "summary.rule_consistent.mean".
std::optional<double> report_value(const nlohmann::json& report, const std::string& path);

// `path>=value` or `path<=value`; returns (ok, description).
std::pair<bool, std::string> check_requirement(const nlohmann::json& report, const std::string& requirement);

}  // namespace rulex
