#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rulex {

using Rng = std::mt19937_64;

// Stateless 64-bit mixer; used to derive independent per-episode seeds from
// (base seed, stream tag, index) so episodes can be generated in any order.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

struct VocabConfig {
  std::size_t num_slots = 2;
  std::size_t feature_len = 32;
  std::size_t num_classes = 10;
  std::size_t bank_size = 100;
  double covariance_scale = 0.1;
  bool operator==(const VocabConfig&) const = default;
};

// Per-slot class centroids and a finite bank of noisy draws around each.
class StimulusVocab {
 public:
  static StimulusVocab build(std::uint64_t seed, const VocabConfig& config = {});

  const VocabConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t stimulus_dim() const noexcept { return config_.num_slots * config_.feature_len; }

  std::span<const float> centroid(std::size_t slot, std::size_t cls) const;
  std::span<const float> bank_entry(std::size_t slot, std::size_t cls, std::size_t index) const;

 private:
  std::size_t class_offset(std::size_t slot, std::size_t cls) const;

  VocabConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<float> centroids_;  // [slot][class][feature]
  std::vector<float> banks_;      // [slot][class][entry][feature]
};

struct StimulusClass {
  std::size_t slot1 = 0;
  std::size_t slot2 = 0;
  auto operator<=>(const StimulusClass&) const = default;
  std::size_t combined(std::size_t num_classes) const { return slot1 * num_classes + slot2; }
  std::size_t slot(std::size_t i) const { return i == 0 ? slot1 : slot2; }
};

std::string to_string(const StimulusClass& cls);

enum class Regime { FewShot, PartialExposure, Control, InWeights, InWeightsEval, RulePretrain };

std::string to_string(Regime regime);
Regime regime_from_string(const std::string& name);

struct ClassCount {
  StimulusClass cls;
  std::size_t label = 0;
  std::size_t count = 0;
};

// Class/label assignment for one partial-exposure (or control) episode.
// A,B are slot-1 values and X,W slot-2 values; the extra class carries the
// third label so that chance responding is distinguishable from a tie.
struct PartialExposureSpec {
  std::size_t a = 0, b = 1, x = 0, w = 1;
  StimulusClass extra{2, 2};
  std::size_t label_a = 0, label_b = 1, label_extra = 2;
  bool control = false;

  StimulusClass ax() const { return {a, x}; }
  StimulusClass aw() const { return {a, w}; }
  StimulusClass bw() const { return {b, w}; }
  StimulusClass bx() const { return {b, x}; }
  StimulusClass query() const { return bx(); }

  // {AX:2, AW:2, BW:4, extra:4}, or {AX:4, BW:4, extra:4} for control.
  std::vector<ClassCount> composition() const;
  // Distinct exposed (class, label) pairs.
  std::vector<ClassCount> exposure() const;

  // Throws Contract on A==B, X==W, repeated labels or an extra class that
  // collides with the partial-exposure values.
  void validate(std::size_t num_classes, std::size_t num_labels = 3) const;

  static PartialExposureSpec random(Rng& rng, std::size_t num_classes, bool control = false);

  bool operator==(const PartialExposureSpec&) const = default;
};

struct ContextItem {
  StimulusClass cls;
  std::vector<float> stimulus;
  std::size_t label = 0;
};

struct SequenceExample {
  Regime regime = Regime::FewShot;
  std::vector<ContextItem> context;
  StimulusClass query_class;
  std::vector<float> query;
  std::size_t target = 0;
  std::optional<PartialExposureSpec> spec;
};

inline constexpr std::size_t kContextPairs = 12;
inline constexpr std::size_t kFewShotWays = 3;
inline constexpr std::size_t kFewShotShots = 4;

std::vector<float> sample_stimulus(const StimulusVocab& vocab, const StimulusClass& cls, Rng& rng);

SequenceExample build_fewshot_sequence(const StimulusVocab& vocab, Rng& rng);
SequenceExample build_partial_exposure_sequence(const StimulusVocab& vocab, const PartialExposureSpec& spec, Rng& rng);
SequenceExample build_control_sequence(const StimulusVocab& vocab, Rng& rng);
SequenceExample build_control_sequence(const StimulusVocab& vocab, const PartialExposureSpec& spec, Rng& rng);
SequenceExample build_rule_pretraining_sequence(const StimulusVocab& vocab, Rng& rng);

// In-weights data: every example uses one fixed spec. Training queries are
// drawn from the exposure multiset with their fixed labels; the 12 context
// pairs are independent draws from the same multiset and carry no
// information about the query. Evaluation examples query the held-out BX.
class InWeightsDataset {
 public:
  InWeightsDataset(const StimulusVocab& vocab, PartialExposureSpec spec, std::uint64_t seed);

  const PartialExposureSpec& spec() const noexcept { return spec_; }
  SequenceExample train_example(std::uint64_t index) const;
  SequenceExample eval_example(std::uint64_t index) const;
  // Sequential access for consumers that want a stream.
  SequenceExample next();

 private:
  SequenceExample make(Rng& rng, const StimulusClass* forced_query) const;

  const StimulusVocab* vocab_;
  PartialExposureSpec spec_;
  std::uint64_t seed_;
  std::uint64_t cursor_ = 0;
};

InWeightsDataset build_inweights_dataset(const StimulusVocab& vocab, const PartialExposureSpec& spec, Rng& rng);

// Deterministic episode generator: (vocab, seed, regime, index) -> example.
// For InWeights/InWeightsEval the fixed spec must be supplied.
SequenceExample generate_episode(const StimulusVocab& vocab, Regime regime, std::uint64_t seed, std::uint64_t index,
                                 const std::optional<PartialExposureSpec>& fixed_spec = std::nullopt);

// Every structural invariant of the example's regime; returns the list of
// violations (empty when the example is well formed).
std::vector<std::string> check_sequence_invariants(const SequenceExample& ex, const VocabConfig& vocab = {});

}  // namespace rulex
