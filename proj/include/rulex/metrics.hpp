#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rulex/stimulus.hpp"

namespace rulex {

enum class Outcome { RuleConsistent, ExemplarAlternative, Other };

std::string to_string(Outcome o);

struct OutcomeHistogram {
  std::size_t rule_consistent = 0;
  std::size_t exemplar_alternative = 0;
  std::size_t other = 0;

  std::size_t n() const noexcept { return rule_consistent + exemplar_alternative + other; }
  void add(Outcome o, std::size_t count = 1);
  std::size_t count(Outcome o) const;
  // count / n; contract error when n == 0.
  double frequency(Outcome o) const;
  OutcomeHistogram& operator+=(const OutcomeHistogram& other);
  bool operator==(const OutcomeHistogram&) const = default;
};

// Predicted L_B -> rule consistent, L_A -> exemplar alternative, else other.
Outcome classify_outcome(const PartialExposureSpec& spec, std::size_t predicted);

// Two-sample Wald interval at 95% on the difference of predictive-feature
// (rule-consistent) proportions between a partial-exposure and a control run.
struct RulenessScore {
  double p_predictive_partial = 0.0;
  double p_predictive_control = 0.0;
  double ruleness = 0.0;
  double halfwidth_partial = 0.0;
  double halfwidth_control = 0.0;
  double halfwidth = 0.0;
  std::size_t n_partial = 0;
  std::size_t n_control = 0;
};

inline constexpr double kZ95 = 1.96;

RulenessScore ruleness(const OutcomeHistogram& partial, const OutcomeHistogram& control);

struct LabeledVector {
  std::vector<float> vec;
  std::size_t label = 0;
};

inline constexpr double kDefaultSimilarityScale = 1.0;

// Exponential-kernel exemplar model over Euclidean distance:
// p(label) is proportional to the sum of exp(-c * ||query - e||) over the
// exemplars e carrying that label. The result has max(num_labels, largest
// label + 1) entries.
std::vector<double> exemplar_oracle(std::span<const LabeledVector> context, std::span<const float> query,
                                    double c = kDefaultSimilarityScale, std::size_t num_labels = 0);

// One exemplar per distinct stimulus class in the context: the mean of that
// class's context samples. Repetitions of a combination add no extra weight.
std::vector<LabeledVector> episode_exemplars(const SequenceExample& ex);

// Argmax; exact ties are broken by a fair coin (uniform among tied labels).
std::size_t sample_argmax(std::span<const double> probs, Rng& rng);

struct RuleVerdict {
  std::optional<std::size_t> label;  // empty means no unique rule
  std::optional<std::size_t> slot;   // the single consistent feature slot
  bool no_unique_rule() const noexcept { return !label.has_value(); }
};

// Finds the feature slots whose value alone determines the label over every
// exposed class. With exactly one such slot (and the query's value seen in
// it) the rule is applied to the query; otherwise there is no unique rule.
RuleVerdict rule_oracle(std::span<const ClassCount> exposed, const StimulusClass& query);

}  // namespace rulex
