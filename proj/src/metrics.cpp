#include "rulex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "rulex/error.hpp"

namespace rulex {

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::RuleConsistent: return "rule_consistent";
    case Outcome::ExemplarAlternative: return "exemplar_alternative";
    case Outcome::Other: return "other";
  }
  return "other";
}

void OutcomeHistogram::add(Outcome o, std::size_t count) {
  switch (o) {
    case Outcome::RuleConsistent: rule_consistent += count; break;
    case Outcome::ExemplarAlternative: exemplar_alternative += count; break;
    case Outcome::Other: other += count; break;
  }
}

std::size_t OutcomeHistogram::count(Outcome o) const {
  switch (o) {
    case Outcome::RuleConsistent: return rule_consistent;
    case Outcome::ExemplarAlternative: return exemplar_alternative;
    case Outcome::Other: return other;
  }
  return 0;
}

double OutcomeHistogram::frequency(Outcome o) const {
  require(n() > 0, ErrorKind::Contract, "frequency of an empty histogram");
  return static_cast<double>(count(o)) / static_cast<double>(n());
}

OutcomeHistogram& OutcomeHistogram::operator+=(const OutcomeHistogram& o) {
  rule_consistent += o.rule_consistent;
  exemplar_alternative += o.exemplar_alternative;
  other += o.other;
  return *this;
}

Outcome classify_outcome(const PartialExposureSpec& spec, std::size_t predicted) {
  if (predicted == spec.label_b) return Outcome::RuleConsistent;
  if (predicted == spec.label_a) return Outcome::ExemplarAlternative;
  return Outcome::Other;
}

RulenessScore ruleness(const OutcomeHistogram& partial, const OutcomeHistogram& control) {
  require(partial.n() > 0 && control.n() > 0, ErrorKind::Contract, "ruleness needs non-empty histograms");
  RulenessScore s;
  s.n_partial = partial.n();
  s.n_control = control.n();
  s.p_predictive_partial = partial.frequency(Outcome::RuleConsistent);
  s.p_predictive_control = control.frequency(Outcome::RuleConsistent);
  s.ruleness = s.p_predictive_partial - s.p_predictive_control;
  const double vp = s.p_predictive_partial * (1.0 - s.p_predictive_partial) / static_cast<double>(s.n_partial);
  const double vc = s.p_predictive_control * (1.0 - s.p_predictive_control) / static_cast<double>(s.n_control);
  s.halfwidth_partial = kZ95 * std::sqrt(vp);
  s.halfwidth_control = kZ95 * std::sqrt(vc);
  s.halfwidth = kZ95 * std::sqrt(vp + vc);
  return s;
}

std::vector<double> exemplar_oracle(std::span<const LabeledVector> context, std::span<const float> query, double c,
                                    std::size_t num_labels) {
  require(!context.empty(), ErrorKind::Contract, "exemplar oracle needs a non-empty context");
  std::size_t width = num_labels;
  for (const auto& e : context) width = std::max(width, e.label + 1);

  std::vector<double> log_sim(context.size());
  for (std::size_t i = 0; i < context.size(); ++i) {
    require(context[i].vec.size() == query.size(), ErrorKind::Dimension, "exemplar and query lengths differ");
    double d2 = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) {
      const double diff = static_cast<double>(query[j]) - context[i].vec[j];
      d2 += diff * diff;
    }
    log_sim[i] = -c * std::sqrt(d2);
  }
  const double mx = *std::max_element(log_sim.begin(), log_sim.end());
  std::vector<double> p(width, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < context.size(); ++i) {
    const double s = std::exp(log_sim[i] - mx);
    p[context[i].label] += s;
    z += s;
  }
  for (auto& v : p) v /= z;
  return p;
}

std::vector<LabeledVector> episode_exemplars(const SequenceExample& ex) {
  std::map<StimulusClass, std::pair<LabeledVector, std::size_t>> groups;
  std::vector<StimulusClass> order;
  for (const auto& item : ex.context) {
    auto it = groups.find(item.cls);
    if (it == groups.end()) {
      groups.emplace(item.cls, std::make_pair(LabeledVector{item.stimulus, item.label}, std::size_t{1}));
      order.push_back(item.cls);
    } else {
      auto& [lv, n] = it->second;
      for (std::size_t j = 0; j < lv.vec.size(); ++j) lv.vec[j] += item.stimulus[j];
      ++n;
    }
  }
  std::vector<LabeledVector> out;
  for (const auto& cls : order) {
    auto [lv, n] = groups.at(cls);
    for (auto& v : lv.vec) v /= static_cast<float>(n);
    out.push_back(std::move(lv));
  }
  return out;
}

std::size_t sample_argmax(std::span<const double> probs, Rng& rng) {
  require(!probs.empty(), ErrorKind::Contract, "argmax of an empty vector");
  const double mx = *std::max_element(probs.begin(), probs.end());
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (probs[i] == mx) tied.push_back(i);
  if (tied.size() == 1) return tied.front();
  return tied[std::uniform_int_distribution<std::size_t>(0, tied.size() - 1)(rng)];
}

RuleVerdict rule_oracle(std::span<const ClassCount> exposed, const StimulusClass& query) {
  require(!exposed.empty(), ErrorKind::Contract, "rule oracle needs a non-empty exposure list");
  std::vector<std::size_t> consistent;
  std::vector<std::map<std::size_t, std::size_t>> tables(2);
  for (std::size_t slot = 0; slot < 2; ++slot) {
    bool ok = true;
    for (const auto& e : exposed) {
      auto [it, inserted] = tables[slot].emplace(e.cls.slot(slot), e.label);
      if (!inserted && it->second != e.label) ok = false;
    }
    if (ok) consistent.push_back(slot);
  }
  RuleVerdict v;
  if (consistent.size() != 1) return v;
  const auto slot = consistent.front();
  auto it = tables[slot].find(query.slot(slot));
  if (it == tables[slot].end()) return v;
  v.label = it->second;
  v.slot = slot;
  return v;
}

}  // namespace rulex
