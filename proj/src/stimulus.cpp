#include "rulex/stimulus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

#include "rulex/error.hpp"

namespace rulex {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::array<std::size_t, 3> random_label_bijection(Rng& rng) {
  std::array<std::size_t, 3> labels{0, 1, 2};
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

// Distinct values in [0, n), excluding `avoid`.
std::vector<std::size_t> draw_distinct(Rng& rng, std::size_t n, std::size_t k, const std::vector<std::size_t>& avoid) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i)
    if (std::find(avoid.begin(), avoid.end(), i) == avoid.end()) pool.push_back(i);
  require(pool.size() >= k, ErrorKind::Contract, "not enough classes to draw " + std::to_string(k) + " distinct values");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

std::vector<ContextItem> fill_context(const StimulusVocab& vocab, const std::vector<ClassCount>& composition, Rng& rng) {
  std::vector<ContextItem> items;
  for (const auto& cc : composition)
    for (std::size_t i = 0; i < cc.count; ++i) items.push_back({cc.cls, {}, cc.label});
  std::shuffle(items.begin(), items.end(), rng);
  for (auto& item : items) item.stimulus = sample_stimulus(vocab, item.cls, rng);
  return items;
}

void check_vocab_config(const VocabConfig& c) {
  require(c.num_slots >= 1 && c.feature_len >= 1 && c.num_classes >= 1 && c.bank_size >= 1, ErrorKind::Contract,
          "vocab extents must be positive");
  require(c.covariance_scale >= 0.0, ErrorKind::Contract, "covariance scale must be non-negative");
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index);
}

StimulusVocab StimulusVocab::build(std::uint64_t seed, const VocabConfig& config) {
  check_vocab_config(config);
  StimulusVocab v;
  v.config_ = config;
  v.seed_ = seed;
  const auto S = config.num_slots, C = config.num_classes, F = config.feature_len, N = config.bank_size;
  v.centroids_.resize(S * C * F);
  v.banks_.resize(S * C * N * F);

  Rng rng(mix_seed(seed, 0x766f636162ull, 0));
  std::normal_distribution<double> unit(0.0, 1.0);
  for (auto& c : v.centroids_) c = static_cast<float>(unit(rng));
  const double sd = std::sqrt(config.covariance_scale);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t c = 0; c < C; ++c) {
      const float* mu = v.centroids_.data() + (s * C + c) * F;
      float* bank = v.banks_.data() + (s * C + c) * N * F;
      for (std::size_t e = 0; e < N; ++e)
        for (std::size_t f = 0; f < F; ++f) bank[e * F + f] = static_cast<float>(mu[f] + sd * unit(rng));
    }
  return v;
}

std::size_t StimulusVocab::class_offset(std::size_t slot, std::size_t cls) const {
  require(slot < config_.num_slots, ErrorKind::Index, "slot " + std::to_string(slot) + " out of range");
  require(cls < config_.num_classes, ErrorKind::Index, "class id " + std::to_string(cls) + " out of range");
  return slot * config_.num_classes + cls;
}

std::span<const float> StimulusVocab::centroid(std::size_t slot, std::size_t cls) const {
  return {centroids_.data() + class_offset(slot, cls) * config_.feature_len, config_.feature_len};
}

std::span<const float> StimulusVocab::bank_entry(std::size_t slot, std::size_t cls, std::size_t index) const {
  require(index < config_.bank_size, ErrorKind::Index, "bank index " + std::to_string(index) + " out of range");
  const auto base = (class_offset(slot, cls) * config_.bank_size + index) * config_.feature_len;
  return {banks_.data() + base, config_.feature_len};
}

std::string to_string(const StimulusClass& cls) {
  return std::to_string(cls.slot1) + ":" + std::to_string(cls.slot2);
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::FewShot: return "fewshot";
    case Regime::PartialExposure: return "partial";
    case Regime::Control: return "control";
    case Regime::InWeights: return "inweights";
    case Regime::InWeightsEval: return "inweights_eval";
    case Regime::RulePretrain: return "rulepretrain";
  }
  return "unknown";
}

Regime regime_from_string(const std::string& name) {
  for (auto r : {Regime::FewShot, Regime::PartialExposure, Regime::Control, Regime::InWeights, Regime::InWeightsEval,
                 Regime::RulePretrain})
    if (to_string(r) == name) return r;
  fail(ErrorKind::Config, "unknown regime '" + name + "'");
}

std::vector<ClassCount> PartialExposureSpec::composition() const {
  if (control) return {{ax(), label_a, 4}, {bw(), label_b, 4}, {extra, label_extra, 4}};
  return {{ax(), label_a, 2}, {aw(), label_a, 2}, {bw(), label_b, 4}, {extra, label_extra, 4}};
}

std::vector<ClassCount> PartialExposureSpec::exposure() const {
  auto comp = composition();
  for (auto& c : comp) c.count = 1;
  return comp;
}

void PartialExposureSpec::validate(std::size_t num_classes, std::size_t num_labels) const {
  auto bad = [](const std::string& m) { fail(ErrorKind::Contract, "invalid partial-exposure spec: " + m); };
  for (auto id : {a, b, x, w, extra.slot1, extra.slot2})
    if (id >= num_classes) bad("class id " + std::to_string(id) + " out of range");
  if (a == b) bad("A and B must differ");
  if (x == w) bad("X and W must differ");
  if (extra.slot1 == a || extra.slot1 == b || extra.slot2 == x || extra.slot2 == w)
    bad("extra class must not share a feature value with A/B/X/W");
  for (auto l : {label_a, label_b, label_extra})
    if (l >= num_labels) bad("label " + std::to_string(l) + " out of range");
  if (label_a == label_b || label_a == label_extra || label_b == label_extra) bad("labels must be pairwise distinct");
}

PartialExposureSpec PartialExposureSpec::random(Rng& rng, std::size_t num_classes, bool control) {
  require(num_classes >= 3, ErrorKind::Contract, "partial exposure needs at least 3 classes per slot");
  PartialExposureSpec s;
  const auto s1 = draw_distinct(rng, num_classes, 3, {});
  const auto s2 = draw_distinct(rng, num_classes, 3, {});
  s.a = s1[0];
  s.b = s1[1];
  s.extra.slot1 = s1[2];
  s.x = s2[0];
  s.w = s2[1];
  s.extra.slot2 = s2[2];
  const auto labels = random_label_bijection(rng);
  s.label_a = labels[0];
  s.label_b = labels[1];
  s.label_extra = labels[2];
  s.control = control;
  return s;
}

std::vector<float> sample_stimulus(const StimulusVocab& vocab, const StimulusClass& cls, Rng& rng) {
  const auto& c = vocab.config();
  require(c.num_slots == 2, ErrorKind::Contract, "stimulus classes address exactly two feature slots");
  std::vector<float> out;
  out.reserve(vocab.stimulus_dim());
  for (std::size_t s = 0; s < 2; ++s) {
    const auto entry = vocab.bank_entry(s, cls.slot(s), uniform_index(rng, c.bank_size));
    out.insert(out.end(), entry.begin(), entry.end());
  }
  return out;
}

SequenceExample build_fewshot_sequence(const StimulusVocab& vocab, Rng& rng) {
  const auto n = vocab.config().num_classes;
  const auto ids = draw_distinct(rng, n * n, kFewShotWays, {});
  const auto labels = random_label_bijection(rng);
  std::vector<ClassCount> comp;
  for (std::size_t i = 0; i < kFewShotWays; ++i) comp.push_back({{ids[i] / n, ids[i] % n}, labels[i], kFewShotShots});

  SequenceExample ex;
  ex.regime = Regime::FewShot;
  ex.context = fill_context(vocab, comp, rng);
  const auto& q = comp[uniform_index(rng, kFewShotWays)];
  ex.query_class = q.cls;
  ex.query = sample_stimulus(vocab, q.cls, rng);
  ex.target = q.label;
  return ex;
}

SequenceExample build_partial_exposure_sequence(const StimulusVocab& vocab, const PartialExposureSpec& spec, Rng& rng) {
  spec.validate(vocab.config().num_classes);
  SequenceExample ex;
  ex.regime = spec.control ? Regime::Control : Regime::PartialExposure;
  ex.context = fill_context(vocab, spec.composition(), rng);
  ex.query_class = spec.query();
  ex.query = sample_stimulus(vocab, ex.query_class, rng);
  ex.target = spec.label_b;
  ex.spec = spec;
  return ex;
}

SequenceExample build_control_sequence(const StimulusVocab& vocab, const PartialExposureSpec& spec, Rng& rng) {
  auto s = spec;
  s.control = true;
  return build_partial_exposure_sequence(vocab, s, rng);
}

SequenceExample build_control_sequence(const StimulusVocab& vocab, Rng& rng) {
  const auto spec = PartialExposureSpec::random(rng, vocab.config().num_classes, true);
  return build_partial_exposure_sequence(vocab, spec, rng);
}

SequenceExample build_rule_pretraining_sequence(const StimulusVocab& vocab, Rng& rng) {
  const auto spec = PartialExposureSpec::random(rng, vocab.config().num_classes, false);
  auto ex = build_partial_exposure_sequence(vocab, spec, rng);
  ex.regime = Regime::RulePretrain;
  return ex;
}

InWeightsDataset::InWeightsDataset(const StimulusVocab& vocab, PartialExposureSpec spec, std::uint64_t seed)
    : vocab_(&vocab), spec_(spec), seed_(seed) {
  require(!spec_.control, ErrorKind::Contract, "in-weights data needs a partial-exposure (non-control) spec");
  spec_.validate(vocab.config().num_classes);
}

SequenceExample InWeightsDataset::make(Rng& rng, const StimulusClass* forced_query) const {
  const auto comp = spec_.composition();
  std::vector<double> weights;
  for (const auto& c : comp) weights.push_back(static_cast<double>(c.count));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

  SequenceExample ex;
  ex.regime = forced_query ? Regime::InWeightsEval : Regime::InWeights;
  ex.spec = spec_;
  for (std::size_t i = 0; i < kContextPairs; ++i) {
    const auto& c = comp[pick(rng)];
    ex.context.push_back({c.cls, sample_stimulus(*vocab_, c.cls, rng), c.label});
  }
  if (forced_query) {
    ex.query_class = *forced_query;
    ex.target = spec_.label_b;
  } else {
    const auto& c = comp[pick(rng)];
    ex.query_class = c.cls;
    ex.target = c.label;
  }
  ex.query = sample_stimulus(*vocab_, ex.query_class, rng);
  return ex;
}

SequenceExample InWeightsDataset::train_example(std::uint64_t index) const {
  Rng rng(mix_seed(seed_, 0x747261696eull, index));
  return make(rng, nullptr);
}

SequenceExample InWeightsDataset::eval_example(std::uint64_t index) const {
  Rng rng(mix_seed(seed_, 0x6576616cull, index));
  const auto q = spec_.query();
  return make(rng, &q);
}

SequenceExample InWeightsDataset::next() { return train_example(cursor_++); }

InWeightsDataset build_inweights_dataset(const StimulusVocab& vocab, const PartialExposureSpec& spec, Rng& rng) {
  return InWeightsDataset(vocab, spec, rng());
}

SequenceExample generate_episode(const StimulusVocab& vocab, Regime regime, std::uint64_t seed, std::uint64_t index,
                                 const std::optional<PartialExposureSpec>& fixed_spec) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(regime) + 1, index));
  switch (regime) {
    case Regime::FewShot: return build_fewshot_sequence(vocab, rng);
    case Regime::PartialExposure:
      if (fixed_spec) return build_partial_exposure_sequence(vocab, *fixed_spec, rng);
      return build_partial_exposure_sequence(vocab, PartialExposureSpec::random(rng, vocab.config().num_classes), rng);
    case Regime::Control:
      if (fixed_spec) return build_control_sequence(vocab, *fixed_spec, rng);
      return build_control_sequence(vocab, rng);
    case Regime::RulePretrain: return build_rule_pretraining_sequence(vocab, rng);
    case Regime::InWeights:
    case Regime::InWeightsEval: {
      require(fixed_spec.has_value(), ErrorKind::Contract, "in-weights episodes need the fixed training spec");
      InWeightsDataset ds(vocab, *fixed_spec, seed);
      return regime == Regime::InWeights ? ds.train_example(index) : ds.eval_example(index);
    }
  }
  fail(ErrorKind::Contract, "unhandled regime");
}

std::vector<std::string> check_sequence_invariants(const SequenceExample& ex, const VocabConfig& vc) {
  std::vector<std::string> errs;
  auto err = [&](const std::string& m) { errs.push_back(to_string(ex.regime) + ": " + m); };
  const auto dim = vc.num_slots * vc.feature_len;

  if (ex.context.size() != kContextPairs) err("context has " + std::to_string(ex.context.size()) + " pairs");
  if (ex.query.size() != dim) err("query length " + std::to_string(ex.query.size()));
  for (const auto& item : ex.context) {
    if (item.stimulus.size() != dim) err("context stimulus length " + std::to_string(item.stimulus.size()));
    if (item.cls.slot1 >= vc.num_classes || item.cls.slot2 >= vc.num_classes) err("class id out of range");
    if (item.label >= 3) err("label out of range");
  }
  if (!errs.empty()) return errs;

  std::map<StimulusClass, std::size_t> counts;
  std::map<StimulusClass, std::size_t> label_of;
  std::array<std::size_t, 3> label_freq{};
  for (const auto& item : ex.context) {
    ++counts[item.cls];
    ++label_freq[item.label];
    auto [it, inserted] = label_of.emplace(item.cls, item.label);
    if (!inserted && it->second != item.label) err("class " + to_string(item.cls) + " carries two labels");
  }

  if (ex.regime == Regime::FewShot) {
    if (counts.size() != kFewShotWays) err("expected 3 distinct classes, got " + std::to_string(counts.size()));
    for (const auto& [cls, n] : counts)
      if (n != kFewShotShots) err("class " + to_string(cls) + " appears " + std::to_string(n) + " times");
    std::vector<std::size_t> labels;
    for (const auto& [cls, l] : label_of) labels.push_back(l);
    std::sort(labels.begin(), labels.end());
    if (labels != std::vector<std::size_t>{0, 1, 2}) err("labels are not a bijection onto {0,1,2}");
    auto it = label_of.find(ex.query_class);
    if (it == label_of.end()) err("query class absent from context");
    else if (it->second != ex.target) err("target does not match the query class label");
    return errs;
  }

  if (!ex.spec) {
    err("missing episode spec");
    return errs;
  }
  const auto& spec = *ex.spec;
  try {
    spec.validate(vc.num_classes);
  } catch (const Error& e) {
    err(e.what());
    return errs;
  }
  if (counts.count(spec.bx())) err("held-out BX appears in context");

  if (ex.regime == Regime::InWeights || ex.regime == Regime::InWeightsEval) {
    std::map<StimulusClass, std::size_t> fixed;
    for (const auto& c : spec.exposure()) fixed[c.cls] = c.label;
    for (const auto& [cls, l] : label_of) {
      auto it = fixed.find(cls);
      if (it == fixed.end()) err("context class " + to_string(cls) + " is not exposed");
      else if (it->second != l) err("context class " + to_string(cls) + " has a non-fixed label");
    }
    if (ex.regime == Regime::InWeightsEval) {
      if (ex.query_class != spec.bx()) err("evaluation query must be BX");
      if (ex.target != spec.label_b) err("evaluation target must be L_B");
    } else {
      auto it = fixed.find(ex.query_class);
      if (it == fixed.end()) err("training query class is not exposed");
      else if (it->second != ex.target) err("training target does not match the fixed label");
    }
    return errs;
  }

  // Partial exposure, control, rule pretraining.
  for (const auto& cc : spec.composition()) {
    const auto n = counts.count(cc.cls) ? counts.at(cc.cls) : 0;
    if (n != cc.count)
      err("class " + to_string(cc.cls) + " appears " + std::to_string(n) + " times, expected " + std::to_string(cc.count));
    if (label_of.count(cc.cls) && label_of.at(cc.cls) != cc.label) err("class " + to_string(cc.cls) + " mislabeled");
  }
  if (counts.size() != spec.composition().size()) err("context contains classes outside the composition");
  if (spec.control && counts.count(spec.aw())) err("control context must omit AW");
  if (!spec.control && counts.count(spec.bw()) && counts.count(spec.ax()) && counts.at(spec.bw()) != 2 * counts.at(spec.ax()))
    err("BW must appear twice as often as AX");
  if (label_freq[0] != 4 || label_freq[1] != 4 || label_freq[2] != 4) err("context labels are not balanced 4/4/4");
  if (ex.query_class != spec.bx()) err("query class must be BX");
  if (ex.target != spec.label_b) err("target must be L_B");
  if (ex.regime == Regime::RulePretrain) {
    for (const auto& item : ex.context)
      if (item.cls == spec.bw() && item.label != ex.target) err("target differs from the BW context label");
  }
  return errs;
}

}  // namespace rulex
