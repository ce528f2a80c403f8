#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "rulex/error.hpp"
#include "rulex/model.hpp"
#include "rulex/stimulus.hpp"

using namespace rulex;

namespace {
double sq_dist(std::span<const float> a, std::span<const float> b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
  return d;
}

std::map<StimulusClass, std::size_t> class_counts(const SequenceExample& ex) {
  std::map<StimulusClass, std::size_t> m;
  for (const auto& it : ex.context) ++m[it.cls];
  return m;
}

// 3-sigma band for a binomial count.
void check_uniform_targets(const std::vector<std::size_t>& counts, std::size_t n) {
  const double p = 1.0 / 3.0, sd = std::sqrt(n * p * (1 - p));
  for (auto c : counts) CHECK(std::abs(double(c) - n * p) < 3 * sd);
}
}  // namespace

TEST_CASE("vocab is seeded and well formed") {
  auto a = StimulusVocab::build(1), b = StimulusVocab::build(1), c = StimulusVocab::build(2);
  CHECK(a.stimulus_dim() == 64);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t k = 0; k < 10; ++k) {
      auto x = a.centroid(s, k), y = b.centroid(s, k);
      CHECK(std::equal(x.begin(), x.end(), y.begin()));
      auto e = a.bank_entry(s, k, 99), f = b.bank_entry(s, k, 99);
      CHECK(std::equal(e.begin(), e.end(), f.begin()));
    }
  auto x = a.centroid(0, 0), z = c.centroid(0, 0);
  CHECK_FALSE(std::equal(x.begin(), x.end(), z.begin()));
  CHECK_THROWS_AS(a.centroid(2, 0), Error);
  CHECK_THROWS_AS(a.bank_entry(0, 10, 0), Error);
  CHECK_THROWS_AS(a.bank_entry(0, 0, 100), Error);
}

TEST_CASE("bank deviations have the declared variance") {
  // With 100 entries a per-dimension sample variance has a relative standard
  // deviation of sqrt(2/99) ~ 0.14, so the +-30% band holds for ~96% of
  // dimensions; the pooled estimate per class must sit well inside it.
  auto v = StimulusVocab::build(11);
  std::size_t within = 0, total = 0;
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t k = 0; k < 10; ++k) {
      auto c = v.centroid(s, k);
      double pooled = 0;
      for (std::size_t dim = 0; dim < 32; ++dim) {
        double sum = 0, sum2 = 0;
        for (std::size_t e = 0; e < 100; ++e) {
          const double d = v.bank_entry(s, k, e)[dim] - c[dim];
          sum += d;
          sum2 += d * d;
        }
        const double var = sum2 / 100.0;
        pooled += var / 32.0;
        within += std::abs(var - 0.1) <= 0.03;
        ++total;
      }
      CHECK(std::abs(pooled - 0.1) < 0.015);
    }
  CHECK(double(within) / total > 0.9);
}

TEST_CASE("centroids are distinct") {
  auto v = StimulusVocab::build(4);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = i + 1; j < 10; ++j) CHECK(sq_dist(v.centroid(s, i), v.centroid(s, j)) > 0.0);
}

TEST_CASE("samples come from the requested banks and are separable") {
  auto v = StimulusVocab::build(5);
  Rng rng(5);
  std::size_t correct = 0, total = 0;
  for (int rep = 0; rep < 500; ++rep) {
    StimulusClass cls{rng() % 10, rng() % 10};
    auto s = sample_stimulus(v, cls, rng);
    REQUIRE(s.size() == 64);
    for (std::size_t slot = 0; slot < 2; ++slot) {
      std::span<const float> half(s.data() + 32 * slot, 32);
      bool in_bank = false;
      for (std::size_t e = 0; e < 100 && !in_bank; ++e) {
        auto b = v.bank_entry(slot, cls.slot(slot), e);
        in_bank = std::equal(b.begin(), b.end(), half.begin());
      }
      CHECK(in_bank);
      std::size_t nearest = 0;
      double best = 1e300;
      for (std::size_t k = 0; k < 10; ++k) {
        const double d = sq_dist(half, v.centroid(slot, k));
        if (d < best) best = d, nearest = k;
      }
      correct += nearest == cls.slot(slot);
      ++total;
    }
  }
  CHECK(double(correct) / total > 0.99);
}

TEST_CASE("few-shot sequences") {
  auto v = StimulusVocab::build(6);
  std::vector<std::size_t> targets(3, 0);
  const std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    auto ex = generate_episode(v, Regime::FewShot, 6, i);
    auto counts = class_counts(ex);
    REQUIRE(counts.size() == 3);
    for (const auto& [_, c] : counts) CHECK(c == 4);
    CHECK(counts.count(ex.query_class) == 1);
    std::set<std::size_t> labels;
    for (const auto& it : ex.context) {
      labels.insert(it.label);
      if (it.cls == ex.query_class) CHECK(it.label == ex.target);
    }
    CHECK(labels.size() == 3);
    ++targets.at(ex.target);
  }
  check_uniform_targets(targets, n);
}

TEST_CASE("partial exposure sequences") {
  auto v = StimulusVocab::build(7);
  Rng rng(7);
  for (int rep = 0; rep < 200; ++rep) {
    auto spec = PartialExposureSpec::random(rng, 10);
    auto ex = build_partial_exposure_sequence(v, spec, rng);
    auto counts = class_counts(ex);
    CHECK(counts.count(spec.bx()) == 0);
    CHECK(counts[spec.bw()] == 2 * counts[spec.ax()]);
    CHECK(counts[spec.ax()] == 2);
    CHECK(counts[spec.aw()] == 2);
    std::map<std::size_t, std::size_t> labels;
    for (const auto& it : ex.context) ++labels[it.label];
    CHECK(labels[spec.label_a] == 4);
    CHECK(labels[spec.label_b] == 4);
    CHECK(labels[spec.label_extra] == 4);
    CHECK(ex.query_class == spec.bx());
    CHECK(ex.target == spec.label_b);
    CHECK(check_sequence_invariants(ex).empty());
  }
}

TEST_CASE("spec validation") {
  PartialExposureSpec s;
  CHECK_NOTHROW(s.validate(10));
  auto bad = s;
  bad.b = bad.a;
  CHECK_THROWS_AS(bad.validate(10), Error);
  bad = s;
  bad.label_b = bad.label_a;
  CHECK_THROWS_AS(bad.validate(10), Error);
  bad = s;
  bad.extra = {s.a, 5};
  CHECK_THROWS_AS(bad.validate(10), Error);
}

TEST_CASE("control sequences") {
  auto v = StimulusVocab::build(8);
  for (std::uint64_t i = 0; i < 300; ++i) {
    auto ex = generate_episode(v, Regime::Control, 8, i);
    REQUIRE(ex.spec.has_value());
    const auto& spec = *ex.spec;
    auto counts = class_counts(ex);
    CHECK(counts.size() == 3);
    CHECK(counts[spec.ax()] == 4);
    CHECK(counts[spec.bw()] == 4);
    CHECK(counts.count(spec.aw()) == 0);
    CHECK(counts.count(spec.bx()) == 0);
    CHECK(ex.query_class == spec.bx());
    // The query shares exactly one slot with each of AX and BW.
    CHECK(((ex.query_class.slot1 == spec.a) + (ex.query_class.slot2 == spec.x)) == 1);
    CHECK(((ex.query_class.slot1 == spec.b) + (ex.query_class.slot2 == spec.w)) == 1);
    CHECK(check_sequence_invariants(ex).empty());
  }
}

TEST_CASE("in-weights dataset") {
  auto v = StimulusVocab::build(9);
  Rng rng(9);
  auto spec = PartialExposureSpec::random(rng, 10);
  InWeightsDataset ds(v, spec, 9);
  std::map<StimulusClass, std::size_t> label_of;
  std::map<StimulusClass, std::size_t> query_counts;
  for (std::uint64_t i = 0; i < 4000; ++i) {
    auto ex = ds.train_example(i);
    CHECK(ex.query_class != spec.bx());
    ++query_counts[ex.query_class];
    auto [it, fresh] = label_of.emplace(ex.query_class, ex.target);
    CHECK(it->second == ex.target);
    for (const auto& c : ex.context) {
      CHECK(c.cls != spec.bx());
      auto [ci, cfresh] = label_of.emplace(c.cls, c.label);
      CHECK(ci->second == c.label);
    }
  }
  // BW is drawn at double weight.
  CHECK(double(query_counts[spec.bw()]) / query_counts[spec.ax()] == doctest::Approx(2.0).epsilon(0.15));
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto ex = ds.eval_example(i);
    CHECK(ex.query_class == spec.bx());
    for (const auto& c : ex.context) CHECK(c.cls != spec.bx());
  }
  CHECK(ds.train_example(17).query == InWeightsDataset(v, spec, 9).train_example(17).query);
}

TEST_CASE("rule pretraining sequences") {
  auto v = StimulusVocab::build(10);
  std::vector<std::size_t> targets(3, 0);
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> specs;
  const std::size_t n = 6000;
  for (std::uint64_t i = 0; i < n; ++i) {
    auto ex = generate_episode(v, Regime::RulePretrain, 10, i);
    REQUIRE(ex.spec);
    for (const auto& c : ex.context)
      if (c.cls == ex.spec->bw()) CHECK(c.label == ex.target);
    ++targets.at(ex.target);
    specs.insert({ex.spec->a, ex.spec->b, ex.spec->x, ex.spec->w});
  }
  check_uniform_targets(targets, n);
  CHECK(specs.size() > 1000);  // fresh assignments per sequence
}

TEST_CASE("episodes are a pure function of (seed, regime, index)") {
  auto v = StimulusVocab::build(12);
  for (auto r : {Regime::FewShot, Regime::PartialExposure, Regime::Control, Regime::RulePretrain}) {
    auto a = generate_episode(v, r, 12, 77), b = generate_episode(v, r, 12, 77), c = generate_episode(v, r, 12, 78);
    CHECK(a.query == b.query);
    CHECK(a.target == b.target);
    CHECK(a.context.size() == b.context.size());
    CHECK(a.query != c.query);
  }
}

TEST_CASE("encoded regimes satisfy the token layout") {
  ModelConfig mc;
  auto v = StimulusVocab::build(13);
  for (auto r : {Regime::FewShot, Regime::PartialExposure, Regime::Control, Regime::RulePretrain}) {
    auto seq = encode_sequence(generate_episode(v, r, 13, 0), mc);
    CHECK(seq.length() == 25);
    for (std::size_t i = 1; i < 25; i += 2) {
      double ones = 0, zeros = 0;
      for (std::size_t k = 0; k < mc.input_dim; ++k) {
        const float x = seq.tokens[i * mc.input_dim + k];
        ones += x == 1.0f;
        zeros += x == 0.0f;
      }
      CHECK(ones == 1);
      CHECK(zeros == mc.input_dim - 1);
    }
  }
}

TEST_CASE("few-shot labels carry no identity") {
  // Relabeling by a permutation gives the same target histogram, i.e. each
  // label plays each role equally often.
  auto v = StimulusVocab::build(14);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> first_label_vs_target;
  for (std::uint64_t i = 0; i < 9000; ++i) {
    auto ex = generate_episode(v, Regime::FewShot, 14, i);
    ++first_label_vs_target[{ex.context.front().label, ex.target}];
  }
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      const double c = first_label_vs_target[{a, b}];
      CHECK(std::abs(c - 1000.0) < 4 * std::sqrt(1000.0));
    }
}
