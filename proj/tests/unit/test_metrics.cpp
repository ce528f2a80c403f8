#include <cmath>
#include <numeric>

#include "doctest.h"
#include "rulex/error.hpp"
#include "rulex/experiment.hpp"
#include "rulex/metrics.hpp"
#include "rulex/stimulus.hpp"

using namespace rulex;

namespace {
OutcomeHistogram hist(std::size_t rule, std::size_t ex, std::size_t other) {
  OutcomeHistogram h;
  h.rule_consistent = rule;
  h.exemplar_alternative = ex;
  h.other = other;
  return h;
}
}  // namespace

TEST_CASE("classify_outcome partitions the labels") {
  PartialExposureSpec s;
  s.label_a = 2;
  s.label_b = 0;
  s.label_extra = 1;
  CHECK(classify_outcome(s, 0) == Outcome::RuleConsistent);
  CHECK(classify_outcome(s, 2) == Outcome::ExemplarAlternative);
  CHECK(classify_outcome(s, 1) == Outcome::Other);
  CHECK(classify_outcome(s, 7) == Outcome::Other);
  OutcomeHistogram h;
  for (std::size_t l = 0; l < 5; ++l) h.add(classify_outcome(s, l));
  CHECK(h.n() == 5);
  CHECK(h.rule_consistent == 1);
  CHECK(h.exemplar_alternative == 1);
  CHECK(h.other == 3);
}

TEST_CASE("histogram frequencies") {
  auto h = hist(3, 1, 0);
  CHECK(h.frequency(Outcome::RuleConsistent) == doctest::Approx(0.75));
  CHECK_THROWS_AS(OutcomeHistogram{}.frequency(Outcome::Other), Error);
  h += hist(1, 1, 2);
  CHECK(h == hist(4, 2, 2));
}

TEST_CASE("ruleness") {
  auto r = ruleness(hist(80, 20, 0), hist(50, 50, 0));
  CHECK(r.ruleness == doctest::Approx(0.3));
  CHECK(r.p_predictive_partial == doctest::Approx(0.8));
  CHECK(r.halfwidth == doctest::Approx(1.96 * std::sqrt(0.8 * 0.2 / 100 + 0.25 / 100)));
  CHECK(ruleness(hist(30, 60, 10), hist(30, 60, 10)).ruleness == 0.0);
  auto big = ruleness(hist(5000, 5000, 0), hist(5000, 5000, 0));
  CHECK(std::abs(big.ruleness) + big.halfwidth < 0.02);
  CHECK(ruleness(hist(10, 0, 0), hist(0, 10, 0)).ruleness == 1.0);
  CHECK(ruleness(hist(0, 10, 0), hist(10, 0, 0)).ruleness == -1.0);
  CHECK_THROWS_AS(ruleness(OutcomeHistogram{}, hist(1, 0, 0)), Error);
}

TEST_CASE("exemplar oracle, hand-built equal-distance case") {
  // Slot 1: A=(0,0), B=(1,0); slot 2: X=(0,0), W=(1,0).
  std::vector<LabeledVector> ctx{{{0, 0, 0, 0}, 0}, {{1, 0, 1, 0}, 1}};
  std::vector<float> bx{1, 0, 0, 0};
  auto p = exemplar_oracle(ctx, bx);
  REQUIRE(p.size() == 2);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));
  std::vector<LabeledVector> one{{{3, 1, 4, 1}, 2}};
  auto q = exemplar_oracle(one, bx, 1.0, 3);
  CHECK(q == std::vector<double>{0, 0, 1});
  CHECK_THROWS_AS(exemplar_oracle({}, bx), Error);
}

TEST_CASE("exemplar oracle sums to one and is label-permutation equivariant") {
  Rng rng(3);
  std::normal_distribution<float> n;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<LabeledVector> ctx;
    for (int i = 0; i < 6; ++i) {
      LabeledVector e{std::vector<float>(8), static_cast<std::size_t>(rng() % 3)};
      for (auto& v : e.vec) v = n(rng);
      ctx.push_back(e);
    }
    std::vector<float> query(8);
    for (auto& v : query) v = n(rng);
    auto p = exemplar_oracle(ctx, query, 0.7, 3);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
    const std::size_t perm[3] = {2, 0, 1};
    auto permuted = ctx;
    for (auto& e : permuted) e.label = perm[e.label];
    auto pp = exemplar_oracle(permuted, query, 0.7, 3);
    for (std::size_t l = 0; l < 3; ++l) CHECK(pp[perm[l]] == doctest::Approx(p[l]));
  }
}

TEST_CASE("exemplar oracle on control episodes is balanced over vocab draws") {
  double mass_a = 0, mass_b = 0;
  const int vocabs = 1000;
  for (int s = 0; s < vocabs; ++s) {
    auto v = StimulusVocab::build(1000 + s);
    auto ex = generate_episode(v, Regime::Control, s, 0);
    auto p = exemplar_oracle(episode_exemplars(ex), ex.query, kDefaultSimilarityScale, 3);
    mass_a += p[ex.spec->label_a];
    mass_b += p[ex.spec->label_b];
  }
  CHECK(std::abs(mass_a / vocabs - 0.5) < 0.05);
  CHECK(std::abs(mass_b / vocabs - 0.5) < 0.05);
}

TEST_CASE("exemplar oracle splits partial-exposure mass between the A and B labels") {
  double a = 0, b = 0, extra = 0;
  const int n = 1000;
  for (int s = 0; s < n; ++s) {
    auto v = StimulusVocab::build(5000 + s);
    auto ex = generate_episode(v, Regime::PartialExposure, s, 0);
    auto p = exemplar_oracle(episode_exemplars(ex), ex.query, kDefaultSimilarityScale, 3);
    a += p[ex.spec->label_a];
    b += p[ex.spec->label_b];
    extra += p[ex.spec->label_extra];
  }
  CHECK(std::abs(a / n - 0.5) < 0.06);
  CHECK(std::abs(b / n - 0.5) < 0.06);
  CHECK(extra / n < 0.05);
}

TEST_CASE("episode exemplars deduplicate classes to their means") {
  auto v = StimulusVocab::build(2);
  auto ex = generate_episode(v, Regime::PartialExposure, 2, 0);
  auto es = episode_exemplars(ex);
  CHECK(es.size() == 4);
  std::vector<double> mean(64, 0.0);
  std::size_t count = 0;
  StimulusClass bw = ex.spec->bw();
  for (const auto& c : ex.context)
    if (c.cls == bw) {
      ++count;
      for (std::size_t i = 0; i < 64; ++i) mean[i] += c.stimulus[i];
    }
  bool found = false;
  for (const auto& e : es) {
    if (e.label != ex.spec->label_b) continue;
    found = true;
    for (std::size_t i = 0; i < 64; ++i) CHECK(e.vec[i] == doctest::Approx(mean[i] / count).epsilon(1e-5));
  }
  CHECK(found);
}

TEST_CASE("sample_argmax breaks exact ties with a fair coin") {
  Rng rng(1);
  std::vector<double> p{0.4, 0.4, 0.2}, q{0.1, 0.7, 0.2};
  std::size_t zeros = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto l = sample_argmax(p, rng);
    CHECK(l < 2);
    zeros += l == 0;
    CHECK(sample_argmax(q, rng) == 1);
  }
  CHECK(std::abs(zeros / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("rule oracle") {
  const std::size_t A = 0, B = 1, X = 5, W = 6, LA = 0, LB = 1, L2 = 2;
  std::vector<ClassCount> partial{{{A, X}, LA, 2}, {{A, W}, LA, 2}, {{B, W}, LB, 4}};
  auto v = rule_oracle(partial, {B, X});
  REQUIRE(v.label.has_value());
  CHECK(*v.label == LB);
  CHECK(*v.slot == 0);
  std::vector<ClassCount> control{{{A, X}, LA, 4}, {{B, W}, LB, 4}};
  CHECK(rule_oracle(control, {B, X}).no_unique_rule());
  std::vector<ClassCount> single{{{A, X}, L2, 4}};
  CHECK(rule_oracle(single, {B, X}).no_unique_rule());
  CHECK(rule_oracle(single, {A, X}).no_unique_rule());
}

TEST_CASE("rule oracle always answers L_B on partial-exposure specs") {
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    auto spec = PartialExposureSpec::random(rng, 10);
    auto v = rule_oracle(spec.exposure(), spec.query());
    REQUIRE(v.label.has_value());
    CHECK(classify_outcome(spec, *v.label) == Outcome::RuleConsistent);
    auto c = PartialExposureSpec::random(rng, 10, true);
    CHECK(rule_oracle(c.exposure(), c.query()).no_unique_rule());
  }
}

TEST_CASE("oracle report reproduces the idealized patterns") {
  auto r = run_oracles(4000, 5);
  CHECK(r.rule_partial.frequency(Outcome::RuleConsistent) == 1.0);
  CHECK(r.rule_no_unique_partial == 0);
  CHECK(r.rule_no_unique_control == 4000);
  CHECK(std::abs(r.exemplar_partial.frequency(Outcome::RuleConsistent) - 0.5) < 0.03);
  CHECK(r.exemplar_partial.frequency(Outcome::Other) <= 0.01);
  CHECK(std::abs(r.exemplar_control.frequency(Outcome::RuleConsistent) - 0.5) < 0.03);
}
