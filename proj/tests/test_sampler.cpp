#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_int.hpp>
#include <boost/rational.hpp>
#include <cmath>

#include "direx/sampler.hpp"

using namespace direx;
using Rational = boost::rational<std::int64_t>;
using boost::multiprecision::cpp_rational;

namespace {

// floor(r q) with q taken exactly as the double it is.
std::uint64_t exact_floor(std::uint64_t r, double q) {
  const cpp_rational prod = cpp_rational(q) * cpp_rational(r);
  const boost::multiprecision::cpp_int f = boost::multiprecision::numerator(prod) / boost::multiprecision::denominator(prod);
  return f.convert_to<std::uint64_t>();
}

// Nested-floor reference of the streamed layout: sequence -> number of m-bit seeds mapping to it.
void nested_reference(const std::vector<double>& q, std::size_t n, std::size_t depth, std::size_t index, std::uint64_t r,
                      std::vector<std::uint64_t>& out) {
  if (depth == n) {
    out[index] = r;
    return;
  }
  std::uint64_t cum = 0;
  for (std::size_t a = 0; a < q.size(); ++a) {
    const std::uint64_t w = std::min(exact_floor(r, q[a]), r - cum);
    cum += w;
    nested_reference(q, n, depth + 1, index * q.size() + a, w, out);
  }
}

std::vector<Rational> product(const std::vector<Rational>& q, std::size_t n) {
  std::vector<Rational> out{Rational(1)};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Rational> next;
    for (const auto& p : out)
      for (const auto& a : q) next.push_back(p * a);
    out = std::move(next);
  }
  return out;
}

}  // namespace

TEST(IntervalSample, SingleSymbolLayout) {
  const std::vector<Rational> q{Rational(1, 3), Rational(1, 3), Rational(1, 3)};
  const auto w = truncated_widths<Rational>(q, 4);
  EXPECT_EQ(w, (std::vector<std::uint64_t>{5, 5, 5}));
  EXPECT_EQ(interval_sample<Rational>(q, 0, 4), std::optional<std::size_t>(0));
  EXPECT_EQ(interval_sample<Rational>(q, 5, 4), std::optional<std::size_t>(1));
  EXPECT_EQ(interval_sample<Rational>(q, 14, 4), std::optional<std::size_t>(2));
  EXPECT_EQ(interval_sample<Rational>(q, 15, 4), std::nullopt);
  EXPECT_THROW(interval_sample<Rational>(q, 16, 4), ParameterError);
  const auto t = truncated_distribution<Rational>(q, 4);
  EXPECT_EQ(t.back(), Rational(1, 16));
}

TEST(IntervalSample, DistanceWithinAlphabetOverTwoToTheM) {
  // Q = (1/4, 3/4), n = 2, m = 6
  const auto q2 = product({Rational(1, 4), Rational(3, 4)}, 2);
  const auto t2 = truncated_distribution<Rational>(q2, 6);
  Rational d = t2.back();
  for (std::size_t i = 0; i < q2.size(); ++i) d += boost::abs(t2[i] - q2[i]);
  d /= 2;
  EXPECT_LE(d, Rational(1, 16));

  // Q = (1/3, 1/3, 1/3), n = 4, m = 12: bound 81 / 2^12
  const auto q4 = product({Rational(1, 3), Rational(1, 3), Rational(1, 3)}, 4);
  const auto t4 = truncated_distribution<Rational>(q4, 12);
  EXPECT_EQ(t4.back(), Rational(4096 - 81 * 50, 4096));
  EXPECT_LE(t4.back(), Rational(81, 4096));
}

TEST(IntervalSample, EveryMaskedSeedAborts) {
  const std::vector<double> q{0.2, 0.3, 0.5};
  const unsigned m = 10;
  const auto w = truncated_widths<double>(q, m);
  std::uint64_t covered = 0;
  for (auto x : w) covered += x;
  std::size_t aborts = 0;
  for (std::uint64_t x = 0; x < (1u << m); ++x)
    if (!interval_sample<double>(q, x, m)) ++aborts;
  EXPECT_EQ(aborts, (1u << m) - covered);
}

TEST(SequenceSampler, InducedMatchesNestedFloorReference) {
  for (const auto& q : std::vector<std::vector<double>>{{0.25, 0.75}, {1.0 / 3, 1.0 / 3, 1.0 / 3}, {0.1, 0.45, 0.45}}) {
    const SequenceSampler s(q);
    const std::size_t n = 3;
    const unsigned m = 14;
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= q.size();
    std::vector<std::uint64_t> ref(total, 0);
    nested_reference(q, n, 0, 0, std::uint64_t{1} << m, ref);
    const auto induced = s.induced_distribution(n, m);
    std::vector<std::uint64_t> counts(total + 1, 0);
    for (std::uint64_t seed = 0; seed < (std::uint64_t{1} << m); ++seed) {
      const auto idx = s.sample_index(seed, m, n);
      ++counts[idx ? *idx : total];
    }
    for (std::size_t i = 0; i < total; ++i) {
      EXPECT_EQ(counts[i], ref[i]);
      EXPECT_EQ(induced[i], std::ldexp(static_cast<double>(ref[i]), -static_cast<int>(m)));
    }
  }
}

TEST(SequenceSampler, DyadicQMatchesSingleFloorLayout) {
  // for dyadic Q the streamed and single-shot layouts coincide
  const SequenceSampler s({0.25, 0.75});
  const std::size_t n = 2;
  const unsigned m = 6;
  const auto q2 = product({Rational(1, 4), Rational(3, 4)}, n);
  const auto t2 = truncated_distribution<Rational>(q2, m);
  const auto induced = s.induced_distribution(n, m);
  for (std::size_t i = 0; i < q2.size(); ++i) EXPECT_EQ(induced[i], boost::rational_cast<double>(t2[i]));
}

TEST(SequenceSampler, BitVectorPathMatchesIntegerPath) {
  const SequenceSampler s({0.1, 0.2, 0.3, 0.4});
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const unsigned m = 20;
    const auto seed = BitVector::random(m, rng);
    const auto a = s.sample(seed, 4);
    const auto b = s.sample_index(seed.to_integer(), m, 4);
    ASSERT_EQ(a.symbols.has_value(), b.has_value());
    if (!b) continue;
    std::size_t idx = 0;
    for (auto sym : *a.symbols) idx = idx * 4 + sym;
    EXPECT_EQ(idx, *b);
  }
}

TEST(SequenceSampler, LongRunFrequenciesAndSeedUse) {
  const std::vector<double> q{0.85, 0.05, 0.05, 0.05};
  const SequenceSampler s(q);
  const std::size_t n = 100000;
  const auto budget = seed_budget(q, n, 0x1p-20);
  Rng rng(4);
  const auto seed = BitVector::random(budget, rng);
  const auto out = s.sample(seed, n);
  ASSERT_TRUE(out.symbols.has_value());
  std::vector<double> counts(4, 0.0);
  for (auto a : *out.symbols) counts[a] += 1.0;
  for (std::size_t a = 0; a < 4; ++a) EXPECT_NEAR(counts[a] / n, q[a], 5.0 * std::sqrt(q[a] * (1 - q[a]) / n));
  const double h = n * shannon_entropy(q);
  EXPECT_LE(out.bits_used, budget);
  EXPECT_NEAR(static_cast<double>(out.bits_used), h, 0.02 * h);
  EXPECT_LT(out.loss_bound, 1e-10);
}

TEST(SequenceSampler, ShortSeedAborts) {
  const SequenceSampler s({0.5, 0.5});
  const auto out = s.sample(BitVector::from_string("1011"), 100);
  EXPECT_FALSE(out.symbols.has_value());
  EXPECT_EQ(out.bits_used, 4u);
}

TEST(SequenceSampler, Validation) {
  EXPECT_THROW(SequenceSampler(std::vector<double>{}), ShapeError);
  EXPECT_THROW(SequenceSampler(std::vector<double>{0.5, 0.6}), ValidationError);
  EXPECT_THROW(SequenceSampler({0.5, 0.5}).sample_index(0, 62, 1), ParameterError);
}

TEST(SeedBudget, FormulaAndEmpiricalFailure) {
  const std::vector<double> q{0.7, 0.1, 0.1, 0.1};
  const std::size_t n = 2000;
  const double eps = 1e-3;
  const double expect = n * shannon_entropy(q) + std::log2(7.0) * std::sqrt(n * std::log(2.0 / eps) / 2.0);
  EXPECT_EQ(seed_budget(q, n, eps), static_cast<std::size_t>(std::ceil(expect)) + 64);
  const SequenceSampler s(q);
  Rng rng(5);
  std::size_t aborts = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto out = s.sample(BitVector::random(seed_budget(q, n, eps), rng), n);
    if (!out.symbols) ++aborts;
  }
  EXPECT_EQ(aborts, 0u);
  EXPECT_LE(seed_budget_failure(q, n, eps), eps);
}

TEST(TypicalSet, HandExample) {
  TypicalSet t{{0.5, 0.5}, 4, 1.0};
  const auto s = typical_stats(t);
  EXPECT_TRUE(s.exact);
  EXPECT_NEAR(s.mass, 14.0 / 16.0, 1e-12);
  EXPECT_EQ(s.size, 14.0);
  const std::vector<std::uint32_t> all_zero{0, 0, 0, 0}, mixed{0, 1, 1, 0};
  EXPECT_FALSE(t.contains(all_zero));
  EXPECT_TRUE(t.contains(mixed));
}

TEST(TypicalSet, ExactStatsMatchBruteForce) {
  TypicalSet t{{0.2, 0.3, 0.5}, 7, 0.8};
  double mass = 0.0, size = 0.0;
  std::vector<std::uint32_t> seq(7);
  for (std::size_t idx = 0; idx < 2187; ++idx) {
    std::size_t rem = idx;
    double p = 1.0;
    for (auto& a : seq) {
      a = static_cast<std::uint32_t>(rem % 3);
      rem /= 3;
      p *= t.q[a];
    }
    if (t.contains(seq)) {
      mass += p;
      size += 1.0;
    }
  }
  const auto s = typical_stats(t);
  EXPECT_NEAR(s.mass, mass, 1e-12);
  EXPECT_EQ(s.size, size);
}

TEST(TypicalSet, BoundsHoldAcrossParameters) {
  for (const auto& q : std::vector<std::vector<double>>{{0.5, 0.5}, {0.3, 0.7}, {0.25, 0.25, 0.5}, {0.1, 0.2, 0.3, 0.4}})
    for (std::size_t n : {4u, 10u, 30u})
      for (double alpha : {0.5, 1.0, 2.0, 3.0}) {
        const auto s = typical_stats(TypicalSet{q, n, alpha});
        EXPECT_TRUE(s.mass_bound_holds()) << n << " " << alpha;
        EXPECT_TRUE(s.size_bound_holds()) << n << " " << alpha;
      }
}

TEST(TypicalSet, MonteCarloFallback) {
  TypicalSet t{{0.25, 0.25, 0.25, 0.25}, 5000, 2.0};
  const auto s = typical_stats(t, 9, 2000);
  EXPECT_FALSE(s.exact);
  EXPECT_GE(s.mass, s.mass_bound);
}

TEST(SamplerRegime, Parameters) {
  const std::vector<double> q{0.45, 0.55};
  const auto r = sampler_regime(q, 12);
  EXPECT_NEAR(r.gamma, -std::log(0.45) / std::log(12.0), 1e-15);
  EXPECT_NEAR(r.alpha, std::pow(12.0, 0.5 - r.gamma), 1e-12);
  EXPECT_NEAR(r.error_bound, 3.0 * std::exp(-2.0 * std::pow(12.0, 1.0 - 3.0 * r.gamma)), 1e-15);
  EXPECT_THROW(sampler_regime(std::vector<double>{0.1, 0.9}, 12), ParameterError);
}

TEST(SamplerRegime, EnumeratedDistanceWithinBound) {
  const std::vector<double> q{0.48, 0.52};
  const std::size_t n = 10;
  const auto r = sampler_regime(q, n);
  ASSERT_LE(r.m, 30u);
  const SequenceSampler s(q);
  const double d = sampler_distance_by_enumeration(s, n, r.m, 2);
  EXPECT_LE(d, r.error_bound);
  // cross-check against the induced layout
  const auto induced = s.induced_distribution(n, r.m);
  double ref = 1.0;
  for (double p : induced) ref -= p;
  for (std::size_t i = 0; i < induced.size(); ++i) {
    double p = 1.0;
    std::size_t rem = i;
    for (std::size_t j = 0; j < n; ++j) {
      p *= q[rem % 2];
      rem /= 2;
    }
    ref += std::abs(induced[i] - p);
  }
  EXPECT_NEAR(d, 0.5 * ref, 1e-12);
}

TEST(EntropyCost, Arithmetic) {
  const std::vector<double> p{0.25, 0.25, 0.25, 0.25};
  const auto c = entropy_cost(p, 1000, 2000, 500, 2100);
  EXPECT_DOUBLE_EQ(c.input_entropy, 2000.0);
  EXPECT_EQ(c.extractor_seed_bits, 2499u);
  EXPECT_DOUBLE_EQ(c.net_excluding_public_seed, -1600.0);
  EXPECT_DOUBLE_EQ(c.net_expansion, -4099.0);
  EXPECT_EQ(entropy_cost(p, 10, 20, 0, 30).extractor_seed_bits, 0u);
}
