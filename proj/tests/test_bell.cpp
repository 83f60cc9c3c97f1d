#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "direx/bell.hpp"
#include "direx/rng.hpp"

using namespace direx;

namespace {

// S = E00 + E01 + E10 - E11 with E_vw = sum (-1)^(x xor y) P(xy|vw).
double chsh_from_correlators(const ConditionalTable& p) {
  double s = 0.0;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t w = 0; w < 2; ++w) {
      double e = 0.0;
      for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t y = 0; y < 2; ++y) e += ((x ^ y) ? -1.0 : 1.0) * p(x, y, v, w);
      s += (v & w) ? -e : e;
    }
  return s;
}

ConditionalTable pr_box() {
  BellDims d{};
  std::vector<double> p(d.size(), 0.0);
  ConditionalTable layout = ConditionalTable::uniform(d);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t w = 0; w < 2; ++w)
      for (std::size_t x = 0; x < 2; ++x) p[layout.index(x, x ^ (v & w), v, w)] = 0.5;
  return ConditionalTable(d, p);
}

}  // namespace

TEST(Chsh, AgreesWithCorrelatorForm) {
  const auto chsh = BellExpression::chsh();
  EXPECT_DOUBLE_EQ(bell_expectation(chsh, pr_box()), 4.0);
  EXPECT_DOUBLE_EQ(chsh_from_correlators(pr_box()), 4.0);
  EXPECT_DOUBLE_EQ(bell_expectation(chsh, ConditionalTable::uniform()), 0.0);
  EXPECT_EQ(chsh.c_max(), 1.0);
}

TEST(Chsh, LocalDeterministicStrategiesReachTwo) {
  const auto chsh = BellExpression::chsh();
  double best = -10.0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      auto t = ConditionalTable::deterministic(
          BellDims{}, [a](std::size_t v) { return static_cast<std::size_t>((a >> v) & 1); },
          [b](std::size_t w) { return static_cast<std::size_t>((b >> w) & 1); });
      const double i = bell_expectation(chsh, t);
      EXPECT_DOUBLE_EQ(i, chsh_from_correlators(t));
      best = std::max(best, i);
    }
  EXPECT_DOUBLE_EQ(best, chsh.local_bound());
}

TEST(BoundFunction, ChshHandValues) {
  const auto b = BoundFunction::chsh();
  EXPECT_DOUBLE_EQ(b.g(2.0), 1.0);
  EXPECT_DOUBLE_EQ(b.g(1.0), 1.0);
  EXPECT_NEAR(b.g(2.0 * std::numbers::sqrt2), 0.5, 1e-7);
  EXPECT_NEAR(b.g(2.5), 0.8307189139, 1e-10);
  EXPECT_DOUBLE_EQ(b.g(3.5), b.g(2.0 * std::numbers::sqrt2));
  EXPECT_NEAR(b.f(2.0 * std::numbers::sqrt2), 1.0, 1e-6);
  EXPECT_EQ(b.f(1.5), 0.0);
  EXPECT_THROW(b.g(std::nan("")), ParameterError);
}

TEST(BoundFunction, ChshIsMonotoneAndConcave) {
  const auto b = BoundFunction::chsh();
  const double h = 1e-3;
  for (double i = 1.0; i < 3.5; i += 0.01) {
    EXPECT_LE(b.g(i + h), b.g(i) + 1e-15);
    EXPECT_GE(b.f(i + h), b.f(i) - 1e-15);
    // midpoint concavity
    EXPECT_GE(b.g(i + h), 0.5 * (b.g(i) + b.g(i + 2 * h)) - 1e-12);
  }
}

TEST(BoundFunction, TabulatedInterpolatesHull) {
  // middle knot lies below the chord and is dropped
  const auto b = BoundFunction::tabulated({{2.0, 1.0}, {2.4, 0.7}, {2.8, 0.5}});
  EXPECT_EQ(b.knots().size(), 2u);
  EXPECT_NEAR(b.g(2.4), 0.75, 1e-15);
  EXPECT_DOUBLE_EQ(b.g(3.0), 0.5);
  EXPECT_DOUBLE_EQ(b.g(1.0), 1.0);
}

TEST(BoundFunction, TabulatedValidation) {
  EXPECT_THROW(BoundFunction::tabulated({{2.0, 1.0}}), ValidationError);
  EXPECT_THROW(BoundFunction::tabulated({{2.0, 1.0}, {2.0, 0.9}}), ValidationError);
  EXPECT_THROW(BoundFunction::tabulated({{2.0, 0.9}, {2.5, 1.0}}), ValidationError);
  EXPECT_THROW(BoundFunction::tabulated({{2.0, 1.0}, {2.5, 0.1}}), ValidationError);
}

TEST(BoundFunction, ReadTable) {
  std::istringstream in("# I g\n2 1\n2.5 0.8\n\n2.8284 0.5\n");
  const auto b = read_bound_table(in);
  EXPECT_NEAR(b.g(2.25), 0.9, 1e-12);
  std::istringstream bad("2 1\n2.5\n");
  EXPECT_THROW(read_bound_table(bad), ParseError);
}

TEST(ValidateBound, AcceptsQuantumFamilyAndRejectsCounterexample) {
  const auto chsh = BellExpression::chsh();
  const auto b = BoundFunction::chsh();
  std::vector<BoundFamilyMember> ok;
  for (int a = 0; a < 4; ++a) {
    auto t = ConditionalTable::deterministic(
        BellDims{}, [a](std::size_t v) { return static_cast<std::size_t>((a >> v) & 1); },
        [](std::size_t) { return std::size_t{0}; });
    ok.push_back({"det", t, bell_expectation(chsh, t)});
  }
  EXPECT_EQ(validate_bound(b, ok).members, 4u);

  // 0.8 deterministic + 0.2 PR box: I = 2.4 but max P = 0.9 > g(2.4)
  const auto det = ConditionalTable::deterministic(BellDims{}, [](std::size_t) { return std::size_t{0}; },
                                                   [](std::size_t) { return std::size_t{0}; });
  const auto mixed = mix(det, pr_box(), 0.8);
  const double i = bell_expectation(chsh, mixed);
  EXPECT_NEAR(i, 2.4, 1e-12);
  EXPECT_GT(mixed.max_prob(), b.g(i));
  std::vector<BoundFamilyMember> bad{{"mixed", mixed, i}};
  EXPECT_THROW(validate_bound(b, bad), BoundInvalid);

  std::vector<BoundFamilyMember> out_of_domain{{"pr", pr_box(), 4.0}};
  EXPECT_THROW(validate_bound(b, out_of_domain), BoundInvalid);
}

TEST(Estimator, HandTranscript) {
  const auto chsh = BellExpression::chsh();
  const auto u = InputDistribution::uniform();
  // (v,w,x,y): c = +1, +1, -1, +1 -> sum 2, each / (1/4)
  std::vector<Round> r{{0, 0, 0, 0}, {1, 1, 0, 1}, {0, 1, 1, 0}, {1, 0, 1, 1}};
  EXPECT_DOUBLE_EQ(estimator(chsh, u, r), 2.0);
  EXPECT_THROW(estimator(chsh, u, std::span<const Round>{}), ContractViolation);
  std::vector<Round> bad{{2, 0, 0, 0}};
  EXPECT_THROW(estimator(chsh, u, bad), ContractViolation);
}

TEST(Estimator, SingleRoundExpectationIsBellValue) {
  const auto chsh = BellExpression::chsh();
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> p(16);
    ConditionalTable layout = ConditionalTable::uniform();
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t w = 0; w < 2; ++w) {
        double s = 0.0;
        for (std::size_t o = 0; o < 4; ++o) s += p[layout.offset(v, w) + o] = rng.uniform();
        for (std::size_t o = 0; o < 4; ++o) p[layout.offset(v, w) + o] /= s;
      }
    ConditionalTable t(BellDims{}, p);
    const auto in = InputDistribution::biased(0.1);
    double expect = 0.0;
    for (std::uint8_t v = 0; v < 2; ++v)
      for (std::uint8_t w = 0; w < 2; ++w)
        for (std::uint8_t x = 0; x < 2; ++x)
          for (std::uint8_t y = 0; y < 2; ++y)
            expect += in(v, w) * t(x, y, v, w) * round_estimate(chsh, in, Round{v, w, x, y});
    EXPECT_NEAR(expect, chsh_from_correlators(t), 1e-12);
  }
}

TEST(InputDistribution, Validation) {
  EXPECT_THROW(InputDistribution(2, 2, {0.5, 0.5, 0.0, 0.0}), ValidationError);
  EXPECT_THROW(InputDistribution(2, 2, {0.5, 0.5}), ShapeError);
  const auto b = InputDistribution::biased(0.05);
  EXPECT_NEAR(b(0, 0), 0.85, 1e-15);
  EXPECT_DOUBLE_EQ(b.q_min(), 0.05);
}

TEST(BellExpressionText, RoundTrip) {
  std::ostringstream out;
  write_bell_expression(out, BellExpression::chsh());
  std::istringstream in(out.str());
  const auto e = read_bell_expression(in);
  const auto c = BellExpression::chsh();
  EXPECT_EQ(e.local_bound(), c.local_bound());
  EXPECT_EQ(e.quantum_max(), c.quantum_max());
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(e.coefficients()[i], c.coefficients()[i]);
}

TEST(BellExpressionText, Errors) {
  std::istringstream missing("local_bound: 2\nquantum_max: 2.8\n");
  EXPECT_THROW(read_bell_expression(missing), ParseError);
  std::istringstream outside("alphabets: 2 2 2 2\nlocal_bound: 2\nquantum_max: 2.8\n0 0 2 0 1\n");
  EXPECT_THROW(read_bell_expression(outside), ShapeError);
  std::istringstream garbage("alphabets: 2 2 2 2\nlocal_bound: two\n");
  try {
    read_bell_expression(garbage);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
}
