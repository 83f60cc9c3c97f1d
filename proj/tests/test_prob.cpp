#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>

#include "direx/prob.hpp"
#include "direx/rng.hpp"

using namespace direx;

namespace {

// d(P_RE, U_R x Q_E) evaluated directly.
double distance_to_product(std::span<const double> p, std::size_t nr, std::size_t ne, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t e = 0; e < ne; ++e) s += std::abs(p[r * ne + e] - q[e] / static_cast<double>(nr));
  return 0.5 * s;
}

// Grid search over the simplex of Q_E for |E| <= 3.
double grid_delta(std::span<const double> p, std::size_t nr, std::size_t ne) {
  const int steps = 2000;
  double best = 1.0;
  if (ne == 1) return distance_to_product(p, nr, ne, std::vector<double>{1.0});
  if (ne == 2) {
    for (int i = 0; i <= steps; ++i) {
      const double a = static_cast<double>(i) / steps;
      best = std::min(best, distance_to_product(p, nr, ne, std::vector<double>{a, 1.0 - a}));
    }
    return best;
  }
  const int coarse = 400;
  for (int i = 0; i <= coarse; ++i)
    for (int j = 0; i + j <= coarse; ++j) {
      const double a = static_cast<double>(i) / coarse, b = static_cast<double>(j) / coarse;
      best = std::min(best, distance_to_product(p, nr, ne, std::vector<double>{a, b, 1.0 - a - b}));
    }
  return best;
}

std::vector<double> random_table(Rng& rng, std::size_t size) {
  std::vector<double> p(size);
  double total = 0.0;
  for (auto& v : p) {
    v = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
    total += v;
  }
  if (total == 0.0) p[0] = total = 1.0;
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace

TEST(Distribution, RejectsBadInput) {
  EXPECT_THROW(Distribution({0.5, 0.6}), ValidationError);
  EXPECT_THROW(Distribution({-0.1, 1.1}), ValidationError);
  EXPECT_THROW(Distribution({"a"}, {0.5, 0.5}), ShapeError);
  EXPECT_NO_THROW(Distribution({0.25, 0.75}));
}

TEST(Distribution, TextRoundTrip) {
  Distribution d({"a", "b", "c"}, {0.1, 0.2, 0.7});
  std::istringstream in(to_text(d));
  const auto back = read_distribution(in);
  EXPECT_EQ(back.alphabet(), d.alphabet());
  EXPECT_TRUE(std::ranges::equal(back.probs(), d.probs()));
}

TEST(Distribution, ParseErrorsCarryLine) {
  std::istringstream in("alphabet: a b\n0.5\nzero\n");
  try {
    read_distribution(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(JointDistribution, MarginalSumsOut) {
  // P(R, E): R fastest last
  JointDistribution p({Axis("R", 2), Axis("E", 3)}, {0.1, 0.2, 0.1, 0.3, 0.1, 0.2});
  const auto pe = p.marginal({"E"});
  EXPECT_NEAR(pe.probs()[0], 0.4, 1e-15);
  EXPECT_NEAR(pe.probs()[1], 0.3, 1e-15);
  EXPECT_NEAR(pe.probs()[2], 0.3, 1e-15);
  const auto pr = p.marginal({"R"});
  EXPECT_NEAR(pr.probs()[0], 0.4, 1e-15);
  EXPECT_NEAR(pr.probs()[1], 0.6, 1e-15);
}

TEST(JointDistribution, ShapeMismatchThrows) {
  EXPECT_THROW(JointDistribution({Axis("R", 2), Axis("E", 2)}, {0.5, 0.5}), ShapeError);
}

TEST(TraceDistance, HandValues) {
  EXPECT_DOUBLE_EQ(trace_distance(Distribution({1.0, 0.0}), Distribution({0.0, 1.0})), 1.0);
  EXPECT_DOUBLE_EQ(trace_distance(Distribution({0.5, 0.5}), Distribution({0.25, 0.75})), 0.25);
  EXPECT_THROW(trace_distance(Distribution({1.0}), Distribution({0.5, 0.5})), ShapeError);
}

TEST(DeltaRandomness, UniformIndependentIsZero) {
  JointDistribution p({Axis("R", 2), Axis("E", 2)}, {0.25, 0.25, 0.25, 0.25});
  EXPECT_NEAR(delta_randomness(p), 0.0, 1e-15);
}

TEST(DeltaRandomness, CorrelatedBitsIsHalf) {
  // R = E uniform: every E value fixes R.
  JointDistribution p({Axis("R", 2), Axis("E", 2)}, {0.5, 0.0, 0.0, 0.5});
  EXPECT_NEAR(delta_randomness(p), 0.5, 1e-15);
  EXPECT_NEAR(grid_delta(p.probs(), 2, 2), 0.5, 1e-12);
}

TEST(DeltaRandomness, DeterministicOutputOfFourValues) {
  JointDistribution p({Axis("R", 4), Axis("E", 1)}, {1.0, 0.0, 0.0, 0.0});
  EXPECT_NEAR(delta_randomness(p), 0.75, 1e-15);
}

TEST(DeltaRandomness, MatchesGridOracleOnRandomTables) {
  Rng rng(20240611);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t nr = 2 + rng.below(3);
    const std::size_t ne = 1 + rng.below(3);
    const auto probs = random_table(rng, nr * ne);
    JointDistribution p({Axis("R", nr), Axis("E", ne)}, probs);
    const double exact = delta_randomness(p);
    const double grid = grid_delta(probs, nr, ne);
    // grid is an upper bound that converges to the minimum
    EXPECT_LE(exact, grid + 1e-12) << "trial " << trial;
    EXPECT_NEAR(exact, grid, ne == 3 ? 5e-3 : 1e-3) << "trial " << trial;
  }
}

TEST(DeltaRandomness, BoundedByTraceDistanceToAnyProduct) {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const auto probs = random_table(rng, 12);
    JointDistribution p({Axis("R", 3), Axis("E", 4)}, probs);
    const auto pe = p.marginal({"E"});
    EXPECT_LE(delta_randomness(p), distance_to_product(probs, 3, 4, pe.probs()) + 1e-12);
  }
}

TEST(DeltaRandomness, RequiresTwoAxes) {
  JointDistribution p({Axis("R", 2), Axis("E", 1), Axis("F", 1)}, {0.5, 0.5});
  EXPECT_THROW(delta_randomness(p), ShapeError);
}

TEST(Entropy, MinEntropyHandValues) {
  EXPECT_NEAR(min_entropy(Distribution::uniform(8)), 3.0, 1e-15);
  EXPECT_NEAR(min_entropy(Distribution({0.5, 0.25, 0.25})), 1.0, 1e-15);
  EXPECT_NEAR(shannon_entropy(Distribution({0.5, 0.25, 0.25})), 1.5, 1e-15);
  EXPECT_EQ(shannon_entropy(Distribution::point_mass(4, 2)), 0.0);
}

TEST(Entropy, ConditionalAverageAndWorstCase) {
  // E=0: R uniform; E=1: R fixed. P(E) = (1/2, 1/2).
  JointDistribution p({Axis("R", 2), Axis("E", 2)}, {0.25, 0.5, 0.25, 0.0});
  // guessing probability 1/2 * 1/2 + 1/2 * 1 = 3/4
  EXPECT_NEAR(min_entropy_avg(p), -std::log2(0.75), 1e-15);
  EXPECT_NEAR(min_entropy_worst(p), 0.0, 1e-15);
}

TEST(Entropy, OrderingProperty) {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto probs = random_table(rng, 8);
    JointDistribution p({Axis("R", 4), Axis("E", 2)}, probs);
    const double worst = min_entropy_worst(p);
    const double avg = min_entropy_avg(p);
    const double unconditioned = min_entropy(p.marginal({"R"}).to_distribution());
    EXPECT_LE(worst, avg + 1e-12);
    EXPECT_LE(avg, unconditioned + 1e-12);
    EXPECT_LE(unconditioned, shannon_entropy(p.marginal({"R"}).probs()) + 1e-12);
  }
}
