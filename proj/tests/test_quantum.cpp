#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "direx/bell.hpp"
#include "direx/quantum.hpp"

using namespace direx;

namespace {

double dot(const Bloch& a, const Bloch& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

using Pauli = std::array<cplx, 4>;
const std::array<Pauli, 3> kPauli{Pauli{0.0, 1.0, 1.0, 0.0}, Pauli{0.0, cplx(0, -1), cplx(0, 1), 0.0},
                                  Pauli{1.0, 0.0, 0.0, -1.0}};

// T_ij = tr[rho (sigma_i x sigma_j)]
std::array<double, 9> correlation_matrix(const TwoQubitState& s) {
  std::array<double, 9> t{};
  const auto& rho = s.matrix();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      cplx tr = 0.0;
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
          const cplx op = kPauli[i][(r / 2) * 2 + c / 2] * kPauli[j][(r % 2) * 2 + c % 2];
          tr += op * rho[c * 4 + r];
        }
      t[i * 3 + j] = tr.real();
    }
  return t;
}

double correlator(const ConditionalTable& p, std::size_t v, std::size_t w) {
  double e = 0.0;
  for (std::size_t x = 0; x < 2; ++x)
    for (std::size_t y = 0; y < 2; ++y) e += ((x ^ y) ? -1.0 : 1.0) * p(x, y, v, w);
  return e;
}

}  // namespace

TEST(TwoQubitState, Validation) {
  Mat4 m{};
  m[0] = 2.0;
  EXPECT_THROW(TwoQubitState{m}, ValidationError);
  Mat4 neg{};
  neg[0] = 1.5;
  neg[5] = -0.5;
  EXPECT_THROW(TwoQubitState{neg}, ValidationError);
  Mat4 nh{};
  nh[0] = nh[15] = 0.5;
  nh[1] = 0.1;
  EXPECT_THROW(TwoQubitState{nh}, ValidationError);
  EXPECT_THROW(werner_state(1.2), ParameterError);
}

TEST(TwoQubitState, Eigenvalues) {
  const auto s = TwoQubitState::singlet().eigenvalues();
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_NEAR(s[3], 0.0, 1e-12);
  const auto w = werner_state(0.6).eigenvalues();
  EXPECT_NEAR(w[0], 0.6 + 0.1, 1e-12);
  EXPECT_NEAR(w[1], 0.1, 1e-12);
  EXPECT_NEAR(w[3], 0.1, 1e-12);
}

TEST(MeasurePair, SingletCorrelatorsAreMinusDot) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto st = random_settings(rng);
    for (double nu : {1.0, 0.7, 0.0}) {
      const auto p = measure_pair(werner_state(nu), st);
      for (std::size_t v = 0; v < 2; ++v)
        for (std::size_t w = 0; w < 2; ++w) {
          EXPECT_NEAR(correlator(p, v, w), -nu * dot(st.a.direction(v), st.b.direction(w)), 1e-12);
          EXPECT_NEAR(p.marginal_a(0, v, w), 0.5, 1e-12);
        }
    }
  }
}

TEST(MeasurePair, OptimalSettingsReachTsirelson) {
  const auto chsh = BellExpression::chsh();
  const auto p = measure_pair(TwoQubitState::singlet(), chsh_optimal_settings());
  EXPECT_NEAR(bell_expectation(chsh, p), 2.0 * std::numbers::sqrt2, 1e-12);
  EXPECT_NEAR(p.max_prob(), 0.25 * (1.0 + 1.0 / std::numbers::sqrt2), 1e-12);
  for (double nu : {0.5, 0.7071, 0.9})
    EXPECT_NEAR(bell_expectation(chsh, measure_pair(werner_state(nu), chsh_optimal_settings())),
                2.0 * std::numbers::sqrt2 * nu, 1e-12);
}

TEST(MeasurePair, RandomBehavioursRespectTsirelsonAndNoSignalling) {
  const auto chsh = BellExpression::chsh();
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto state = random_state(rng, 1 + rng.below(4));
    const auto p = measure_pair(state, random_settings(rng));
    const double i = bell_expectation(chsh, p);
    const auto t = correlation_matrix(state);
    double frob = 0.0;
    for (double x : t) frob += x * x;
    // max CHSH = 2 sqrt(s1^2 + s2^2) <= 2 ||T||_F
    EXPECT_LE(std::abs(i), 2.0 * std::sqrt(frob) + 1e-9);
    EXPECT_LE(std::abs(i), 2.0 * std::numbers::sqrt2 + 1e-9);
    EXPECT_LT(p.signalling_residual(), 1e-12);
  }
}

TEST(MeasurePair, ChshBoundHoldsOnQuantumFamily) {
  const auto chsh = BellExpression::chsh();
  const auto bound = BoundFunction::chsh();
  Rng rng(13);
  std::vector<BoundFamilyMember> family;
  for (int trial = 0; trial < 500; ++trial) {
    const auto p = measure_pair(random_state(rng, 1 + rng.below(2)), random_settings(rng));
    family.push_back({"random", p, bell_expectation(chsh, p)});
  }
  for (double nu = 0.0; nu <= 1.0; nu += 0.05) {
    const auto p = measure_pair(werner_state(nu), chsh_optimal_settings());
    family.push_back({"werner", p, bell_expectation(chsh, p)});
  }
  const auto report = validate_bound(bound, family);
  EXPECT_EQ(report.members, family.size());
  EXPECT_GE(report.min_slack, -1e-12);
}

TEST(Settings, ReadAndValidate) {
  std::istringstream in("A 0 0 0 1\nA 1 1 0 0\n# b\nB 1 0 1 0\nB 0 0 0 -1\n");
  const auto s = read_settings(in);
  EXPECT_EQ(s.a.inputs(), 2u);
  EXPECT_EQ(s.b.direction(0)[2], -1.0);
  std::istringstream gap("A 0 0 0 1\nA 2 1 0 0\nB 0 0 0 1\n");
  EXPECT_THROW(read_settings(gap), ParseError);
  std::istringstream norm("A 0 0 0 2\nB 0 0 0 1\n");
  EXPECT_THROW(read_settings(norm), ValidationError);
}
