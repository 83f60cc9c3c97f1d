#pragma once

// Min-entropy certification from an observed Bell estimator, and exact
// oracles for the three steps of its soundness argument.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "direx/bell.hpp"
#include "direx/devices.hpp"
#include "direx/error.hpp"
#include "direx/parallel.hpp"
#include "direx/prob.hpp"
#include "direx/rng.hpp"

namespace direx {

/// Thresholds J_0 < J_1 < ... < J_mmax; bin m covers [J_m, J_{m+1}), bin 0 aborts.
class ThresholdLadder {
 public:
  explicit ThresholdLadder(std::vector<double> thresholds) : j_(std::move(thresholds)) {
    if (j_.size() < 3) throw ParameterError("ladder: need J_0, at least one certifying threshold, and J_mmax");
    for (std::size_t i = 1; i < j_.size(); ++i)
      if (!(j_[i] > j_[i - 1])) throw ParameterError("ladder: thresholds must be strictly ascending");
  }

  static ThresholdLadder uniform(double local_bound, double quantum_max, std::size_t bins = 8) {
    if (bins < 2) throw ParameterError("ladder: need at least two bins");
    std::vector<double> j(bins + 1);
    for (std::size_t m = 0; m <= bins; ++m) j[m] = local_bound + (quantum_max - local_bound) * static_cast<double>(m) / static_cast<double>(bins);
    j[bins] = quantum_max;
    return ThresholdLadder(std::move(j));
  }
  static ThresholdLadder uniform(const BellExpression& expr, std::size_t bins = 8) {
    return uniform(expr.local_bound(), expr.quantum_max(), bins);
  }

  std::size_t m_max() const noexcept { return j_.size() - 1; }
  double threshold(std::size_t m) const { return j_.at(m); }
  std::span<const double> thresholds() const noexcept { return j_; }

  std::size_t bin(double bell_estimate) const {
    if (!(bell_estimate >= j_[1])) return 0;
    if (bell_estimate >= j_.back()) return m_max() - 1;
    auto it = std::upper_bound(j_.begin(), j_.end(), bell_estimate);
    return static_cast<std::size_t>(it - j_.begin()) - 1;
  }

  void check_against(const BellExpression& expr, double tolerance = 1e-12) const {
    if (std::abs(j_.front() - expr.local_bound()) > tolerance || std::abs(j_.back() - expr.quantum_max()) > tolerance)
      throw ValidationError("ladder/expression mismatch: endpoints must equal the local bound and the quantum maximum");
  }

  friend bool operator==(const ThresholdLadder&, const ThresholdLadder&) = default;

 private:
  std::vector<double> j_;
};

struct SecurityParams {
  double eps = 0x1p-20;        ///< Azuma failure
  double eps_prime = 0x1p-20;  ///< negligible-bin mass
  double eps_ext = 0x1p-20;    ///< extractor error
  double eps_inp = 0x1p-20;    ///< input-sampling error

  double eps_sec() const noexcept { return eps_inp + eps + eps_prime + eps_ext; }

  void validate() const {
    for (double e : {eps, eps_prime, eps_ext, eps_inp})
      if (!(e > 0.0 && e < 1.0)) throw ParameterError("security parameters must lie in (0,1)");
  }
};

/// (c_max/q + I_q) sqrt((2/n) ln(1/eps)).
inline double mu(const BellExpression& expr, const InputDistribution& inputs, std::size_t n, double eps) {
  if (n == 0) throw ParameterError("mu: need at least one round");
  if (!(eps > 0.0 && eps < 1.0)) throw ParameterError("mu: eps must lie in (0,1)");
  return (expr.c_max() / inputs.q_min() + expr.quantum_max()) * std::sqrt(2.0 / static_cast<double>(n) * std::log(1.0 / eps));
}

/// n f(J_m - mu) - log2 m_max - log2(1/eps'), clamped at 0.
inline double certified_entropy(const BoundFunction& bound, std::size_t n, double threshold, double mu_value, std::size_t m_max,
                                double eps_prime) {
  const double k = static_cast<double>(n) * bound.f(threshold - mu_value) - std::log2(static_cast<double>(m_max)) -
                   std::log2(1.0 / eps_prime);
  return std::max(0.0, k);
}

struct CertificationResult {
  std::size_t n = 0;
  double bell_estimate = 0.0;
  std::size_t m = 0;
  std::size_t m_max = 0;
  double threshold = 0.0;  ///< J_m
  double mu = 0.0;
  double k = 0.0;
  bool abort = true;
  std::optional<bool> uncertifiable;  ///< set only when bin masses were estimated over many runs
  SecurityParams params;
};

inline CertificationResult certify(const BellExpression& expr, const InputDistribution& inputs, const BoundFunction& bound,
                                   const ThresholdLadder& ladder, const SecurityParams& params, std::span<const Round> transcript) {
  if (transcript.empty()) throw ContractViolation("certify: empty transcript");
  ladder.check_against(expr);
  params.validate();
  CertificationResult r;
  r.n = transcript.size();
  r.params = params;
  r.m_max = ladder.m_max();
  r.bell_estimate = estimator(expr, inputs, transcript);
  r.mu = mu(expr, inputs, r.n, params.eps);
  r.m = ladder.bin(r.bell_estimate);
  r.threshold = ladder.threshold(r.m);
  r.abort = r.m == 0;
  r.k = r.abort ? 0.0 : certified_entropy(bound, r.n, r.threshold, r.mu, r.m_max, params.eps_prime);
  return r;
}

/// Marks results whose bin was observed with frequency <= eps' across the batch.
inline void flag_uncertifiable(std::span<CertificationResult> runs) {
  if (runs.empty()) return;
  std::vector<std::size_t> counts(runs.front().m_max, 0);
  for (const auto& r : runs) ++counts.at(r.m);
  for (auto& r : runs)
    r.uncertifiable = static_cast<double>(counts[r.m]) / static_cast<double>(runs.size()) <= r.params.eps_prime;
}

inline void write_certification(std::ostream& out, const CertificationResult& r) {
  using detail::format_double;
  out << "n=" << r.n << '\n'
      << "bell_estimate=" << format_double(r.bell_estimate) << '\n'
      << "mu=" << format_double(r.mu) << '\n'
      << "m=" << r.m << '\n'
      << "m_max=" << r.m_max << '\n'
      << "threshold=" << format_double(r.threshold) << '\n'
      << "k=" << format_double(r.k) << '\n'
      << "abort=" << (r.abort ? 1 : 0) << '\n'
      << "eps=" << format_double(r.params.eps) << '\n'
      << "eps_prime=" << format_double(r.params.eps_prime) << '\n'
      << "eps_ext=" << format_double(r.params.eps_ext) << '\n'
      << "eps_inp=" << format_double(r.params.eps_inp) << '\n'
      << "eps_sec=" << format_double(r.params.eps_sec()) << '\n';
  if (r.uncertifiable) out << "uncertifiable=" << (*r.uncertifiable ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------
// Soundness oracles

inline constexpr double kOracleTolerance = 1e-12;

namespace detail {

inline std::size_t rounds_from_size(std::size_t size, std::size_t alphabet) {
  std::size_t n = 0, acc = 1;
  while (acc < size) {
    acc *= alphabet;
    ++n;
  }
  if (acc != size || n == 0) throw ShapeError("sequence axis size is not a power of the per-round alphabet");
  return n;
}

/// Splits sequence indices (round 1 most significant) into rounds.
inline void decode_rounds(const BellDims& d, std::size_t n, std::size_t x_index, std::size_t v_index, std::vector<Round>& out) {
  out.resize(n);
  for (std::size_t i = n; i-- > 0;) {
    const std::size_t xy = x_index % d.outcomes(), vw = v_index % d.inputs();
    x_index /= d.outcomes();
    v_index /= d.inputs();
    out[i] = {static_cast<std::uint8_t>(vw / d.w), static_cast<std::uint8_t>(vw % d.w), static_cast<std::uint8_t>(xy / d.y),
              static_cast<std::uint8_t>(xy % d.y)};
  }
}

inline double g_power(const BoundFunction& bound, double value, std::size_t n) {
  return std::pow(bound.g(value), static_cast<double>(n));
}

}  // namespace detail

struct Lemma1Report {
  std::size_t atoms = 0;       ///< (x, v) with P(v) > 0
  std::size_t members = 0;     ///< atoms in G_mu
  std::size_t violations = 0;  ///< members with P(x|v) > g(Ibar - mu)^n
  double min_slack = 1.0;      ///< min over members of g^n - P(x|v)
  std::string first_violation;

  bool passed() const noexcept { return violations == 0; }
};

/// Enumerates every (x, v); conditional expectations come from the automaton state along the path.
inline Lemma1Report lemma1_oracle(const AutomatonRules& rules, const InputDistribution& inputs, const BellExpression& expr,
                                  const BoundFunction& bound, std::size_t n, double mu_value) {
  if (n > 6) throw CapacityError("lemma1 oracle: at most 6 rounds");
  std::vector<double> state_value(rules.states());
  for (std::size_t s = 0; s < rules.states(); ++s) state_value[s] = bell_expectation(expr, rules.output(s));
  Lemma1Report rep;
  enumerate_transcripts(rules, inputs, n, [&](const TranscriptPath& path) {
    if (path.p_inputs <= 0.0) return;
    ++rep.atoms;
    double expected = 0.0;
    for (auto s : path.states) expected += state_value[s];
    expected /= static_cast<double>(n);
    const double ibar = estimator(expr, inputs, path.rounds);
    if (expected < ibar - mu_value - kOracleTolerance) return;
    ++rep.members;
    const double slack = detail::g_power(bound, ibar - mu_value, n) - path.p_outputs;
    rep.min_slack = std::min(rep.min_slack, slack);
    if (slack < -kOracleTolerance) {
      if (rep.violations++ == 0)
        rep.first_violation = "x=" + std::to_string(path.x_index) + " v=" + std::to_string(path.v_index) +
                              " P(x|v)=" + detail::format_double(path.p_outputs) +
                              " bound=" + detail::format_double(path.p_outputs + slack);
    }
  });
  return rep;
}

struct Lemma2Report {
  std::size_t trials = 0;
  std::size_t exceedances = 0;
  double eps = 0.0;
  double mu = 0.0;
  double frequency = 0.0;
  double sigma = 0.0;

  bool passed() const noexcept { return frequency <= eps + 3.0 * sigma; }
};

/// Frequency of (1/n) sum E(I_i | past) <= Ibar - mu over seeded trials.
inline Lemma2Report lemma2_montecarlo(const AutomatonRules& rules, const InputDistribution& inputs, const BellExpression& expr,
                                      std::size_t n, double eps, std::size_t trials, std::uint64_t seed, std::size_t jobs = 1) {
  if (trials == 0) throw ParameterError("lemma2: need at least one trial");
  Lemma2Report rep;
  rep.trials = trials;
  rep.eps = eps;
  rep.mu = mu(expr, inputs, n, eps);
  std::vector<double> state_value(rules.states());
  for (std::size_t s = 0; s < rules.states(); ++s) state_value[s] = bell_expectation(expr, rules.output(s));
  const auto d = rules.dims();
  std::vector<double> cum_inputs;
  {
    double acc = 0.0;
    for (double p : inputs.probs()) cum_inputs.push_back(acc += p);
  }
  std::atomic<std::size_t> exceed{0};
  detail::parallel_chunks(trials, jobs, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::size_t local = 0;
    for (std::size_t t = begin; t < end; ++t) {
      Rng rng = Rng::derive(seed, t);
      std::size_t state = 0;
      double expected = 0.0, observed = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform();
        std::size_t k = 0;
        while (k + 1 < cum_inputs.size() && u >= cum_inputs[k]) ++k;
        const std::size_t v = k / d.w, w = k % d.w;
        expected += state_value[state];
        auto [x, y] = detail::sample_slice(rules.output(state), v, w, rng);
        observed += expr.coefficient(x, y, v, w) / inputs(v, w);
        state = rules.next(state, v, w, x, y);
      }
      if (expected / static_cast<double>(n) <= observed / static_cast<double>(n) - rep.mu) ++local;
    }
    exceed += local;
  });
  rep.exceedances = exceed;
  rep.frequency = static_cast<double>(rep.exceedances) / static_cast<double>(trials);
  rep.sigma = std::sqrt(eps * (1.0 - eps) / static_cast<double>(trials));
  return rep;
}

struct BinEntropy {
  std::size_t m = 0;
  double mass = 0.0;   ///< Q(m)
  double h_min = 0.0;  ///< H_min(X | V E, m)_Q
  double bound = 0.0;  ///< n f(J_m - mu) - log2(1/Q(m))
  bool holds() const noexcept { return h_min >= bound - kOracleTolerance * std::max(1.0, std::abs(bound)); }
};

struct Lemma3Result {
  JointDistribution q;  ///< axes X (last label "⊥"), V, E
  std::size_t n = 0;
  double distance = 0.0;     ///< d(P, Q)
  double non_g_mass = 0.0;   ///< Pr_P[not G_mu]
  double min_slack = 1.0;    ///< min over x != ⊥ of g^n(Ibar - mu) - Q(x|v,e)
  std::vector<BinEntropy> bins;

  bool bound_holds() const noexcept { return min_slack >= -kOracleTolerance; }
  bool distance_matches() const noexcept { return std::abs(distance - non_g_mass) <= kOracleTolerance; }
  bool entropy_holds() const noexcept {
    return std::all_of(bins.begin(), bins.end(), [](const BinEntropy& b) { return b.holds(); });
  }
  bool passed() const noexcept { return bound_holds() && distance_matches() && entropy_holds(); }
};

inline constexpr const char* kAbortLabel = "⊥";

/// Builds the Q of the proof from an exact joint over X, V (and optionally E).
/// Conditional expectations E(I_i | x_<i, v_<i, e) are computed from the joint alone.
inline Lemma3Result lemma3_construct(const JointDistribution& p, const BellExpression& expr, const InputDistribution& inputs,
                                     const BoundFunction& bound, const ThresholdLadder& ladder, double mu_value) {
  const auto d = expr.dims();
  const auto& axes = p.axes();
  if (axes.size() < 2 || axes.size() > 3 || axes[0].name != "X" || axes[1].name != "V" || (axes.size() == 3 && axes[2].name != "E"))
    throw ShapeError("lemma3: joint must have axes X, V[, E]");
  const std::size_t nx = axes[0].size, nv = axes[1].size, ne = axes.size() == 3 ? axes[2].size : 1;
  const std::size_t n = detail::rounds_from_size(nx, d.outcomes());
  if (detail::rounds_from_size(nv, d.inputs()) != n) throw ShapeError("lemma3: X and V cover different numbers of rounds");
  const std::size_t A = d.outcomes(), B = d.inputs();

  std::vector<double> est(A * B);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b) est[a * B + b] = expr.coefficient(a / d.y, a % d.y, b / d.w, b % d.w) / inputs(b / d.w, b % d.w);

  // prefix[i][(xp * B^i + vp) * ne + e] = P(x_<=i, v_<=i, e)
  std::vector<std::vector<double>> prefix(n + 1);
  prefix[n].assign(p.probs().begin(), p.probs().end());
  for (std::size_t i = n; i-- > 0;) {
    const std::size_t ax = detail::ipow(A, i), bx = detail::ipow(B, i), bnext = bx * B;
    prefix[i].assign(ax * bx * ne, 0.0);
    for (std::size_t xp = 0; xp < ax; ++xp)
      for (std::size_t vp = 0; vp < bx; ++vp)
        for (std::size_t a = 0; a < A; ++a)
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t e = 0; e < ne; ++e)
              prefix[i][(xp * bx + vp) * ne + e] += prefix[i + 1][((xp * A + a) * bnext + vp * B + b) * ne + e];
  }
  // expect[i][(xp * B^i + vp) * ne + e] = E(I_{i+1} | x_<=i, v_<=i, e)
  std::vector<std::vector<double>> expect(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ax = detail::ipow(A, i), bx = detail::ipow(B, i), bnext = bx * B;
    expect[i].assign(ax * bx * ne, 0.0);
    for (std::size_t xp = 0; xp < ax; ++xp)
      for (std::size_t vp = 0; vp < bx; ++vp)
        for (std::size_t e = 0; e < ne; ++e) {
          const double base = prefix[i][(xp * bx + vp) * ne + e];
          if (base <= 0.0) continue;
          double s = 0.0;
          for (std::size_t a = 0; a < A; ++a)
            for (std::size_t b = 0; b < B; ++b) s += prefix[i + 1][((xp * A + a) * bnext + vp * B + b) * ne + e] * est[a * B + b];
          expect[i][(xp * bx + vp) * ne + e] = s / base;
        }
  }

  Lemma3Result res;
  res.n = n;
  std::vector<double> q((nx + 1) * nv * ne, 0.0);
  std::vector<double> pv_e(nv * ne, 0.0);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t v = 0; v < nv; ++v)
      for (std::size_t e = 0; e < ne; ++e) pv_e[v * ne + e] += p.probs()[(x * nv + v) * ne + e];

  std::vector<Round> rounds;
  std::vector<double> ibar_of(nx * nv);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t v = 0; v < nv; ++v) {
      detail::decode_rounds(d, n, x, v, rounds);
      ibar_of[x * nv + v] = estimator(expr, inputs, rounds);
    }

  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t v = 0; v < nv; ++v) {
      const double ibar = ibar_of[x * nv + v];
      for (std::size_t e = 0; e < ne; ++e) {
        const double pr = p.probs()[(x * nv + v) * ne + e];
        double expected = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t shift_x = detail::ipow(A, n - i), shift_v = detail::ipow(B, n - i);
          expected += expect[i][((x / shift_x) * detail::ipow(B, i) + v / shift_v) * ne + e];
        }
        expected /= static_cast<double>(n);
        const bool member = expected >= ibar - mu_value - kOracleTolerance;
        if (member) {
          q[(x * nv + v) * ne + e] = pr;
        } else {
          res.non_g_mass += pr;
        }
      }
    }
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t e = 0; e < ne; ++e) {
      double kept = 0.0;
      for (std::size_t x = 0; x < nx; ++x) kept += q[(x * nv + v) * ne + e];
      q[(nx * nv + v) * ne + e] = std::max(0.0, pv_e[v * ne + e] - kept);
    }
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t v = 0; v < nv; ++v)
      for (std::size_t e = 0; e < ne; ++e) {
        const double pve = pv_e[v * ne + e];
        if (pve <= 0.0) continue;
        const double slack = detail::g_power(bound, ibar_of[x * nv + v] - mu_value, n) - q[(x * nv + v) * ne + e] / pve;
        res.min_slack = std::min(res.min_slack, slack);
      }

  std::vector<double> p_ext((nx + 1) * nv * ne, 0.0);
  std::copy(p.probs().begin(), p.probs().end(), p_ext.begin());
  res.distance = trace_distance(p_ext, q);

  auto x_labels = axes[0].labels.empty() ? Distribution::index_alphabet(nx) : axes[0].labels;
  x_labels.push_back(kAbortLabel);
  std::vector<Axis> q_axes{Axis("X", std::move(x_labels)), axes[1], ne == 1 && axes.size() == 2 ? Axis("E", 1) : axes[2]};

  for (std::size_t m = 1; m < ladder.m_max(); ++m) {
    std::vector<double> cond(q.size(), 0.0);
    double mass = 0.0;
    for (std::size_t x = 0; x < nx; ++x)
      for (std::size_t v = 0; v < nv; ++v) {
        if (ladder.bin(ibar_of[x * nv + v]) != m) continue;
        for (std::size_t e = 0; e < ne; ++e) {
          const double val = q[(x * nv + v) * ne + e];
          cond[(x * nv + v) * ne + e] = val;
          mass += val;
        }
      }
    if (mass <= 0.0) continue;
    for (auto& c : cond) c /= mass;
    JointDistribution conditioned(q_axes, std::move(cond));
    BinEntropy b;
    b.m = m;
    b.mass = mass;
    b.h_min = min_entropy_avg(conditioned, std::vector<std::string>{"V", "E"});
    b.bound = static_cast<double>(n) * bound.f(ladder.threshold(m) - mu_value) - std::log2(1.0 / mass);
    res.bins.push_back(b);
  }
  res.q = JointDistribution(std::move(q_axes), std::move(q));
  return res;
}

// ---------------------------------------------------------------------------

struct BinOutcome {
  double mass = 0.0;   ///< P(m)
  double delta = 0.0;  ///< distance of the output from uniform given the public data, in bin m
};

struct SecurityAccount {
  double weighted = 0.0;        ///< sum_m P(m) delta_m
  double composed = 0.0;        ///< eps_inp + eps + eps' + eps_ext
  double small_bins = 0.0;      ///< contribution of bins with P(m) <= eps'/m_max
  bool split_holds = true;      ///< small_bins <= eps'
  bool holds() const noexcept { return weighted <= composed && split_holds; }
};

inline SecurityAccount security_account(const SecurityParams& params, std::span<const BinOutcome> bins, std::size_t m_max) {
  if (m_max == 0) throw ParameterError("security account: m_max must be positive");
  SecurityAccount acc;
  acc.composed = params.eps_sec();
  const double cut = params.eps_prime / static_cast<double>(m_max);
  for (const auto& b : bins) {
    if (b.mass < 0.0 || b.delta < 0.0 || b.delta > 1.0) throw ValidationError("security account: masses and distances must be non-negative, distances at most 1");
    const double term = b.mass * b.delta;
    acc.weighted += term;
    if (b.mass <= cut) acc.small_bins += term;
  }
  acc.split_holds = acc.small_bins <= params.eps_prime;
  return acc;
}

}  // namespace direx
