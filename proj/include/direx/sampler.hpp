#pragma once

// Generating non-uniform i.i.d. symbols from uniform bits.
//
// interval_sample is the single-shot construction: truncate every probability
// to m binary digits, lay the truncated masses out on [0,1) and read off the
// interval that contains the seed; the leftover goes to the abort symbol.
// SequenceSampler applies the same truncation per symbol while reading seed
// bits lazily, like an arithmetic decoder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <boost/rational.hpp>

#include "direx/error.hpp"
#include "direx/extractor.hpp"
#include "direx/parallel.hpp"
#include "direx/prob.hpp"
#include "direx/rng.hpp"

namespace direx {

// ---------------------------------------------------------------------------
// Single-shot interval sampling

namespace detail {

inline std::uint64_t dyadic_floor(double p, unsigned m) { return static_cast<std::uint64_t>(std::floor(std::ldexp(p, static_cast<int>(m)))); }

template <class I>
std::uint64_t dyadic_floor(const boost::rational<I>& p, unsigned m) {
  return static_cast<std::uint64_t>((p.numerator() * (I{1} << m)) / p.denominator());
}

}  // namespace detail

/// floor(P(z) 2^m) for every outcome: the truncated masses in units of 2^-m.
template <class T>
std::vector<std::uint64_t> truncated_widths(std::span<const T> p, unsigned m) {
  if (m == 0 || m > 62) throw ParameterError("interval sample: need 1 <= m <= 62 bits");
  std::vector<std::uint64_t> w(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) w[i] = detail::dyadic_floor(p[i], m);
  return w;
}

/// Outcome whose interval contains the m-bit seed x / 2^m; nullopt is the abort symbol.
template <class T>
std::optional<std::size_t> interval_sample(std::span<const T> p, std::uint64_t x, unsigned m) {
  const auto w = truncated_widths(p, m);
  if (m < 64 && x >> m) throw ParameterError("interval sample: seed has more than m bits");
  std::uint64_t cum = 0;
  for (std::size_t z = 0; z < w.size(); ++z) {
    if (x < cum + w[z]) return z;
    cum += w[z];
  }
  return std::nullopt;
}

/// Induced distribution P' over the alphabet followed by the abort symbol.
template <class T>
std::vector<T> truncated_distribution(std::span<const T> p, unsigned m) {
  const auto w = truncated_widths(p, m);
  std::vector<T> out;
  T used = T(0);
  const T unit = T(1) / T(static_cast<std::int64_t>(std::uint64_t{1} << m));
  for (auto wi : w) {
    out.push_back(T(static_cast<std::int64_t>(wi)) * unit);
    used += out.back();
  }
  out.push_back(T(1) - used);
  return out;
}

// ---------------------------------------------------------------------------
// Streaming sampler

struct SampleOutcome {
  std::optional<std::vector<std::uint32_t>> symbols;  ///< nullopt: abort
  std::size_t bits_used = 0;
  double loss_bound = 0.0;  ///< sum over symbols of |K| / R_i, the truncation mass at risk along the path
};

class SequenceSampler {
 public:
  static constexpr std::uint64_t kRefill = std::uint64_t{1} << 61;

  explicit SequenceSampler(std::vector<double> q) : q_(std::move(q)) {
    if (q_.empty()) throw ShapeError("sampler: empty alphabet");
    detail::check_probabilities(q_, "sampler distribution");
    for (double p : q_) {
      int e = 0;
      const double frac = std::frexp(p, &e);  // p = frac 2^e, frac in [0.5, 1)
      mant_.push_back(static_cast<std::uint64_t>(std::ldexp(frac, 53)));
      shift_.push_back(53 - e);
    }
  }
  explicit SequenceSampler(const Distribution& q) : SequenceSampler(std::vector<double>(q.probs().begin(), q.probs().end())) {}

  std::size_t alphabet() const noexcept { return q_.size(); }
  std::span<const double> probs() const noexcept { return q_; }

  /// One refinement step: the symbol whose sub-interval of [0, r) holds off, and that sub-interval.
  /// Widths are floor(r q_a), clipped so they never exceed r; a miss (nullopt) is the abort symbol.
  struct Step {
    std::uint32_t symbol;
    std::uint64_t start, width;
  };
  std::optional<Step> step(std::uint64_t r, std::uint64_t off) const {
    std::uint64_t cum = 0;
    for (std::size_t a = 0; a < q_.size(); ++a) {
      std::uint64_t w = width(r, a);
      if (w > r - cum) w = r - cum;
      if (off < cum + w) return Step{static_cast<std::uint32_t>(a), cum, w};
      cum += w;
    }
    return std::nullopt;
  }

  std::uint64_t width(std::uint64_t r, std::size_t a) const {
    const int s = shift_[a];
    if (s >= 128) return 0;
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(r) * mant_[a]) >> s);
  }

  /// Decodes n symbols from seed bits [offset, end).
  SampleOutcome sample(const BitVector& seed, std::size_t n, std::size_t offset = 0) const {
    SampleOutcome out;
    std::vector<std::uint32_t> symbols;
    symbols.reserve(n);
    std::uint64_t r = 1, off = 0;
    std::size_t cursor = offset;
    for (std::size_t i = 0; i < n; ++i) {
      while (r < kRefill && cursor < seed.size()) {
        r <<= 1;
        off = (off << 1) | static_cast<std::uint64_t>(seed.get(cursor++));
      }
      out.loss_bound += static_cast<double>(q_.size()) / static_cast<double>(r);
      const auto st = step(r, off);
      if (!st) {
        out.bits_used = cursor - offset;
        return out;
      }
      symbols.push_back(st->symbol);
      off -= st->start;
      r = st->width;
    }
    out.bits_used = cursor - offset;
    out.symbols = std::move(symbols);
    return out;
  }

  /// Same decoding for an m-bit integer seed (m <= 61, so every bit is read before the first symbol).
  /// Returns the sequence index with round 1 most significant, or nullopt for abort.
  std::optional<std::size_t> sample_index(std::uint64_t seed, unsigned m, std::size_t n) const {
    if (m == 0 || m > 61) throw ParameterError("sampler: integer seeds need 1 <= m <= 61");
    std::uint64_t r = std::uint64_t{1} << m, off = seed;
    std::size_t index = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto st = step(r, off);
      if (!st) return std::nullopt;
      index = index * q_.size() + st->symbol;
      off -= st->start;
      r = st->width;
    }
    return index;
  }

  /// Exact induced probabilities of every sequence (round 1 most significant) for an m-bit seed, m <= 61.
  std::vector<double> induced_distribution(std::size_t n, unsigned m) const {
    if (m == 0 || m > 61) throw ParameterError("sampler: reference layout needs 1 <= m <= 61");
    const std::size_t k = q_.size();
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= k;
    std::vector<double> out(total, 0.0);
    auto recurse = [&](auto&& self, std::size_t depth, std::size_t index, std::uint64_t r) -> void {
      if (depth == n) {
        out[index] = std::ldexp(static_cast<double>(r), -static_cast<int>(m));
        return;
      }
      std::uint64_t cum = 0;
      for (std::size_t a = 0; a < k; ++a) {
        std::uint64_t w = std::min(width(r, a), r - cum);
        cum += w;
        if (w > 0) self(self, depth + 1, index * k + a, w);
      }
    };
    recurse(recurse, 0, 0, std::uint64_t{1} << m);
    return out;
  }

 private:
  std::vector<double> q_;
  std::vector<std::uint64_t> mant_;
  std::vector<int> shift_;
};

/// H(Q) bits per symbol plus a Hoeffding margin on -log2 Q^n(z), plus 64 bits of headroom.
inline std::size_t seed_budget(std::span<const double> q, std::size_t n, double eps_inp) {
  if (!(eps_inp > 0.0 && eps_inp < 1.0)) throw ParameterError("seed budget: eps_inp must lie in (0,1)");
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (double p : q) {
    if (p <= 0.0) continue;
    const double s = -std::log2(p);
    lo = first ? s : std::min(lo, s);
    hi = first ? s : std::max(hi, s);
    first = false;
  }
  const double nn = static_cast<double>(n);
  const double margin = (hi - lo) * std::sqrt(nn * std::log(2.0 / eps_inp) / 2.0);
  return static_cast<std::size_t>(std::ceil(nn * shannon_entropy(q) + margin)) + 64;
}

/// Probability that a budget from seed_budget ends in the abort symbol.
inline double seed_budget_failure(std::span<const double> q, std::size_t n, double eps_inp) {
  return eps_inp / 2.0 + static_cast<double>(n * q.size()) * 0x1p-60;
}

// ---------------------------------------------------------------------------
// Typical sets

struct TypicalSet {
  std::vector<double> q;
  std::size_t n = 0;
  double alpha = 0.0;

  /// |N(a) - n Q(a)| <= alpha sqrt(n) sqrt(Q(a)) for every symbol.
  bool contains_counts(std::span<const std::size_t> counts) const {
    if (counts.size() != q.size()) throw ShapeError("typical set: one count per symbol");
    const double rn = std::sqrt(static_cast<double>(n));
    for (std::size_t a = 0; a < q.size(); ++a) {
      const double dev = std::abs(static_cast<double>(counts[a]) - static_cast<double>(n) * q[a]);
      if (dev > alpha * rn * std::sqrt(q[a]) + 1e-12) return false;
    }
    return true;
  }

  bool contains(std::span<const std::uint32_t> sequence) const {
    if (sequence.size() != n) throw ShapeError("typical set: sequence length differs from n");
    std::vector<std::size_t> counts(q.size(), 0);
    for (auto s : sequence) ++counts.at(s);
    return contains_counts(counts);
  }
};

struct TypicalStats {
  double mass = 0.0;       ///< Q^n(T)
  double size = 0.0;       ///< |T|
  bool exact = true;       ///< false when mass was sampled
  double mass_bound = 0.0; ///< 1 - 2|K| exp(-2 alpha^2 min Q)
  double size_log2_bound = 0.0;  ///< n H(Q) + 2 (log2 e / e) |K| alpha sqrt(n)

  bool mass_bound_holds() const noexcept { return mass_bound <= 0.0 || mass >= mass_bound; }
  bool size_bound_holds() const noexcept { return size <= std::exp2(size_log2_bound); }
};

inline double typical_mass_bound(std::span<const double> q, double alpha) {
  const double qmin = *std::min_element(q.begin(), q.end());
  return 1.0 - 2.0 * static_cast<double>(q.size()) * std::exp(-2.0 * alpha * alpha * qmin);
}

inline double typical_size_log2_bound(std::span<const double> q, std::size_t n, double alpha) {
  return static_cast<double>(n) * shannon_entropy(q) +
         2.0 * (std::numbers::log2e / std::numbers::e) * static_cast<double>(q.size()) * alpha * std::sqrt(static_cast<double>(n));
}

inline constexpr std::size_t kMaxTypes = std::size_t{1} << 22;

namespace detail {

inline double binomial_types(std::size_t n, std::size_t k) {
  // C(n + k - 1, k - 1)
  double c = 1.0;
  for (std::size_t i = 1; i < k; ++i) c = c * static_cast<double>(n + i) / static_cast<double>(i);
  return c;
}

template <class Visit>
void for_each_type(std::size_t n, std::size_t k, Visit&& visit) {
  std::vector<std::size_t> counts(k, 0);
  auto rec = [&](auto&& self, std::size_t a, std::size_t left) -> void {
    if (a + 1 == k) {
      counts[a] = left;
      visit(std::span<const std::size_t>(counts));
      return;
    }
    for (std::size_t c = 0; c <= left; ++c) {
      counts[a] = c;
      self(self, a + 1, left - c);
    }
  };
  rec(rec, 0, n);
}

inline double log_multinomial(std::size_t n, std::span<const std::size_t> counts) {
  double l = std::lgamma(static_cast<double>(n) + 1.0);
  for (auto c : counts) l -= std::lgamma(static_cast<double>(c) + 1.0);
  return l;
}

}  // namespace detail

/// Mass and size of the typical set: exact by type enumeration when feasible, else mass by Monte Carlo.
inline TypicalStats typical_stats(const TypicalSet& t, std::uint64_t seed = 0, std::size_t samples = 100000) {
  TypicalStats s;
  s.mass_bound = typical_mass_bound(t.q, t.alpha);
  s.size_log2_bound = typical_size_log2_bound(t.q, t.n, t.alpha);
  if (detail::binomial_types(t.n, t.q.size()) <= static_cast<double>(kMaxTypes)) {
    detail::for_each_type(t.n, t.q.size(), [&](std::span<const std::size_t> counts) {
      if (!t.contains_counts(counts)) return;
      const double lm = detail::log_multinomial(t.n, counts);
      double lp = 0.0;
      bool possible = true;
      for (std::size_t a = 0; a < counts.size(); ++a) {
        if (counts[a] == 0) continue;
        if (t.q[a] <= 0.0) possible = false;
        else lp += static_cast<double>(counts[a]) * std::log(t.q[a]);
      }
      s.size += lm < 36.0 ? std::round(std::exp(lm)) : std::exp(lm);
      if (possible) s.mass += std::exp(lm + lp);
    });
    return s;
  }
  s.exact = false;
  s.size = std::nan("");
  Rng rng(seed);
  std::vector<double> cum;
  double acc = 0.0;
  for (double p : t.q) cum.push_back(acc += p);
  std::size_t hits = 0;
  std::vector<std::size_t> counts(t.q.size());
  for (std::size_t i = 0; i < samples; ++i) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t j = 0; j < t.n; ++j) {
      const double u = rng.uniform();
      std::size_t a = 0;
      while (a + 1 < cum.size() && u >= cum[a]) ++a;
      ++counts[a];
    }
    if (t.contains_counts(counts)) ++hits;
  }
  s.mass = static_cast<double>(hits) / static_cast<double>(samples);
  return s;
}

// ---------------------------------------------------------------------------
// Composite sampling error at small n

struct SamplerRegime {
  double gamma = 0.0;  ///< min Q = n^-gamma
  double alpha = 0.0;  ///< n^{1/2 - gamma}
  unsigned m = 0;      ///< seed bits: size bound of the typical set plus log2(1/eps) for the truncation step
  double error_bound = 0.0;  ///< 3 exp(-2 n^{1 - 3 gamma})
};

inline SamplerRegime sampler_regime(std::span<const double> q, std::size_t n) {
  if (n < 2) throw ParameterError("sampler regime: need n >= 2");
  const double qmin = *std::min_element(q.begin(), q.end());
  const double nn = static_cast<double>(n);
  SamplerRegime r;
  r.gamma = -std::log(qmin) / std::log(nn);
  if (!(r.gamma < 1.0 / 3.0)) throw ParameterError("sampler regime: min Q too small for gamma < 1/3");
  r.alpha = std::pow(nn, 0.5 - r.gamma);
  const double tail = std::exp(-2.0 * std::pow(nn, 1.0 - 3.0 * r.gamma));
  r.error_bound = 3.0 * tail;
  r.m = static_cast<unsigned>(std::ceil(typical_size_log2_bound(q, n, r.alpha) + std::log2(1.0 / tail)));
  return r;
}

/// Trace distance between the sampler output (abort included) and Q^n, by running the sampler on every m-bit seed.
inline double sampler_distance_by_enumeration(const SequenceSampler& sampler, std::size_t n, unsigned m, std::size_t jobs = 1) {
  if (m > 30) throw CapacityError("sampler enumeration: at most 30 seed bits");
  const std::size_t k = sampler.alphabet();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= k;
  const std::size_t seeds = std::size_t{1} << m;
  const std::size_t workers = std::min(detail::resolve_jobs(jobs), seeds);
  std::vector<std::vector<std::uint64_t>> counts(workers, std::vector<std::uint64_t>(total + 1, 0));
  detail::parallel_chunks(seeds, workers, [&](std::size_t w, std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const auto idx = sampler.sample_index(s, m, n);
      ++counts[w][idx ? *idx : total];
    }
  });
  std::vector<std::uint64_t> merged(total + 1, 0);
  for (const auto& c : counts)
    for (std::size_t i = 0; i <= total; ++i) merged[i] += c[i];
  double d = std::ldexp(static_cast<double>(merged[total]), -static_cast<int>(m));
  for (std::size_t idx = 0; idx < total; ++idx) {
    double p = 1.0;
    std::size_t rem = idx;
    for (std::size_t i = 0; i < n; ++i) {
      p *= sampler.probs()[rem % k];
      rem /= k;
    }
    d += std::abs(std::ldexp(static_cast<double>(merged[idx]), -static_cast<int>(m)) - p);
  }
  return 0.5 * d;
}

// ---------------------------------------------------------------------------
// Seed accounting

struct EntropyCost {
  std::size_t rounds = 0;
  double input_entropy = 0.0;        ///< n H(p_vw)
  std::size_t input_seed_bits = 0;   ///< bits reserved (or consumed) for the inputs
  std::size_t raw_bits = 0;          ///< extractor input length
  std::size_t output_bits = 0;       ///< m_out
  std::size_t extractor_seed_bits = 0;
  double net_expansion = 0.0;            ///< m_out - input seed - extractor seed
  double net_excluding_public_seed = 0.0;  ///< m_out - input seed
};

inline EntropyCost entropy_cost(std::span<const double> p_vw, std::size_t n, std::size_t raw_bits, std::size_t output_bits,
                                std::size_t input_seed_bits) {
  EntropyCost c;
  c.rounds = n;
  c.input_entropy = static_cast<double>(n) * shannon_entropy(p_vw);
  c.input_seed_bits = input_seed_bits;
  c.raw_bits = raw_bits;
  c.output_bits = output_bits;
  c.extractor_seed_bits = output_bits == 0 ? 0 : raw_bits + output_bits - 1;
  c.net_excluding_public_seed = static_cast<double>(output_bits) - static_cast<double>(input_seed_bits);
  c.net_expansion = c.net_excluding_public_seed - static_cast<double>(c.extractor_seed_bits);
  return c;
}

}  // namespace direx
