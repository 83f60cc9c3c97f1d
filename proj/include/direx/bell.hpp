#pragma once

// Bell expressions, the inverse-probability Bell estimator and randomness
// bounds g (max outcome probability) and f = -log2 g.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "direx/error.hpp"
#include "direx/prob.hpp"

namespace direx {

/// One use of the devices: inputs (v, w) and outputs (x, y).
struct Round {
  std::uint8_t v = 0, w = 0, x = 0, y = 0;
  friend bool operator==(const Round&, const Round&) = default;
};

class BellExpression {
 public:
  BellExpression(BellDims dims, std::vector<double> coefficients, double local_bound, double quantum_max)
      : dims_(dims), c_(std::move(coefficients)), local_bound_(local_bound), quantum_max_(quantum_max) {
    if (c_.size() != dims_.size()) throw ShapeError("bell expression: coefficient table does not match alphabets");
    for (double c : c_) {
      if (!std::isfinite(c)) throw ValidationError("bell expression: non-finite coefficient");
      c_max_ = std::max(c_max_, std::abs(c));
    }
    if (!(local_bound_ < quantum_max_)) throw ValidationError("bell expression: local bound must be below the quantum maximum");
  }

  /// CHSH in probability form: c_xyvw = (-1)^(x xor y xor v.w).
  static BellExpression chsh() {
    BellDims d{};
    std::vector<double> c(d.size());
    ConditionalTable layout = ConditionalTable::uniform(d);
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t w = 0; w < 2; ++w)
        for (std::size_t x = 0; x < 2; ++x)
          for (std::size_t y = 0; y < 2; ++y) c[layout.index(x, y, v, w)] = ((x ^ y ^ (v & w)) != 0) ? -1.0 : 1.0;
    return BellExpression(d, std::move(c), 2.0, 2.0 * std::numbers::sqrt2);
  }

  const BellDims& dims() const noexcept { return dims_; }
  double local_bound() const noexcept { return local_bound_; }
  double quantum_max() const noexcept { return quantum_max_; }
  double c_max() const noexcept { return c_max_; }
  std::span<const double> coefficients() const noexcept { return c_; }

  double coefficient(std::size_t x, std::size_t y, std::size_t v, std::size_t w) const {
    return c_[((v * dims_.w + w) * dims_.x + x) * dims_.y + y];
  }

 private:
  BellDims dims_;
  std::vector<double> c_;
  double local_bound_;
  double quantum_max_;
  double c_max_ = 0.0;
};

/// I[P] = sum c_xyvw P(xy|vw).
inline double bell_expectation(const BellExpression& expr, const ConditionalTable& p) {
  if (!(expr.dims() == p.dims())) throw ShapeError("bell expectation: alphabets differ");
  double s = 0.0;
  auto c = expr.coefficients();
  auto q = p.probs();
  for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * q[i];
  return s;
}

/// Distribution p_vw of the input pair in every round.
class InputDistribution {
 public:
  InputDistribution(std::size_t nv, std::size_t nw, std::vector<double> p_vw) : nv_(nv), nw_(nw), p_(std::move(p_vw)) {
    if (p_.size() != nv_ * nw_) throw ShapeError("input distribution: table does not match alphabets");
    detail::check_probabilities(p_, "input distribution");
    q_min_ = *std::min_element(p_.begin(), p_.end());
    if (!(q_min_ > 0.0)) throw ValidationError("input distribution: every input pair needs positive probability");
  }

  static InputDistribution uniform(std::size_t nv = 2, std::size_t nw = 2) {
    return InputDistribution(nv, nw, std::vector<double>(nv * nw, 1.0 / static_cast<double>(nv * nw)));
  }

  /// Pair (0,0) with probability 1 - (k-1) q, every other pair q.
  static InputDistribution biased(double q, std::size_t nv = 2, std::size_t nw = 2) {
    const std::size_t k = nv * nw;
    std::vector<double> p(k, q);
    p[0] = 1.0 - static_cast<double>(k - 1) * q;
    return InputDistribution(nv, nw, std::move(p));
  }

  std::size_t nv() const noexcept { return nv_; }
  std::size_t nw() const noexcept { return nw_; }
  double q_min() const noexcept { return q_min_; }
  double operator()(std::size_t v, std::size_t w) const { return p_[v * nw_ + w]; }
  std::span<const double> probs() const noexcept { return p_; }

  /// Flattened over pairs, label "vw".
  Distribution as_distribution() const {
    std::vector<std::string> labels;
    for (std::size_t v = 0; v < nv_; ++v)
      for (std::size_t w = 0; w < nw_; ++w) labels.push_back(std::to_string(v) + std::to_string(w));
    return Distribution(std::move(labels), p_);
  }

 private:
  std::size_t nv_, nw_;
  std::vector<double> p_;
  double q_min_ = 0.0;
};

/// Contribution c_xyvw / p_vw of a single round to the estimator.
inline double round_estimate(const BellExpression& expr, const InputDistribution& inputs, const Round& r) {
  const auto& d = expr.dims();
  if (r.v >= d.v || r.w >= d.w || r.x >= d.x || r.y >= d.y || inputs.nv() != d.v || inputs.nw() != d.w)
    throw ContractViolation("round estimate: symbol outside the declared alphabets");
  const double p = inputs(r.v, r.w);
  if (!(p > 0.0)) throw ContractViolation("round estimate: input pair has zero probability");
  return expr.coefficient(r.x, r.y, r.v, r.w) / p;
}

/// Bell estimator: mean of the per-round contributions.
inline double estimator(const BellExpression& expr, const InputDistribution& inputs, std::span<const Round> rounds) {
  if (rounds.empty()) throw ContractViolation("estimator: empty transcript");
  double s = 0.0;
  for (const auto& r : rounds) s += round_estimate(expr, inputs, r);
  return s / static_cast<double>(rounds.size());
}

// ---------------------------------------------------------------------------

/// Randomness bound g(I) >= max_xy P(xy|vw) for every behaviour with Bell value I.
///
/// g is 1 at or below the local bound and frozen at g(I_q) above the quantum
/// maximum, which keeps it non-increasing and concave on the whole line.
class BoundFunction {
 public:
  enum class Kind { AnalyticChsh, Tabulated };

  static BoundFunction chsh() {
    BoundFunction b;
    b.kind_ = Kind::AnalyticChsh;
    b.lower_ = 2.0;
    b.upper_ = 2.0 * std::numbers::sqrt2;
    b.floor_ = 0.25;
    return b;
  }

  /// Knots (I, g) ascending in I; replaced by their upper concave hull.
  static BoundFunction tabulated(std::vector<std::pair<double, double>> knots, double floor_value = 0.25) {
    if (knots.size() < 2) throw ValidationError("bound table: need at least two knots");
    for (std::size_t i = 0; i < knots.size(); ++i) {
      const auto [x, g] = knots[i];
      if (!std::isfinite(x) || !std::isfinite(g)) throw ValidationError("bound table: non-finite knot");
      if (g > 1.0 + 1e-12 || g < floor_value - 1e-12)
        throw ValidationError("bound table: g outside [1/|X|^2, 1] at knot " + std::to_string(i));
      if (i > 0 && !(x > knots[i - 1].first)) throw ValidationError("bound table: I must be strictly ascending");
      if (i > 0 && g > knots[i - 1].second + 1e-15)
        throw ValidationError("bound table: g must be non-increasing (knot " + std::to_string(i) + ")");
    }
    BoundFunction b;
    b.kind_ = Kind::Tabulated;
    b.floor_ = floor_value;
    b.knots_ = upper_concave_hull(knots);
    b.lower_ = b.knots_.front().first;
    b.upper_ = b.knots_.back().first;
    return b;
  }

  Kind kind() const noexcept { return kind_; }
  double local_bound() const noexcept { return lower_; }
  double quantum_max() const noexcept { return upper_; }
  double floor_value() const noexcept { return floor_; }
  const std::vector<std::pair<double, double>>& knots() const noexcept { return knots_; }

  double g(double bell_value) const {
    if (std::isnan(bell_value)) throw ParameterError("bound: NaN Bell value");
    if (bell_value <= lower_) return 1.0;
    const double i = std::min(bell_value, upper_);
    if (kind_ == Kind::AnalyticChsh) {
      const double root = std::sqrt(std::max(0.0, 2.0 - i * i / 4.0));
      return std::clamp(0.5 + 0.5 * root, 0.5, 1.0);
    }
    auto it = std::upper_bound(knots_.begin(), knots_.end(), i,
                               [](double value, const auto& knot) { return value < knot.first; });
    if (it == knots_.end()) return knots_.back().second;
    if (it == knots_.begin()) return knots_.front().second;
    const auto& [x1, g1] = *it;
    const auto& [x0, g0] = *(it - 1);
    return g0 + (g1 - g0) * (i - x0) / (x1 - x0);
  }

  double f(double bell_value) const { return std::max(0.0, -std::log2(g(bell_value))); }

 private:
  static std::vector<std::pair<double, double>> upper_concave_hull(const std::vector<std::pair<double, double>>& pts) {
    std::vector<std::pair<double, double>> hull;
    for (const auto& p : pts) {
      while (hull.size() >= 2) {
        const auto& a = hull[hull.size() - 2];
        const auto& b = hull.back();
        // drop b when it lies on or below segment a-p
        const double cross = (b.first - a.first) * (p.second - a.second) - (b.second - a.second) * (p.first - a.first);
        if (cross >= 0.0)
          hull.pop_back();
        else
          break;
      }
      hull.push_back(p);
    }
    return hull;
  }

  Kind kind_ = Kind::AnalyticChsh;
  double lower_ = 2.0;
  double upper_ = 2.0 * std::numbers::sqrt2;
  double floor_ = 0.25;
  std::vector<std::pair<double, double>> knots_;
};

inline double g_eval(const BoundFunction& b, double bell_value) { return b.g(bell_value); }
inline double f_eval(const BoundFunction& b, double bell_value) { return b.f(bell_value); }

struct BoundFamilyMember {
  std::string name;
  ConditionalTable table;
  double bell_value = 0.0;
};

struct BoundReport {
  std::size_t members = 0;
  double min_slack = 1.0;  ///< smallest g(I) - max P(xy|vw) over the family
  double max_slack = 0.0;
};

/// Empirical soundness check of a bound on behaviours with known Bell values.
inline BoundReport validate_bound(const BoundFunction& bound, std::span<const BoundFamilyMember> family,
                                  double tolerance = 1e-12) {
  BoundReport report;
  for (const auto& m : family) {
    if (m.bell_value > bound.quantum_max() + 1e-9)
      throw BoundInvalid("bound: member '" + m.name + "' claims Bell value " + detail::format_double(m.bell_value) +
                         " above the quantum maximum (out of domain)");
    const double g = bound.g(m.bell_value);
    const auto& d = m.table.dims();
    for (std::size_t v = 0; v < d.v; ++v)
      for (std::size_t w = 0; w < d.w; ++w) {
        const double slack = g - m.table.max_prob(v, w);
        if (slack < -tolerance)
          throw BoundInvalid("bound: member '" + m.name + "' has max P(xy|" + std::to_string(v) + std::to_string(w) +
                             ") above g(I) by " + detail::format_double(-slack));
        report.min_slack = std::min(report.min_slack, slack);
        report.max_slack = std::max(report.max_slack, slack);
      }
    ++report.members;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Text formats

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ls(line);
  std::vector<std::string> out;
  std::string tok;
  while (ls >> tok) out.push_back(tok);
  return out;
}

inline std::string strip_comment(std::string line) {
  if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
  return line;
}

inline std::size_t parse_size(const std::string& text, int line) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ParseError("expected a non-negative integer, got '" + text + "'", line);
  return value;
}

}  // namespace detail

/// Lines "I g", ascending in I; '#' starts a comment.
inline BoundFunction read_bound_table(std::istream& in, double floor_value = 0.25) {
  std::vector<std::pair<double, double>> knots;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    if (tok.size() != 2) throw ParseError("expected 'I g'", lineno);
    knots.emplace_back(detail::parse_double(tok[0], lineno), detail::parse_double(tok[1], lineno));
  }
  return BoundFunction::tabulated(std::move(knots), floor_value);
}

/// Header "alphabets: X Y V W", "local_bound: J0", "quantum_max: Iq", then lines "x y v w c".
inline BellExpression read_bell_expression(std::istream& in) {
  std::optional<BellDims> dims;
  std::optional<double> j0, iq;
  std::vector<std::array<std::size_t, 4>> at;
  std::vector<double> values;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    if (tok[0] == "alphabets:") {
      if (tok.size() != 5) throw ParseError("alphabets: needs four sizes", lineno);
      dims = BellDims{detail::parse_size(tok[1], lineno), detail::parse_size(tok[2], lineno),
                      detail::parse_size(tok[3], lineno), detail::parse_size(tok[4], lineno)};
    } else if (tok[0] == "local_bound:" && tok.size() == 2) {
      j0 = detail::parse_double(tok[1], lineno);
    } else if (tok[0] == "quantum_max:" && tok.size() == 2) {
      iq = detail::parse_double(tok[1], lineno);
    } else if (tok.size() == 5) {
      at.push_back({detail::parse_size(tok[0], lineno), detail::parse_size(tok[1], lineno),
                    detail::parse_size(tok[2], lineno), detail::parse_size(tok[3], lineno)});
      values.push_back(detail::parse_double(tok[4], lineno));
    } else {
      throw ParseError("unrecognised line", lineno);
    }
  }
  if (!dims) throw ParseError("missing 'alphabets:' header");
  if (!j0 || !iq) throw ParseError("missing 'local_bound:' or 'quantum_max:'");
  std::vector<double> c(dims->size(), 0.0);
  for (std::size_t i = 0; i < at.size(); ++i) {
    const auto [x, y, v, w] = at[i];
    if (x >= dims->x || y >= dims->y || v >= dims->v || w >= dims->w)
      throw ShapeError("bell expression: coefficient index outside the alphabets");
    c[((v * dims->w + w) * dims->x + x) * dims->y + y] = values[i];
  }
  return BellExpression(*dims, std::move(c), *j0, *iq);
}

inline void write_bell_expression(std::ostream& out, const BellExpression& e) {
  const auto& d = e.dims();
  out << "alphabets: " << d.x << ' ' << d.y << ' ' << d.v << ' ' << d.w << '\n';
  out << "local_bound: " << detail::format_double(e.local_bound()) << '\n';
  out << "quantum_max: " << detail::format_double(e.quantum_max()) << '\n';
  for (std::size_t x = 0; x < d.x; ++x)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t v = 0; v < d.v; ++v)
        for (std::size_t w = 0; w < d.w; ++w)
          out << x << ' ' << y << ' ' << v << ' ' << w << ' ' << detail::format_double(e.coefficient(x, y, v, w)) << '\n';
}

}  // namespace direx
