#pragma once

// Finite probability tables, distances and entropy measures.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <initializer_list>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "direx/error.hpp"

namespace direx {

inline constexpr double kNormTolerance = 1e-9;

namespace detail {

inline void check_probabilities(std::span<const double> probs, std::string_view what) {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw ValidationError(std::string(what) + ": negative or non-finite probability");
    total += p;
  }
  if (std::abs(total - 1.0) > kNormTolerance)
    throw ValidationError(std::string(what) + ": probabilities sum to " + std::to_string(total));
}

inline std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

inline double parse_double(std::string_view text, int line) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ParseError("expected a number, got '" + std::string(text) + "'", line);
  return value;
}

}  // namespace detail

/// Distribution over a finite ordered alphabet.
class Distribution {
 public:
  Distribution() = default;

  Distribution(std::vector<std::string> alphabet, std::vector<double> probs)
      : alphabet_(std::move(alphabet)), probs_(std::move(probs)) {
    if (alphabet_.size() != probs_.size())
      throw ShapeError("distribution: alphabet and probability counts differ");
    if (alphabet_.empty()) throw ShapeError("distribution: empty alphabet");
    detail::check_probabilities(probs_, "distribution");
  }

  /// Alphabet "0", "1", ..., "k-1".
  explicit Distribution(std::vector<double> probs) : alphabet_(index_alphabet(probs.size())), probs_(std::move(probs)) {
    if (probs_.empty()) throw ShapeError("distribution: empty alphabet");
    detail::check_probabilities(probs_, "distribution");
  }

  static Distribution uniform(std::size_t k) { return Distribution(std::vector<double>(k, 1.0 / static_cast<double>(k))); }

  static Distribution point_mass(std::size_t k, std::size_t at) {
    std::vector<double> p(k, 0.0);
    p.at(at) = 1.0;
    return Distribution(std::move(p));
  }

  static std::vector<std::string> index_alphabet(std::size_t k) {
    std::vector<std::string> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(std::to_string(i));
    return out;
  }

  std::size_t size() const noexcept { return probs_.size(); }
  const std::vector<std::string>& alphabet() const noexcept { return alphabet_; }
  std::span<const double> probs() const noexcept { return probs_; }
  double operator[](std::size_t i) const { return probs_[i]; }

  double max_prob() const { return *std::max_element(probs_.begin(), probs_.end()); }
  double min_prob() const { return *std::min_element(probs_.begin(), probs_.end()); }

  bool same_alphabet(const Distribution& other) const { return alphabet_ == other.alphabet_; }

 private:
  std::vector<std::string> alphabet_;
  std::vector<double> probs_;
};

/// A named finite alphabet. Labels may be omitted for large index-only axes.
struct Axis {
  std::string name;
  std::size_t size = 0;
  std::vector<std::string> labels;

  Axis() = default;
  Axis(std::string n, std::size_t k) : name(std::move(n)), size(k) {}
  Axis(std::string n, std::vector<std::string> l) : name(std::move(n)), size(l.size()), labels(std::move(l)) {}

  std::string label(std::size_t i) const { return labels.empty() ? std::to_string(i) : labels.at(i); }

  friend bool operator==(const Axis& a, const Axis& b) {
    if (a.name != b.name || a.size != b.size) return false;
    if (a.labels.empty() || b.labels.empty()) return true;
    return a.labels == b.labels;
  }
};

/// Row-major table over the product of its axes (last axis fastest).
class JointDistribution {
 public:
  JointDistribution() = default;

  JointDistribution(std::vector<Axis> axes, std::vector<double> probs) : axes_(std::move(axes)), probs_(std::move(probs)) {
    std::size_t total = 1;
    for (const auto& a : axes_) {
      if (a.size == 0) throw ShapeError("joint distribution: empty axis '" + a.name + "'");
      total *= a.size;
    }
    if (axes_.empty()) throw ShapeError("joint distribution: no axes");
    if (total != probs_.size()) throw ShapeError("joint distribution: table size does not match axes");
    for (std::size_t i = 0; i < axes_.size(); ++i)
      for (std::size_t j = i + 1; j < axes_.size(); ++j)
        if (axes_[i].name == axes_[j].name) throw ShapeError("joint distribution: duplicate axis '" + axes_[i].name + "'");
    detail::check_probabilities(probs_, "joint distribution");
  }

  static JointDistribution from(const Distribution& d, std::string axis_name = "R") {
    return JointDistribution({Axis(std::move(axis_name), d.alphabet())}, {d.probs().begin(), d.probs().end()});
  }

  const std::vector<Axis>& axes() const noexcept { return axes_; }
  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }

  bool has_axis(std::string_view name) const {
    return std::any_of(axes_.begin(), axes_.end(), [&](const Axis& a) { return a.name == name; });
  }

  std::size_t axis_index(std::string_view name) const {
    for (std::size_t i = 0; i < axes_.size(); ++i)
      if (axes_[i].name == name) return i;
    throw ShapeError("joint distribution: no axis named '" + std::string(name) + "'");
  }

  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(axes_.size(), 1);
    for (std::size_t i = axes_.size(); i-- > 1;) s[i - 1] = s[i] * axes_[i].size;
    return s;
  }

  double at(std::span<const std::size_t> index) const {
    if (index.size() != axes_.size()) throw ShapeError("joint distribution: wrong index arity");
    std::size_t flat = 0;
    for (std::size_t i = 0; i < axes_.size(); ++i) flat = flat * axes_[i].size + index[i];
    return probs_[flat];
  }

  /// Marginal over the named axes, kept in the order given.
  JointDistribution marginal(std::span<const std::string> keep) const {
    std::vector<std::size_t> ids;
    std::vector<Axis> kept;
    for (const auto& name : keep) {
      ids.push_back(axis_index(name));
      kept.push_back(axes_[ids.back()]);
    }
    std::size_t out_size = 1;
    for (const auto& a : kept) out_size *= a.size;
    std::vector<double> out(out_size, 0.0);
    const auto st = strides();
    for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
      std::size_t o = 0;
      for (std::size_t k = 0; k < ids.size(); ++k) o = o * kept[k].size + (flat / st[ids[k]]) % axes_[ids[k]].size;
      out[o] += probs_[flat];
    }
    return JointDistribution(std::move(kept), std::move(out));
  }

  JointDistribution marginal(std::initializer_list<std::string> keep) const {
    std::vector<std::string> k(keep);
    return marginal(std::span<const std::string>(k));
  }

  Distribution to_distribution() const {
    if (axes_.size() != 1) throw ShapeError("joint distribution: expected a single axis");
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < axes_[0].size; ++i) labels.push_back(axes_[0].label(i));
    return Distribution(std::move(labels), probs_);
  }

 private:
  std::vector<Axis> axes_;
  std::vector<double> probs_;
};

/// Behaviour P(x, y | v, w) of a two-party device.
struct BellDims {
  std::size_t x = 2, y = 2, v = 2, w = 2;
  friend bool operator==(const BellDims&, const BellDims&) = default;
  std::size_t outcomes() const noexcept { return x * y; }
  std::size_t inputs() const noexcept { return v * w; }
  std::size_t size() const noexcept { return x * y * v * w; }
};

class ConditionalTable {
 public:
  ConditionalTable() : ConditionalTable(BellDims{}, std::vector<double>(16, 0.25)) {}

  ConditionalTable(BellDims dims, std::vector<double> probs) : dims_(dims), p_(std::move(probs)) {
    if (p_.size() != dims_.size()) throw ShapeError("conditional table: size does not match alphabets");
    for (std::size_t v = 0; v < dims_.v; ++v)
      for (std::size_t w = 0; w < dims_.w; ++w)
        detail::check_probabilities(std::span<const double>(p_).subspan(offset(v, w), dims_.outcomes()),
                                    "conditional table slice (" + std::to_string(v) + "," + std::to_string(w) + ")");
  }

  static ConditionalTable uniform(BellDims dims = {}) {
    return ConditionalTable(dims, std::vector<double>(dims.size(), 1.0 / static_cast<double>(dims.outcomes())));
  }

  /// Deterministic responses: x = fa(v), y = fb(w).
  template <class FA, class FB>
  static ConditionalTable deterministic(BellDims dims, FA fa, FB fb) {
    std::vector<double> p(dims.size(), 0.0);
    ConditionalTable t;
    t.dims_ = dims;
    for (std::size_t v = 0; v < dims.v; ++v)
      for (std::size_t w = 0; w < dims.w; ++w) p[t.index(fa(v), fb(w), v, w)] = 1.0;
    return ConditionalTable(dims, std::move(p));
  }

  const BellDims& dims() const noexcept { return dims_; }
  std::span<const double> probs() const noexcept { return p_; }

  std::size_t offset(std::size_t v, std::size_t w) const noexcept { return (v * dims_.w + w) * dims_.outcomes(); }
  std::size_t index(std::size_t x, std::size_t y, std::size_t v, std::size_t w) const noexcept {
    return offset(v, w) + x * dims_.y + y;
  }
  double operator()(std::size_t x, std::size_t y, std::size_t v, std::size_t w) const { return p_[index(x, y, v, w)]; }

  double max_prob(std::size_t v, std::size_t w) const {
    auto slice = std::span<const double>(p_).subspan(offset(v, w), dims_.outcomes());
    return *std::max_element(slice.begin(), slice.end());
  }

  double max_prob() const { return *std::max_element(p_.begin(), p_.end()); }

  /// Largest violation of no-signalling between the two parties.
  double signalling_residual() const {
    double worst = 0.0;
    for (std::size_t v = 0; v < dims_.v; ++v)
      for (std::size_t x = 0; x < dims_.x; ++x)
        for (std::size_t w = 1; w < dims_.w; ++w)
          worst = std::max(worst, std::abs(marginal_a(x, v, w) - marginal_a(x, v, 0)));
    for (std::size_t w = 0; w < dims_.w; ++w)
      for (std::size_t y = 0; y < dims_.y; ++y)
        for (std::size_t v = 1; v < dims_.v; ++v)
          worst = std::max(worst, std::abs(marginal_b(y, v, w) - marginal_b(y, 0, w)));
    return worst;
  }

  double marginal_a(std::size_t x, std::size_t v, std::size_t w) const {
    double s = 0.0;
    for (std::size_t y = 0; y < dims_.y; ++y) s += (*this)(x, y, v, w);
    return s;
  }
  double marginal_b(std::size_t y, std::size_t v, std::size_t w) const {
    double s = 0.0;
    for (std::size_t x = 0; x < dims_.x; ++x) s += (*this)(x, y, v, w);
    return s;
  }

  friend ConditionalTable mix(const ConditionalTable& a, const ConditionalTable& b, double weight_a) {
    if (!(a.dims_ == b.dims_)) throw ShapeError("conditional table: mixing different alphabets");
    std::vector<double> p(a.p_.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = weight_a * a.p_[i] + (1.0 - weight_a) * b.p_[i];
    return ConditionalTable(a.dims_, std::move(p));
  }

 private:
  BellDims dims_;
  std::vector<double> p_;
};

// ---------------------------------------------------------------------------
// Distances

inline double trace_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("trace distance: tables differ in size");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double trace_distance(const Distribution& p, const Distribution& q) {
  if (!p.same_alphabet(q)) throw ShapeError("trace distance: alphabets differ");
  return trace_distance(p.probs(), q.probs());
}

inline double trace_distance(const JointDistribution& p, const JointDistribution& q) {
  if (p.axes() != q.axes()) throw ShapeError("trace distance: axes differ");
  return trace_distance(p.probs(), q.probs());
}

/// min over distributions Q_E of d(P_RE, U_R x Q_E).
///
/// For each e the cost h_e(q) = sum_r |P(r,e) - q/|R|| is convex and piecewise
/// linear in q with kinks at |R| P(r,e); the normalisation sum_e q_e = 1 is
/// met exactly by filling the cheapest slope segments first.
inline double delta_randomness(const JointDistribution& p_re, std::string_view r_axis = "R",
                               std::string_view e_axis = "E") {
  const std::size_t ri = p_re.axis_index(r_axis);
  const std::size_t ei = p_re.axis_index(e_axis);
  if (p_re.axes().size() != 2) throw ShapeError("delta_randomness: expected exactly the axes R and E");
  const std::size_t nr = p_re.axes()[ri].size;
  const std::size_t ne = p_re.axes()[ei].size;
  const auto st = p_re.strides();
  const double rr = static_cast<double>(nr);

  struct Segment {
    double slope;
    double length;
  };
  std::vector<Segment> segments;
  segments.reserve(ne * nr);
  double cost = 0.0;  // sum_e h_e(0) = 1
  std::vector<double> kinks(nr);
  for (std::size_t e = 0; e < ne; ++e) {
    for (std::size_t r = 0; r < nr; ++r) {
      const double pr = p_re.probs()[r * st[ri] + e * st[ei]];
      kinks[r] = rr * pr;
      cost += pr;
    }
    std::sort(kinks.begin(), kinks.end());
    double start = 0.0;
    for (std::size_t j = 0; j < nr; ++j) {
      segments.push_back({(2.0 * static_cast<double>(j) - rr) / rr, kinks[j] - start});
      start = kinks[j];
    }
  }
  std::stable_sort(segments.begin(), segments.end(), [](const Segment& a, const Segment& b) { return a.slope < b.slope; });
  double remaining = 1.0;
  for (const auto& s : segments) {
    if (remaining <= 0.0) break;
    const double take = std::min(remaining, s.length);
    cost += take * s.slope;
    remaining -= take;
  }
  cost += std::max(remaining, 0.0);  // slope +1 tail, unreachable for valid input
  return std::clamp(0.5 * cost, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Entropies (base 2)

namespace detail {

/// For each value of the conditioning axes, the maximum over the remaining axes.
inline std::vector<std::pair<double, double>> max_and_mass_per_condition(const JointDistribution& p,
                                                                         std::span<const std::string> conditioning) {
  std::vector<std::size_t> ids;
  std::size_t nc = 1;
  for (const auto& name : conditioning) {
    ids.push_back(p.axis_index(name));
    nc *= p.axes()[ids.back()].size;
  }
  std::vector<std::pair<double, double>> out(nc, {0.0, 0.0});
  const auto st = p.strides();
  for (std::size_t flat = 0; flat < p.size(); ++flat) {
    std::size_t c = 0;
    for (std::size_t id : ids) c = c * p.axes()[id].size + (flat / st[id]) % p.axes()[id].size;
    out[c].first = std::max(out[c].first, p.probs()[flat]);
    out[c].second += p.probs()[flat];
  }
  return out;
}

}  // namespace detail

/// Average conditional min-entropy H_min(R|C) with C the named conditioning axes.
inline double min_entropy_avg(const JointDistribution& p, std::span<const std::string> conditioning) {
  double guess = 0.0;
  for (auto [mx, mass] : detail::max_and_mass_per_condition(p, conditioning)) guess += mx;
  return std::max(0.0, -std::log2(guess));
}

inline double min_entropy_avg(const JointDistribution& p) {
  std::vector<std::string> cond;
  if (p.has_axis("E")) cond.push_back("E");
  return min_entropy_avg(p, cond);
}

/// Worst-case conditional min-entropy: -log2 max_{r,c} P(r|c).
inline double min_entropy_worst(const JointDistribution& p, std::span<const std::string> conditioning) {
  double worst = 0.0;
  for (auto [mx, mass] : detail::max_and_mass_per_condition(p, conditioning))
    if (mass > 0.0) worst = std::max(worst, mx / mass);
  return std::max(0.0, -std::log2(worst));
}

inline double min_entropy_worst(const JointDistribution& p) {
  std::vector<std::string> cond;
  if (p.has_axis("E")) cond.push_back("E");
  return min_entropy_worst(p, cond);
}

inline double min_entropy(const Distribution& p) { return std::max(0.0, -std::log2(p.max_prob())); }

inline double shannon_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return std::max(0.0, h);
}

inline double shannon_entropy(const Distribution& p) { return shannon_entropy(p.probs()); }

// ---------------------------------------------------------------------------
// Text format: "alphabet: a1 a2 ..." then one probability per line.

inline void write_distribution(std::ostream& out, const Distribution& d) {
  out << "alphabet:";
  for (const auto& a : d.alphabet()) out << ' ' << a;
  out << '\n';
  for (double p : d.probs()) out << detail::format_double(p) << '\n';
}

inline std::string to_text(const Distribution& d) {
  std::ostringstream os;
  write_distribution(os, d);
  return os.str();
}

inline Distribution read_distribution(std::istream& in) {
  std::string line;
  int lineno = 0;
  std::vector<std::string> alphabet;
  bool have_header = false;
  std::vector<double> probs;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    if (!have_header) {
      if (tok != "alphabet:") throw ParseError("expected 'alphabet:' header", lineno);
      while (ls >> tok) alphabet.push_back(tok);
      have_header = true;
      continue;
    }
    probs.push_back(detail::parse_double(tok, lineno));
    if (ls >> tok) throw ParseError("one probability per line", lineno);
  }
  if (!have_header) throw ParseError("missing 'alphabet:' header");
  return Distribution(std::move(alphabet), std::move(probs));
}

}  // namespace direx
