#pragma once

// Round-by-round device simulation and exact transcript enumeration.
//
// Devices are classical stochastic automata: in state s, given inputs (v, w),
// they answer (x, y) with probability P_s(xy|vw) and move to the state
// next(s, v, w, x, y). Independent and identically distributed devices are the
// one-state case. Adversary knowledge E selects which automaton is running.

#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "direx/bell.hpp"
#include "direx/error.hpp"
#include "direx/prob.hpp"
#include "direx/rng.hpp"

namespace direx {

struct InputPair {
  std::uint8_t v = 0, w = 0;
  friend bool operator==(const InputPair&, const InputPair&) = default;
};

struct Transcript {
  std::vector<Round> rounds;

  std::size_t size() const noexcept { return rounds.size(); }
  std::vector<InputPair> inputs() const {
    std::vector<InputPair> out;
    out.reserve(rounds.size());
    for (const auto& r : rounds) out.push_back({r.v, r.w});
    return out;
  }
  friend bool operator==(const Transcript&, const Transcript&) = default;
};

/// Tabulated automaton rules; enough to enumerate every transcript exactly.
class AutomatonRules {
 public:
  AutomatonRules(std::vector<ConditionalTable> outputs, std::vector<std::uint32_t> next)
      : outputs_(std::move(outputs)), next_(std::move(next)) {
    if (outputs_.empty()) throw ValidationError("automaton: no states");
    dims_ = outputs_.front().dims();
    for (const auto& t : outputs_)
      if (!(t.dims() == dims_)) throw ShapeError("automaton: states disagree on alphabets");
    if (next_.size() != outputs_.size() * dims_.size()) throw ShapeError("automaton: transition table has the wrong size");
    for (auto s : next_)
      if (s >= outputs_.size()) throw ValidationError("automaton: transition to an unknown state");
  }

  /// One state, fresh sample from the table each round.
  static AutomatonRules iid(ConditionalTable table) {
    const std::size_t k = table.dims().size();
    return AutomatonRules({std::move(table)}, std::vector<std::uint32_t>(k, 0));
  }

  /// Always answers (x, y).
  static AutomatonRules constant(std::size_t x, std::size_t y, BellDims dims = {}) {
    return iid(ConditionalTable::deterministic(dims, [x](std::size_t) { return x; }, [y](std::size_t) { return y; }));
  }

  const BellDims& dims() const noexcept { return dims_; }
  std::size_t states() const noexcept { return outputs_.size(); }
  const ConditionalTable& output(std::size_t state) const { return outputs_.at(state); }
  const std::vector<ConditionalTable>& outputs() const noexcept { return outputs_; }

  std::size_t transition_index(std::size_t s, std::size_t v, std::size_t w, std::size_t x, std::size_t y) const noexcept {
    return s * dims_.size() + ((v * dims_.w + w) * dims_.x + x) * dims_.y + y;
  }
  std::uint32_t next(std::size_t s, std::size_t v, std::size_t w, std::size_t x, std::size_t y) const {
    return next_[transition_index(s, v, w, x, y)];
  }
  std::span<const std::uint32_t> transitions() const noexcept { return next_; }

  /// Output rules let one side's answer depend on the other side's input.
  bool non_physical(double tolerance = 1e-12) const {
    for (const auto& t : outputs_)
      if (t.signalling_residual() > tolerance) return true;
    return false;
  }

 private:
  BellDims dims_;
  std::vector<ConditionalTable> outputs_;
  std::vector<std::uint32_t> next_;
};

/// P_A(x|v) P_B(y|w): answers of each side depend on its own input only.
inline ConditionalTable product_table(BellDims dims, std::span<const double> alice, std::span<const double> bob) {
  if (alice.size() != dims.v * dims.x || bob.size() != dims.w * dims.y) throw ShapeError("product table: wrong marginal sizes");
  std::vector<double> p(dims.size());
  for (std::size_t v = 0; v < dims.v; ++v)
    for (std::size_t w = 0; w < dims.w; ++w)
      for (std::size_t x = 0; x < dims.x; ++x)
        for (std::size_t y = 0; y < dims.y; ++y)
          p[((v * dims.w + w) * dims.x + x) * dims.y + y] = alice[v * dims.x + x] * bob[w * dims.y + y];
  return ConditionalTable(dims, std::move(p));
}

// ---------------------------------------------------------------------------

/// Stateful responder queried once per round.
class DeviceBehavior {
 public:
  virtual ~DeviceBehavior() = default;

  virtual BellDims dims() const = 0;
  virtual std::pair<std::uint8_t, std::uint8_t> respond(std::size_t v, std::size_t w) = 0;
  /// Back to the initial state and the initial random stream.
  virtual void reset() = 0;
  /// Tabulated rules when the device is enumerable.
  virtual const AutomatonRules* rules() const { return nullptr; }
};

namespace detail {

inline std::pair<std::uint8_t, std::uint8_t> sample_slice(const ConditionalTable& t, std::size_t v, std::size_t w, Rng& rng) {
  const auto& d = t.dims();
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t x = 0; x < d.x; ++x)
    for (std::size_t y = 0; y < d.y; ++y) {
      const double p = t(x, y, v, w);
      if (p <= 0.0) continue;
      acc += p;
      last = x * d.y + y;
      if (u < acc) return {static_cast<std::uint8_t>(x), static_cast<std::uint8_t>(y)};
    }
  return {static_cast<std::uint8_t>(last / d.y), static_cast<std::uint8_t>(last % d.y)};
}

}  // namespace detail

class MemoryStrategyDevice : public DeviceBehavior {
 public:
  MemoryStrategyDevice(AutomatonRules rules, std::uint64_t seed) : rules_(std::move(rules)), seed_(seed), rng_(seed) {}

  BellDims dims() const override { return rules_.dims(); }

  std::pair<std::uint8_t, std::uint8_t> respond(std::size_t v, std::size_t w) override {
    const auto d = rules_.dims();
    if (v >= d.v || w >= d.w) throw ShapeError("device: input outside the alphabet");
    auto out = detail::sample_slice(rules_.output(state_), v, w, rng_);
    state_ = rules_.next(state_, v, w, out.first, out.second);
    return out;
  }

  void reset() override {
    state_ = 0;
    rng_.reseed(seed_);
  }

  const AutomatonRules* rules() const override { return &rules_; }
  std::size_t state() const noexcept { return state_; }

 private:
  AutomatonRules rules_;
  std::uint64_t seed_;
  Rng rng_;
  std::size_t state_ = 0;
};

/// Fresh sample from a fixed table every round.
class IIDTableDevice : public MemoryStrategyDevice {
 public:
  IIDTableDevice(ConditionalTable table, std::uint64_t seed) : MemoryStrategyDevice(AutomatonRules::iid(std::move(table)), seed) {}
};

/// Classical side information: E = e with weight P(e) selects the device that runs.
struct AdversaryMixture {
  Distribution weights;
  std::vector<AutomatonRules> components;

  AdversaryMixture(Distribution w, std::vector<AutomatonRules> c) : weights(std::move(w)), components(std::move(c)) {
    if (weights.size() != components.size()) throw ShapeError("mixture: one weight per component");
    for (const auto& r : components)
      if (!(r.dims() == components.front().dims())) throw ShapeError("mixture: components disagree on alphabets");
  }
};

/// Draws e once per reset, then behaves as component e.
class MixtureDevice : public DeviceBehavior {
 public:
  MixtureDevice(AdversaryMixture mix, std::uint64_t seed) : mix_(std::move(mix)), seed_(seed) { reset(); }

  BellDims dims() const override { return mix_.components.front().dims(); }
  std::pair<std::uint8_t, std::uint8_t> respond(std::size_t v, std::size_t w) override { return active_->respond(v, w); }

  void reset() override {
    Rng pick = Rng::derive(seed_, 0xE);
    const double u = pick.uniform();
    double acc = 0.0;
    e_ = mix_.components.size() - 1;
    for (std::size_t i = 0; i < mix_.components.size(); ++i) {
      acc += mix_.weights[i];
      if (u < acc) {
        e_ = i;
        break;
      }
    }
    active_ = std::make_unique<MemoryStrategyDevice>(mix_.components[e_], Rng::derive(seed_, 0xD).operator()());
  }

  std::size_t side_information() const noexcept { return e_; }

 private:
  AdversaryMixture mix_;
  std::uint64_t seed_;
  std::size_t e_ = 0;
  std::unique_ptr<MemoryStrategyDevice> active_;
};

/// Draws n input pairs i.i.d. from p_vw (simulation helper; the protocol uses the seed sampler).
inline std::vector<InputPair> draw_inputs(const InputDistribution& inputs, std::size_t n, Rng& rng) {
  std::vector<InputPair> out(n);
  const auto p = inputs.probs();
  for (auto& pair : out) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t k = p.size() - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) {
        k = i;
        break;
      }
    }
    pair = {static_cast<std::uint8_t>(k / inputs.nw()), static_cast<std::uint8_t>(k % inputs.nw())};
  }
  return out;
}

/// Resets the device, then queries it once per round in order.
inline Transcript run_experiment(DeviceBehavior& device, std::span<const InputPair> inputs) {
  device.reset();
  const auto d = device.dims();
  Transcript t;
  t.rounds.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.v >= d.v || in.w >= d.w) throw ShapeError("run_experiment: input outside the device alphabet");
    auto [x, y] = device.respond(in.v, in.w);
    t.rounds.push_back({in.v, in.w, x, y});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Exact enumeration

inline constexpr std::size_t kMaxEnumerationRounds = 8;
inline constexpr std::size_t kMaxMaterializedEntries = std::size_t{1} << 24;

/// One leaf of the transcript tree.
struct TranscriptPath {
  std::span<const Round> rounds;
  std::span<const std::uint32_t> states;  ///< state before each round
  double p_inputs = 1.0;                  ///< P(v)
  double p_outputs = 1.0;                 ///< P(x|v)
  std::size_t x_index = 0;                ///< round 1 is the most significant digit
  std::size_t v_index = 0;
};

/// Depth-first traversal of every (x, v) with P(v) > 0; leaves are streamed, not stored.
template <class Visitor>
void enumerate_transcripts(const AutomatonRules& rules, const InputDistribution& inputs, std::size_t n, Visitor&& visit) {
  const auto d = rules.dims();
  if (inputs.nv() != d.v || inputs.nw() != d.w) throw ShapeError("enumeration: input alphabet mismatch");
  if (n == 0) throw ParameterError("enumeration: need at least one round");
  if (n > kMaxEnumerationRounds) throw CapacityError("enumeration: at most " + std::to_string(kMaxEnumerationRounds) + " rounds");
  std::vector<Round> rounds(n);
  std::vector<std::uint32_t> states(n);
  const std::size_t nxy = d.outcomes(), nvw = d.inputs();

  auto recurse = [&](auto&& self, std::size_t depth, std::uint32_t state, double pv, double px, std::size_t xi,
                     std::size_t vi) -> void {
    if (depth == n) {
      visit(TranscriptPath{rounds, states, pv, px, xi, vi});
      return;
    }
    states[depth] = state;
    const auto& table = rules.output(state);
    for (std::size_t v = 0; v < d.v; ++v)
      for (std::size_t w = 0; w < d.w; ++w) {
        const double p_in = inputs(v, w);
        for (std::size_t x = 0; x < d.x; ++x)
          for (std::size_t y = 0; y < d.y; ++y) {
            const double p_out = table(x, y, v, w);
            rounds[depth] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(w), static_cast<std::uint8_t>(x),
                             static_cast<std::uint8_t>(y)};
            self(self, depth + 1, rules.next(state, v, w, x, y), pv * p_in, px * p_out, xi * nxy + x * d.y + y,
                 vi * nvw + v * d.w + w);
          }
      }
  };
  recurse(recurse, 0, 0, 1.0, 1.0, 0, 0);
}

namespace detail {

inline std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  while (exp--) r *= base;
  return r;
}

inline std::vector<std::string> sequence_labels(std::size_t alphabet_a, std::size_t alphabet_b, std::size_t n) {
  const std::size_t k = alphabet_a * alphabet_b;
  const std::size_t total = ipow(k, n);
  std::vector<std::string> labels;
  labels.reserve(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::string s;
    std::size_t rem = idx;
    std::vector<std::size_t> digits(n);
    for (std::size_t i = n; i-- > 0;) {
      digits[i] = rem % k;
      rem /= k;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (i) s += '.';
      s += std::to_string(digits[i] / alphabet_b);
      s += std::to_string(digits[i] % alphabet_b);
    }
    labels.push_back(std::move(s));
  }
  return labels;
}

inline void check_capacity(const BellDims& d, std::size_t n, std::size_t components) {
  if (n > kMaxEnumerationRounds) throw CapacityError("enumeration: too many rounds");
  const double entries = std::pow(static_cast<double>(d.outcomes() * d.inputs()), static_cast<double>(n)) * static_cast<double>(components);
  if (entries > static_cast<double>(kMaxMaterializedEntries))
    throw CapacityError("enumeration: joint table of " + std::to_string(static_cast<long long>(entries)) +
                        " entries exceeds capacity; stream with enumerate_transcripts instead");
}

}  // namespace detail

/// Exact P(x, v) = P(v) P(x|v) over n rounds, axes "X" and "V".
inline JointDistribution exact_transcript_distribution(const AutomatonRules& rules, const InputDistribution& inputs, std::size_t n) {
  const auto d = rules.dims();
  detail::check_capacity(d, n, 1);
  const std::size_t nx = detail::ipow(d.outcomes(), n), nv = detail::ipow(d.inputs(), n);
  std::vector<double> p(nx * nv, 0.0);
  enumerate_transcripts(rules, inputs, n, [&](const TranscriptPath& path) {
    p[path.x_index * nv + path.v_index] += path.p_inputs * path.p_outputs;
  });
  return JointDistribution({Axis("X", detail::sequence_labels(d.x, d.y, n)), Axis("V", detail::sequence_labels(d.v, d.w, n))},
                           std::move(p));
}

/// Exact P(x, v, e) = P(v) P(e) P(x|v, e), axes "X", "V", "E".
inline JointDistribution mixture_distribution(const AdversaryMixture& mix, const InputDistribution& inputs, std::size_t n) {
  const auto d = mix.components.front().dims();
  const std::size_t ne = mix.components.size();
  detail::check_capacity(d, n, ne);
  const std::size_t nx = detail::ipow(d.outcomes(), n), nv = detail::ipow(d.inputs(), n);
  std::vector<double> p(nx * nv * ne, 0.0);
  for (std::size_t e = 0; e < ne; ++e) {
    const double pe = mix.weights[e];
    enumerate_transcripts(mix.components[e], inputs, n, [&](const TranscriptPath& path) {
      p[(path.x_index * nv + path.v_index) * ne + e] += pe * path.p_inputs * path.p_outputs;
    });
  }
  return JointDistribution({Axis("X", detail::sequence_labels(d.x, d.y, n)), Axis("V", detail::sequence_labels(d.v, d.w, n)),
                            Axis("E", mix.weights.alphabet())},
                           std::move(p));
}

/// Exact Bell expectation of round `round` (0-based), averaged over everything before it.
inline double exact_round_bell_value(const AutomatonRules& rules, const InputDistribution& inputs, const BellExpression& expr,
                                     std::size_t round) {
  std::vector<double> state_value(rules.states());
  for (std::size_t s = 0; s < rules.states(); ++s) state_value[s] = bell_expectation(expr, rules.output(s));
  if (round == 0) return state_value[0];
  double total = 0.0;
  enumerate_transcripts(rules, inputs, round, [&](const TranscriptPath& path) {
    const auto& last = path.rounds.back();
    const auto s = rules.next(path.states.back(), last.v, last.w, last.x, last.y);
    total += path.p_inputs * path.p_outputs * state_value[s];
  });
  return total;
}

// ---------------------------------------------------------------------------
// Text formats

inline void write_transcript(std::ostream& out, const Transcript& t) {
  out << "n=" << t.rounds.size() << '\n';
  for (std::size_t i = 0; i < t.rounds.size(); ++i) {
    const auto& r = t.rounds[i];
    out << i << ' ' << int(r.v) << ' ' << int(r.w) << ' ' << int(r.x) << ' ' << int(r.y) << '\n';
  }
}

inline void write_inputs(std::ostream& out, std::span<const InputPair> inputs) {
  out << "n=" << inputs.size() << '\n';
  for (std::size_t i = 0; i < inputs.size(); ++i) out << i << ' ' << int(inputs[i].v) << ' ' << int(inputs[i].w) << '\n';
}

namespace detail {

inline std::size_t read_count_header(std::istream& in, int& lineno) {
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = split_ws(strip_comment(line));
    if (tok.empty()) continue;
    if (tok.size() != 1 || tok[0].rfind("n=", 0) != 0) throw ParseError("expected header 'n=<rounds>'", lineno);
    return parse_size(tok[0].substr(2), lineno);
  }
  throw ParseError("missing header 'n=<rounds>'");
}

inline std::uint8_t parse_symbol(const std::string& s, int lineno) {
  const auto v = parse_size(s, lineno);
  if (v > 255) throw ParseError("symbol out of range", lineno);
  return static_cast<std::uint8_t>(v);
}

}  // namespace detail

/// Header "n=<rounds>" then lines "i v w x y".
inline Transcript read_transcript(std::istream& in) {
  int lineno = 0;
  const std::size_t n = detail::read_count_header(in, lineno);
  Transcript t;
  t.rounds.reserve(n);
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    if (tok.size() != 5) throw ParseError("expected 'i v w x y'", lineno);
    if (detail::parse_size(tok[0], lineno) != t.rounds.size()) throw ParseError("round index out of sequence", lineno);
    t.rounds.push_back({detail::parse_symbol(tok[1], lineno), detail::parse_symbol(tok[2], lineno),
                        detail::parse_symbol(tok[3], lineno), detail::parse_symbol(tok[4], lineno)});
  }
  if (t.rounds.size() != n) throw ParseError("header announces " + std::to_string(n) + " rounds, found " + std::to_string(t.rounds.size()));
  return t;
}

/// Header "n=<rounds>" then lines "i v w".
inline std::vector<InputPair> read_inputs(std::istream& in) {
  int lineno = 0;
  const std::size_t n = detail::read_count_header(in, lineno);
  std::vector<InputPair> out;
  out.reserve(n);
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    if (tok.size() != 3) throw ParseError("expected 'i v w'", lineno);
    if (detail::parse_size(tok[0], lineno) != out.size()) throw ParseError("round index out of sequence", lineno);
    out.push_back({detail::parse_symbol(tok[1], lineno), detail::parse_symbol(tok[2], lineno)});
  }
  if (out.size() != n) throw ParseError("header announces " + std::to_string(n) + " rounds, found " + std::to_string(out.size()));
  return out;
}

/// Strategy file:
///   alphabets=X Y V W
///   states=S
///   s v w x y prob next      (one line per non-zero output; absent rows have prob 0 and stay in s)
inline AutomatonRules read_strategy(std::istream& in) {
  std::optional<BellDims> dims;
  std::optional<std::size_t> states;
  std::vector<std::vector<double>> probs;
  std::vector<std::uint32_t> next;
  std::string line;
  int lineno = 0;
  auto ensure_tables = [&]() {
    if (!dims || !states) throw ParseError("strategy: 'alphabets=' and 'states=' must precede the rules", lineno);
    if (probs.empty()) {
      probs.assign(*states, std::vector<double>(dims->size(), 0.0));
      next.resize(*states * dims->size());
      for (std::size_t s = 0; s < *states; ++s)
        for (std::size_t k = 0; k < dims->size(); ++k) next[s * dims->size() + k] = static_cast<std::uint32_t>(s);
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    if (tok[0] == "format=1") continue;
    if (tok[0].rfind("alphabets=", 0) == 0) {
      if (tok.size() != 4) throw ParseError("alphabets= needs four sizes", lineno);
      dims = BellDims{detail::parse_size(tok[0].substr(10), lineno), detail::parse_size(tok[1], lineno),
                      detail::parse_size(tok[2], lineno), detail::parse_size(tok[3], lineno)};
      continue;
    }
    if (tok[0].rfind("states=", 0) == 0 && tok.size() == 1) {
      states = detail::parse_size(tok[0].substr(7), lineno);
      if (*states == 0) throw ParseError("states= must be positive", lineno);
      continue;
    }
    if (tok.size() != 7) throw ParseError("expected 's v w x y prob next'", lineno);
    ensure_tables();
    const std::size_t s = detail::parse_size(tok[0], lineno), v = detail::parse_size(tok[1], lineno),
                      w = detail::parse_size(tok[2], lineno), x = detail::parse_size(tok[3], lineno),
                      y = detail::parse_size(tok[4], lineno), nx = detail::parse_size(tok[6], lineno);
    if (s >= *states || nx >= *states || v >= dims->v || w >= dims->w || x >= dims->x || y >= dims->y)
      throw ParseError("strategy: index outside the declared alphabets or states", lineno);
    const std::size_t k = ((v * dims->w + w) * dims->x + x) * dims->y + y;
    probs[s][k] = detail::parse_double(tok[5], lineno);
    next[s * dims->size() + k] = static_cast<std::uint32_t>(nx);
  }
  ensure_tables();
  std::vector<ConditionalTable> outputs;
  for (auto& p : probs) outputs.emplace_back(*dims, std::move(p));
  return AutomatonRules(std::move(outputs), std::move(next));
}

inline void write_strategy(std::ostream& out, const AutomatonRules& rules) {
  const auto d = rules.dims();
  out << "format=1\nalphabets=" << d.x << ' ' << d.y << ' ' << d.v << ' ' << d.w << "\nstates=" << rules.states() << '\n';
  for (std::size_t s = 0; s < rules.states(); ++s)
    for (std::size_t v = 0; v < d.v; ++v)
      for (std::size_t w = 0; w < d.w; ++w)
        for (std::size_t x = 0; x < d.x; ++x)
          for (std::size_t y = 0; y < d.y; ++y) {
            const double p = rules.output(s)(x, y, v, w);
            const auto nx = rules.next(s, v, w, x, y);
            if (p == 0.0 && nx == s) continue;
            out << s << ' ' << v << ' ' << w << ' ' << x << ' ' << y << ' ' << detail::format_double(p) << ' ' << nx << '\n';
          }
}

}  // namespace direx
