#pragma once

// Input generation, device use, certification and extraction as one run,
// plus its on-disk artifacts and independent re-verification.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "direx/bell.hpp"
#include "direx/certify.hpp"
#include "direx/devices.hpp"
#include "direx/error.hpp"
#include "direx/extractor.hpp"
#include "direx/prob.hpp"
#include "direx/quantum.hpp"
#include "direx/rng.hpp"
#include "direx/sampler.hpp"

namespace direx {

// ---------------------------------------------------------------------------
// key=value files

/// Ordered key=value entries with their line numbers; '#' starts a comment.
class KeyValueFile {
 public:
  static KeyValueFile parse(std::istream& in) {
    KeyValueFile f;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = detail::strip_comment(line);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
      const auto eq = line.find('=');
      if (eq == std::string::npos || eq == 0) throw ParseError("expected 'key=value'", lineno);
      auto trim = [](std::string t) {
        const auto b = t.find_first_not_of(" \t");
        return b == std::string::npos ? std::string() : t.substr(b, t.find_last_not_of(" \t") - b + 1);
      };
      std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key.empty()) throw ParseError("expected 'key=value'", lineno);
      if (f.index_.count(key)) throw ParseError("duplicate key '" + key + "'", lineno);
      f.index_[key] = f.entries_.size();
      f.entries_.push_back({key, value, lineno});
    }
    if (f.entries_.empty() || f.entries_.front().key != "format" || f.entries_.front().value != "1")
      throw ParseError("first entry must be 'format=1'", f.entries_.empty() ? 0 : f.entries_.front().line);
    return f;
  }
  static KeyValueFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    return parse(in);
  }

  struct Entry {
    std::string key, value;
    int line = 0;
  };

  bool has(const std::string& key) const { return index_.count(key) != 0; }
  const Entry& entry(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw ParseError("missing key '" + key + "'");
    return entries_[it->second];
  }
  const std::string& get(const std::string& key) const { return entry(key).value; }
  std::string get_or(const std::string& key, std::string fallback) const { return has(key) ? get(key) : std::move(fallback); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  void require_known(std::span<const std::string_view> known) const {
    for (const auto& e : entries_) {
      bool ok = false;
      for (auto k : known) ok = ok || e.key == k;
      if (!ok) throw ParseError("unknown key '" + e.key + "'", e.line);
    }
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

/// Plain decimal or "2^-20".
inline double parse_real(const std::string& text, int line) {
  if (text.rfind("2^", 0) == 0) return std::exp2(parse_double(text.substr(2), line));
  return parse_double(text, line);
}

inline std::uint64_t parse_u64(const std::string& text, int line) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) throw ParseError("expected an unsigned integer, got '" + text + "'", line);
  return v;
}

inline std::pair<std::string, std::string> split_once(const std::string& s, char sep) {
  const auto p = s.find(sep);
  if (p == std::string::npos) return {s, ""};
  return {s.substr(0, p), s.substr(p + 1)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configuration

struct DeviceSource {
  enum class Kind { Simulated, Transcript };
  Kind kind = Kind::Simulated;
  std::string description;
  std::optional<AutomatonRules> rules;  ///< simulated devices
  std::optional<Transcript> transcript; ///< ingested data
};

inline AutomatonRules honest_device(const TwoQubitState& state) { return AutomatonRules::iid(measure_pair(state, chsh_optimal_settings())); }

/// "werner:<nu>", "singlet", "local", "strategy:<file>", "transcript:<file>".
inline DeviceSource parse_device(const std::string& spec, const std::filesystem::path& base = {}, int line = 0) {
  DeviceSource d;
  d.description = spec;
  const auto [kind, arg] = detail::split_once(spec, ':');
  auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base / p; };
  if (kind == "werner") {
    d.rules = honest_device(werner_state(detail::parse_double(arg, line)));
  } else if (kind == "singlet") {
    d.rules = honest_device(TwoQubitState::singlet());
  } else if (kind == "local") {
    d.rules = AutomatonRules::constant(0, 0);
  } else if (kind == "strategy") {
    std::ifstream in(resolve(arg));
    if (!in) throw Error("cannot read strategy file " + resolve(arg).string());
    d.rules = read_strategy(in);
  } else if (kind == "transcript") {
    std::ifstream in(resolve(arg));
    if (!in) throw Error("cannot read transcript " + resolve(arg).string());
    d.kind = DeviceSource::Kind::Transcript;
    d.transcript = read_transcript(in);
  } else {
    throw ParseError("unknown device '" + spec + "'", line);
  }
  return d;
}

struct ProtocolConfig {
  BellExpression expr = BellExpression::chsh();
  BoundFunction bound = BoundFunction::chsh();
  InputDistribution inputs = InputDistribution::uniform();
  ThresholdLadder ladder = ThresholdLadder::uniform(BellExpression::chsh());
  SecurityParams params;
  std::size_t rounds = 0;
  DeviceSource device;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> echo;  ///< config entries as written

  bool replayable() const noexcept { return device.kind == DeviceSource::Kind::Simulated && device.rules.has_value(); }
};

inline constexpr std::array<std::string_view, 12> kConfigKeys = {
    "format", "rounds", "bell", "bound", "inputs", "ladder", "eps", "eps_prime", "eps_ext", "eps_inp", "device", "seed"};

/// Keys: rounds, bell (chsh | file), bound (chsh | file), inputs (uniform | biased:q | p:p00 p01 ...),
/// ladder (uniform:bins | values:J0 J1 ...), eps, eps_prime, eps_ext, eps_inp, device, seed.
inline ProtocolConfig parse_config(const KeyValueFile& kv, const std::filesystem::path& base = {}) {
  kv.require_known(kConfigKeys);
  ProtocolConfig c;
  for (const auto& e : kv.entries())
    if (e.key != "format") c.echo.emplace_back(e.key, e.value);
  auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base / p; };

  if (kv.has("bell") && kv.get("bell") != "chsh") {
    std::ifstream in(resolve(kv.get("bell")));
    if (!in) throw Error("cannot read Bell expression " + kv.get("bell"));
    c.expr = read_bell_expression(in);
  }
  if (kv.has("bound") && kv.get("bound") != "chsh") {
    std::ifstream in(resolve(kv.get("bound")));
    if (!in) throw Error("cannot read bound table " + kv.get("bound"));
    c.bound = read_bound_table(in);
  }
  const auto& d = c.expr.dims();
  if (kv.has("inputs")) {
    const auto& e = kv.entry("inputs");
    const auto [kind, arg] = detail::split_once(e.value, ':');
    if (kind == "uniform") {
      c.inputs = InputDistribution::uniform(d.v, d.w);
    } else if (kind == "biased") {
      c.inputs = InputDistribution::biased(detail::parse_real(arg, e.line), d.v, d.w);
    } else if (kind == "p") {
      std::vector<double> p;
      for (const auto& t : detail::split_ws(arg)) p.push_back(detail::parse_real(t, e.line));
      c.inputs = InputDistribution(d.v, d.w, std::move(p));
    } else {
      throw ParseError("inputs: expected uniform, biased:<q> or p:<list>", e.line);
    }
  } else {
    c.inputs = InputDistribution::uniform(d.v, d.w);
  }
  if (kv.has("ladder")) {
    const auto& e = kv.entry("ladder");
    const auto [kind, arg] = detail::split_once(e.value, ':');
    if (kind == "uniform") {
      c.ladder = ThresholdLadder::uniform(c.expr, arg.empty() ? 8 : detail::parse_size(arg, e.line));
    } else if (kind == "values") {
      std::vector<double> j;
      for (const auto& t : detail::split_ws(arg)) j.push_back(t == "Iq" ? c.expr.quantum_max() : detail::parse_real(t, e.line));
      c.ladder = ThresholdLadder(std::move(j));
    } else {
      throw ParseError("ladder: expected uniform:<bins> or values:<J0 ... Jmax>", e.line);
    }
  } else {
    c.ladder = ThresholdLadder::uniform(c.expr);
  }
  c.ladder.check_against(c.expr);
  auto real = [&](const char* key, double& out) {
    if (kv.has(key)) out = detail::parse_real(kv.get(key), kv.entry(key).line);
  };
  real("eps", c.params.eps);
  real("eps_prime", c.params.eps_prime);
  real("eps_ext", c.params.eps_ext);
  real("eps_inp", c.params.eps_inp);
  c.params.validate();
  if (kv.has("seed")) c.seed = detail::parse_u64(kv.get("seed"), kv.entry("seed").line);

  // without a device the config only describes how to certify supplied transcripts
  if (!kv.has("device")) {
    c.device.description = "none";
    if (kv.has("rounds")) c.rounds = detail::parse_size(kv.get("rounds"), kv.entry("rounds").line);
    return c;
  }
  const auto& dev = kv.entry("device");
  c.device = parse_device(dev.value, base, dev.line);
  if (c.device.rules && !(c.device.rules->dims() == d)) throw ShapeError("device alphabets differ from the Bell expression");
  if (c.device.transcript) {
    c.rounds = c.device.transcript->size();
    if (kv.has("rounds") && detail::parse_size(kv.get("rounds"), kv.entry("rounds").line) != c.rounds)
      throw ValidationError("config: 'rounds' disagrees with the transcript length");
  } else {
    c.rounds = detail::parse_size(kv.get("rounds"), kv.entry("rounds").line);
  }
  if (c.rounds == 0) throw ParameterError("config: need at least one round");
  return c;
}

inline ProtocolConfig load_config(const std::filesystem::path& path) {
  return parse_config(KeyValueFile::load(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Running

/// Independent random streams derived from the master seed.
enum StreamTag : std::uint64_t { kInputStream = 1, kDeviceStream = 2, kExtractorStream = 3 };

struct ProtocolRun {
  std::uint64_t seed = 0;
  Transcript transcript;
  CertificationResult cert;
  bool input_failure = false;
  std::size_t input_seed_bits = 0;  ///< reserved S_inp length
  std::size_t input_bits_used = 0;
  ToeplitzSpec spec;
  BitVector raw;
  BitVector extractor_seed;
  BitVector output;
  EntropyCost cost;

  bool aborted() const noexcept { return cert.abort || input_failure; }
  int exit_code() const noexcept { return aborted() ? 2 : 0; }
};

inline std::size_t bits_for(std::size_t alphabet) {
  std::size_t b = 0;
  while ((std::size_t{1} << b) < alphabet) ++b;
  return b;
}

/// x_1 y_1 x_2 y_2 ..., each output written with ceil(log2 |alphabet|) bits, most significant first.
inline BitVector raw_string(const Transcript& t, const BellDims& d) {
  const std::size_t bx = bits_for(d.x), by = bits_for(d.y);
  BitVector raw;
  for (const auto& r : t.rounds) {
    for (std::size_t i = bx; i-- > 0;) raw.push_back((r.x >> i) & 1u);
    for (std::size_t i = by; i-- > 0;) raw.push_back((r.y >> i) & 1u);
  }
  return raw;
}

/// Step 1: input pairs from the input seed stream. nullopt when the sampler aborts.
inline std::optional<std::vector<InputPair>> generate_inputs(const InputDistribution& inputs, std::size_t n, const SecurityParams& params,
                                                             std::uint64_t seed, std::size_t* budget = nullptr, std::size_t* used = nullptr) {
  const std::size_t bits = seed_budget(inputs.probs(), n, params.eps_inp);
  Rng rng = Rng::derive(seed, kInputStream);
  const BitVector s_inp = BitVector::random(bits, rng);
  SequenceSampler sampler(std::vector<double>(inputs.probs().begin(), inputs.probs().end()));
  const auto out = sampler.sample(s_inp, n);
  if (budget) *budget = bits;
  if (used) *used = out.bits_used;
  if (!out.symbols) return std::nullopt;
  std::vector<InputPair> pairs;
  pairs.reserve(n);
  for (auto s : *out.symbols) pairs.push_back({static_cast<std::uint8_t>(s / inputs.nw()), static_cast<std::uint8_t>(s % inputs.nw())});
  return pairs;
}

/// Steps 1 and 2 for simulated devices, or the ingested transcript.
inline std::optional<Transcript> acquire_transcript(const ProtocolConfig& c, std::uint64_t seed, std::size_t* budget = nullptr,
                                                    std::size_t* used = nullptr) {
  if (c.device.transcript) return *c.device.transcript;
  if (!c.device.rules) throw ParameterError("config names no device to simulate");
  const auto inputs = generate_inputs(c.inputs, c.rounds, c.params, seed, budget, used);
  if (!inputs) return std::nullopt;
  MemoryStrategyDevice device(*c.device.rules, Rng::derive(seed, kDeviceStream)());
  return run_experiment(device, *inputs);
}

/// Step 4 given the certificate and the raw string.
inline void extract_output(ProtocolRun& run, const ProtocolConfig& c, std::size_t jobs = 1) {
  const std::size_t n_in = run.raw.size();
  std::size_t m_out = run.cert.abort ? 0 : std::min(output_length(run.cert.k, c.params.eps_ext), n_in);
  if (n_in == 0) m_out = 0;
  run.spec = n_in == 0 ? ToeplitzSpec{} : ToeplitzSpec(n_in, m_out);
  Rng rng = Rng::derive(run.seed, kExtractorStream);
  run.extractor_seed = BitVector::random(run.spec.seed_len(), rng);
  run.output = m_out == 0 ? BitVector() : extract(run.raw, run.extractor_seed, run.spec, jobs);
}

inline ProtocolRun run_protocol(const ProtocolConfig& c, std::optional<std::uint64_t> seed_override = std::nullopt, std::size_t jobs = 1) {
  ProtocolRun run;
  run.seed = seed_override.value_or(c.seed);
  auto t = acquire_transcript(c, run.seed, &run.input_seed_bits, &run.input_bits_used);
  if (!t) {
    run.input_failure = true;
    run.cert.params = c.params;
    run.cert.m_max = c.ladder.m_max();
    run.cost = entropy_cost(c.inputs.probs(), c.rounds, 0, 0, run.input_seed_bits);
    return run;
  }
  run.transcript = std::move(*t);
  run.cert = certify(c.expr, c.inputs, c.bound, c.ladder, c.params, run.transcript.rounds);
  run.raw = raw_string(run.transcript, c.expr.dims());
  extract_output(run, c, jobs);
  run.cost = entropy_cost(c.inputs.probs(), run.transcript.size(), run.raw.size(), run.output.size(), run.input_seed_bits);
  return run;
}

// ---------------------------------------------------------------------------
// Artifacts
//
//   report.txt               public: parameters, certificate, output length
//   inputs.txt               public: V
//   extractor_seed.bin       public: S_ext (+ .meta)
//   secret/transcript.txt    X together with V
//   secret/random.bin        R (+ .meta)

inline void write_report(std::ostream& out, const ProtocolConfig& c, const ProtocolRun& run) {
  using detail::format_double;
  out << "format=1\n";
  for (const auto& [k, v] : c.echo)
    if (k != "seed") out << "config." << k << '=' << v << '\n';
  out << "seed=" << run.seed << '\n'
      << "rounds=" << c.rounds << '\n'
      << "input_seed_bits=" << run.input_seed_bits << '\n'
      << "input_bits_used=" << run.input_bits_used << '\n'
      << "input_failure=" << (run.input_failure ? 1 : 0) << '\n';
  write_certification(out, run.cert);
  out << "raw_bits=" << run.raw.size() << '\n'
      << "m_out=" << run.output.size() << '\n'
      << "extractor_seed_bits=" << run.extractor_seed.size() << '\n'
      << "net_expansion=" << format_double(run.cost.net_expansion) << '\n'
      << "net_excluding_public_seed=" << format_double(run.cost.net_excluding_public_seed) << '\n';
}

inline std::string report_text(const ProtocolConfig& c, const ProtocolRun& run) {
  std::ostringstream s;
  write_report(s, c, run);
  return s.str();
}

inline void write_run(const std::filesystem::path& dir, const ProtocolConfig& c, const ProtocolRun& run) {
  std::filesystem::create_directories(dir / "secret");
  {
    std::ofstream out(dir / "report.txt");
    write_report(out, c, run);
  }
  {
    std::ofstream out(dir / "inputs.txt");
    write_inputs(out, run.transcript.inputs());
  }
  write_bits(dir / "extractor_seed.bin", run.extractor_seed);
  {
    std::ofstream out(dir / "secret" / "transcript.txt");
    write_transcript(out, run.transcript);
  }
  write_bits(dir / "secret" / "random.bin", run.output);
}

struct VerifyReport {
  std::vector<std::string> failures;
  bool passed() const noexcept { return failures.empty(); }
};

/// Recomputes everything a third party can from the artifacts and the config.
inline VerifyReport verify_run(const std::filesystem::path& dir, const ProtocolConfig& c, std::size_t jobs = 1) {
  VerifyReport rep;
  auto fail = [&](std::string msg) { rep.failures.push_back(std::move(msg)); };
  const auto report = KeyValueFile::load(dir / "report.txt");
  const std::uint64_t seed = detail::parse_u64(report.get("seed"), report.entry("seed").line);

  Transcript recorded;
  {
    std::ifstream in(dir / "secret" / "transcript.txt");
    if (!in) throw Error("cannot read " + (dir / "secret" / "transcript.txt").string());
    recorded = read_transcript(in);
  }
  {
    std::ifstream in(dir / "inputs.txt");
    if (!in) throw Error("cannot read " + (dir / "inputs.txt").string());
    const auto published = read_inputs(in);
    const auto inputs = recorded.inputs();
    if (published.size() != inputs.size()) fail("published inputs have a different length from the transcript");
    for (std::size_t i = 0; i < std::min(published.size(), inputs.size()); ++i)
      if (!(published[i] == inputs[i])) {
        fail("published inputs differ from the transcript at round " + std::to_string(i));
        break;
      }
  }
  if (c.replayable()) {
    const auto replay = acquire_transcript(c, seed);
    if (!replay) {
      fail("replay: input sampling aborted");
    } else {
      const auto& a = replay->rounds;
      const auto& b = recorded.rounds;
      if (a.size() != b.size()) fail("transcript length differs from replay (" + std::to_string(b.size()) + " vs " + std::to_string(a.size()) + ")");
      for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
        if (!(a[i] == b[i])) {
          fail("transcript differs from replay at round " + std::to_string(i));
          break;
        }
    }
  }
  if (recorded.size() == 0) {
    fail("transcript is empty");
    return rep;
  }

  ProtocolRun run;
  run.seed = seed;
  run.transcript = recorded;
  run.cert = certify(c.expr, c.inputs, c.bound, c.ladder, c.params, recorded.rounds);
  run.raw = raw_string(recorded, c.expr.dims());
  extract_output(run, c, jobs);

  auto check = [&](const std::string& key, const std::string& expected) {
    if (!report.has(key)) {
      fail("report lacks '" + key + "'");
    } else if (report.get(key) != expected) {
      fail(key + " mismatch: report " + report.get(key) + ", recomputed " + expected);
    }
  };
  check("bell_estimate", detail::format_double(run.cert.bell_estimate));
  check("mu", detail::format_double(run.cert.mu));
  check("m", std::to_string(run.cert.m));
  check("k", detail::format_double(run.cert.k));
  check("abort", run.cert.abort ? "1" : "0");
  check("m_out", std::to_string(run.output.size()));

  const auto published_seed = read_bits(dir / "extractor_seed.bin");
  if (!(published_seed == run.extractor_seed)) fail("extractor seed differs from the seed stream");
  const auto recorded_output = read_bits(dir / "secret" / "random.bin");
  BitVector recomputed = run.output;
  if (published_seed.size() == run.spec.seed_len() && run.spec.m_out > 0) recomputed = extract(run.raw, published_seed, run.spec, jobs);
  if (!(recorded_output == recomputed)) {
    std::size_t first = 0;
    while (first < std::min(recorded_output.size(), recomputed.size()) && recorded_output.get(first) == recomputed.get(first)) ++first;
    fail("extractor output differs from recomputation at bit " + std::to_string(first));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Exact security accounting for enumerable adversaries

struct ExactBin {
  std::size_t m = 0;
  double k = 0.0;
  std::size_t m_out = 0;
  double p_mass = 0.0;   ///< P(m)
  double p_delta = 0.0;  ///< delta_m of the real distribution
  double q_mass = 0.0;   ///< Q(m) for the Q of the soundness proof
  double q_delta = 0.0;
  double q_h_min = 0.0;  ///< H_min(X | V E, m)_Q
};

struct ExactAccount {
  std::size_t n = 0;
  double mu = 0.0;
  double distance_pq = 0.0;  ///< d(P, Q) = Pr[not G_mu]
  double weighted = 0.0;     ///< sum_m P(m) delta_m
  double composed = 0.0;     ///< eps + eps' + eps_ext (inputs are exact here)
  std::vector<ExactBin> bins;

  bool holds() const noexcept { return weighted <= composed; }
  /// d(P,Q) <= eps.
  bool azuma_holds(double eps) const noexcept { return distance_pq <= eps; }
  /// Every bin with Q(m) > eps'/m_max has delta_m(Q) <= eps_ext.
  bool bins_hold(const SecurityParams& params, std::size_t m_max) const noexcept {
    for (const auto& b : bins)
      if (b.q_mass > params.eps_prime / static_cast<double>(m_max) && b.q_delta > params.eps_ext + kOracleTolerance) return false;
    return true;
  }
};

namespace detail {

/// delta_m for one bin: output R = Ext(X, S) against F = (V, S, E), conditioned on the bin.
/// `table` has axes X (possibly with a trailing abort row), V, E; `in_bin(x, v)` selects the bin's atoms.
template <class InBin>
double bin_delta(std::span<const double> table, std::size_t nx, std::size_t nv, std::size_t ne, std::size_t n_in, std::size_t m_out,
                 double mass, InBin&& in_bin) {
  if (m_out == 0 || mass <= 0.0) return 0.0;
  const ToeplitzSpec spec(n_in, m_out);
  const std::size_t seeds = std::size_t{1} << spec.seed_len(), nr = std::size_t{1} << m_out;
  const std::size_t nf = nv * seeds * ne;
  std::vector<double> joint(nr * nf, 0.0);
  const double ps = 1.0 / static_cast<double>(seeds);
  std::vector<std::uint64_t> rows;
  for (std::size_t s = 0; s < seeds; ++s) {
    toeplitz_rows(n_in, m_out, s, rows);
    for (std::size_t x = 0; x < nx; ++x)
      for (std::size_t v = 0; v < nv; ++v) {
        if (!in_bin(x, v)) continue;
        const std::uint64_t r = apply_rows(rows, x);
        for (std::size_t e = 0; e < ne; ++e) {
          const double p = table[(x * nv + v) * ne + e];
          if (p > 0.0) joint[r * nf + (v * seeds + s) * ne + e] += p * ps / mass;
        }
      }
  }
  return delta_randomness(JointDistribution({Axis("R", nr), Axis("F", nf)}, std::move(joint)), "R", "F");
}

}  // namespace detail

/// Exact distributions of the protocol output per bin for a mixture adversary at small n (binary outputs).
inline ExactAccount exact_security_account(const AdversaryMixture& mix, const InputDistribution& inputs, const BellExpression& expr,
                                           const BoundFunction& bound, const ThresholdLadder& ladder, const SecurityParams& params,
                                           std::size_t n) {
  const auto d = expr.dims();
  if (d.x != 2 || d.y != 2) throw ShapeError("exact account: binary outputs only");
  const std::size_t n_in = 2 * n;
  if (n_in > 12) throw CapacityError("exact account: at most 6 rounds");
  ExactAccount acc;
  acc.n = n;
  acc.mu = mu(expr, inputs, n, params.eps);
  acc.composed = params.eps + params.eps_prime + params.eps_ext;
  const JointDistribution p = mixture_distribution(mix, inputs, n);
  const Lemma3Result l3 = lemma3_construct(p, expr, inputs, bound, ladder, acc.mu);
  acc.distance_pq = l3.distance;

  const std::size_t nx = p.axes()[0].size, nv = p.axes()[1].size, ne = p.axes()[2].size;
  std::vector<std::size_t> bin_of(nx * nv);
  std::vector<Round> rounds;
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t v = 0; v < nv; ++v) {
      detail::decode_rounds(d, n, x, v, rounds);
      bin_of[x * nv + v] = ladder.bin(estimator(expr, inputs, rounds));
    }

  for (std::size_t m = 1; m < ladder.m_max(); ++m) {
    ExactBin b;
    b.m = m;
    b.k = certified_entropy(bound, n, ladder.threshold(m), acc.mu, ladder.m_max(), params.eps_prime);
    b.m_out = std::min(output_length(b.k, params.eps_ext), n_in);
    auto in_bin = [&](std::size_t x, std::size_t v) { return x < nx && bin_of[x * nv + v] == m; };
    for (std::size_t x = 0; x < nx; ++x)
      for (std::size_t v = 0; v < nv; ++v)
        if (bin_of[x * nv + v] == m)
          for (std::size_t e = 0; e < ne; ++e) {
            b.p_mass += p.probs()[(x * nv + v) * ne + e];
            b.q_mass += l3.q.probs()[(x * nv + v) * ne + e];
          }
    b.p_delta = detail::bin_delta(p.probs(), nx, nv, ne, n_in, b.m_out, b.p_mass, in_bin);
    b.q_delta = detail::bin_delta(l3.q.probs(), nx, nv, ne, n_in, b.m_out, b.q_mass, in_bin);
    for (const auto& be : l3.bins)
      if (be.m == m) b.q_h_min = be.h_min;
    acc.weighted += b.p_mass * b.p_delta;
    acc.bins.push_back(b);
  }
  return acc;
}

}  // namespace direx
