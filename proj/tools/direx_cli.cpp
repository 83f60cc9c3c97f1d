#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "direx/protocol.hpp"

using namespace direx;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kAbort = 2, kViolation = 3, kUsage = 4;

std::size_t resolve_jobs(std::size_t jobs) { return detail::resolve_jobs(jobs); }

/// A device spec ("singlet", "werner:0.9", ...), a strategy file, or a config naming a device.
AutomatonRules load_device(const std::string& arg) {
  const fs::path p(arg);
  if (fs::is_regular_file(p)) {
    if (p.extension() == ".cfg") {
      const auto c = load_config(p);
      if (!c.device.rules) throw ParameterError("config " + arg + " names no simulated device");
      return *c.device.rules;
    }
    std::ifstream in(p);
    return read_strategy(in);
  }
  const auto d = parse_device(arg);
  if (!d.rules) throw ParameterError("device " + arg + " is not simulable");
  return *d.rules;
}

ProtocolConfig config_or_default(const std::string& path) {
  if (!path.empty()) return load_config(path);
  return ProtocolConfig{};
}

std::vector<double> parse_probs(const std::string& text) {
  std::vector<double> q;
  for (const auto& tok : detail::split_ws(text)) q.push_back(detail::parse_real(tok, 0));
  return q;
}

struct OracleArgs {
  std::string check = "all";
  std::string config;
  std::string device = "singlet";
  std::optional<std::size_t> n;
  std::size_t trials = 1000;
  double mu = 0.5;
  std::string eps = "0.05";
  std::string q = "0.48 0.52";
};

bool oracle_lemma1(const OracleArgs& a, const ProtocolConfig& c, std::ostream& out) {
  const auto rules = load_device(a.device);
  const std::size_t n = a.n.value_or(4);
  const auto r = lemma1_oracle(rules, c.inputs, c.expr, c.bound, n, a.mu);
  out << "lemma1 " << (r.passed() ? "pass" : "FAIL") << " n=" << n << " mu=" << detail::format_double(a.mu)
      << " atoms=" << r.atoms << " members=" << r.members << " violations=" << r.violations
      << " min_slack=" << detail::format_double(r.min_slack);
  if (!r.passed()) out << " first=" << r.first_violation;
  out << '\n';
  return r.passed();
}

bool oracle_lemma2(const OracleArgs& a, const ProtocolConfig& c, std::uint64_t seed, std::size_t jobs, std::ostream& out) {
  const auto rules = load_device(a.device);
  const std::size_t n = a.n.value_or(1000);
  const double eps = detail::parse_real(a.eps, 0);
  const auto r = lemma2_montecarlo(rules, c.inputs, c.expr, n, eps, a.trials, seed, jobs);
  out << "lemma2 " << (r.passed() ? "pass" : "FAIL") << " n=" << n << " eps=" << detail::format_double(eps)
      << " trials=" << r.trials << " frequency=" << detail::format_double(r.frequency)
      << " limit=" << detail::format_double(r.eps + 3.0 * r.sigma) << '\n';
  return r.passed();
}

bool oracle_lemma3(const OracleArgs& a, const ProtocolConfig& c, std::ostream& out) {
  const std::size_t n = a.n.value_or(2);
  AdversaryMixture mix(Distribution({0.5, 0.5}), {load_device(a.device), AutomatonRules::constant(0, 0)});
  const auto r = lemma3_construct(mixture_distribution(mix, c.inputs, n), c.expr, c.inputs, c.bound, c.ladder, a.mu);
  out << "lemma3 " << (r.passed() ? "pass" : "FAIL") << " n=" << n << " mu=" << detail::format_double(a.mu)
      << " distance=" << detail::format_double(r.distance) << " non_g_mass=" << detail::format_double(r.non_g_mass)
      << " min_slack=" << detail::format_double(r.min_slack) << " entropy_bounds=" << (r.entropy_holds() ? "hold" : "violated")
      << '\n';
  return r.passed();
}

bool oracle_sampler(const OracleArgs& a, std::size_t jobs, std::ostream& out) {
  const auto q = parse_probs(a.q);
  const std::size_t n = a.n.value_or(10);
  const auto regime = sampler_regime(q, n);
  const double d = sampler_distance_by_enumeration(SequenceSampler(q), n, regime.m, jobs);
  const bool ok = d <= regime.error_bound;
  out << "sampler " << (ok ? "pass" : "FAIL") << " n=" << n << " m=" << regime.m << " distance=" << detail::format_double(d)
      << " bound=" << detail::format_double(regime.error_bound) << '\n';
  return ok;
}

bool oracle_extractor(std::uint64_t seed, std::size_t jobs, std::ostream& out) {
  Rng rng(seed);
  const std::size_t n = 8, size = std::size_t{1} << n;
  std::size_t checks = 0, failures = 0;
  double worst = 0.0;
  for (std::size_t k = 3; k <= 7; ++k) {
    std::vector<std::size_t> idx(size);
    for (std::size_t i = 0; i < size; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> p(size, 0.0);
    for (std::size_t i = 0; i < (std::size_t{1} << k); ++i) p[idx[i]] = std::ldexp(1.0, -static_cast<int>(k));
    const JointDistribution src({Axis("R", size)}, p);
    for (std::size_t m = 1; m < k; ++m) {
      const auto c = exact_distance_check(src, ToeplitzSpec(n, m), static_cast<double>(k), jobs);
      ++checks;
      if (!c.within_bound()) ++failures;
      worst = std::max(worst, c.distance / c.bound);
    }
  }
  out << "extractor " << (failures == 0 ? "pass" : "FAIL") << " checks=" << checks << " failures=" << failures
      << " worst_ratio=" << detail::format_double(worst) << '\n';
  return failures == 0;
}

int run_oracle(const OracleArgs& a, std::uint64_t seed, std::size_t jobs) {
  const auto c = config_or_default(a.config);
  bool ok = true;
  const bool all = a.check == "all";
  if (all || a.check == "lemma1") ok &= oracle_lemma1(a, c, std::cout);
  if (all || a.check == "lemma2") ok &= oracle_lemma2(a, c, seed, jobs, std::cout);
  if (all || a.check == "lemma3") ok &= oracle_lemma3(a, c, std::cout);
  if (all || a.check == "sampler") ok &= oracle_sampler(a, jobs, std::cout);
  if (all || a.check == "extractor") ok &= oracle_extractor(seed, jobs, std::cout);
  return ok ? kOk : kViolation;
}

int run_simulate(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out_path) {
  const auto c = load_config(config);
  const auto t = acquire_transcript(c, seed.value_or(c.seed));
  if (!t) {
    std::cerr << "input sampler aborted\n";
    return kAbort;
  }
  if (out_path.empty()) {
    write_transcript(std::cout, *t);
  } else {
    std::ofstream out(out_path);
    if (!out) throw Error("cannot write " + out_path);
    write_transcript(out, *t);
  }
  return kOk;
}

int run_certify(const std::string& config, const std::string& transcript, std::optional<std::uint64_t> seed) {
  auto c = load_config(config);
  if (!transcript.empty()) c.device = parse_device("transcript:" + fs::absolute(transcript).string());
  const auto t = acquire_transcript(c, seed.value_or(c.seed));
  if (!t) {
    std::cerr << "input sampler aborted\n";
    return kAbort;
  }
  const auto r = certify(c.expr, c.inputs, c.bound, c.ladder, c.params, t->rounds);
  std::cout << "format=1\n";
  for (const auto& [k, v] : c.echo) std::cout << "config." << k << '=' << v << '\n';
  if (!transcript.empty()) std::cout << "transcript=" << transcript << '\n';
  write_certification(std::cout, r);
  bool oracle_ok = true;
  if (c.device.rules) {
    const bool physical = !c.device.rules->non_physical();
    const auto l1 = lemma1_oracle(*c.device.rules, c.inputs, c.expr, c.bound, 4, 0.5);
    std::cout << "oracle.no_signalling=" << (physical ? "pass" : "fail") << '\n'
              << "oracle.lemma1=" << (l1.passed() ? "pass" : "fail") << '\n';
    oracle_ok = physical && l1.passed();
  } else {
    std::cout << "oracle.no_signalling=skipped\noracle.lemma1=skipped\n";
  }
  if (!oracle_ok) {
    std::cerr << "device fails the soundness oracles; the certificate does not apply\n";
    return kViolation;
  }
  return r.abort ? kAbort : kOk;
}

int run_extract(const std::string& raw_path, double k, const std::string& eps_ext, const std::string& ext_seed_path,
                std::uint64_t seed, const std::string& out_dir, std::size_t jobs) {
  const auto raw = read_bits(raw_path);
  const std::size_t m = std::min(output_length(k, detail::parse_real(eps_ext, 0)), raw.size());
  const ToeplitzSpec spec = raw.size() == 0 ? ToeplitzSpec{} : ToeplitzSpec(raw.size(), m);
  BitVector s;
  if (!ext_seed_path.empty()) {
    s = read_bits(ext_seed_path);
    if (s.size() < spec.seed_len()) throw ShapeError("extractor seed has " + std::to_string(s.size()) + " bits, need " +
                                                     std::to_string(spec.seed_len()));
    s = s.slice(0, spec.seed_len());
  } else {
    Rng rng = Rng::derive(seed, kExtractorStream);
    s = BitVector::random(spec.seed_len(), rng);
  }
  const auto out = m == 0 ? BitVector() : extract(raw, s, spec, jobs);
  fs::create_directories(out_dir);
  write_bits(fs::path(out_dir) / "extractor_seed.bin", s);
  write_bits(fs::path(out_dir) / "random.bin", out);
  std::cout << "format=1\nn_in=" << raw.size() << "\nk=" << detail::format_double(k) << "\nm_out=" << out.size()
            << "\nextractor_seed_bits=" << s.size() << '\n';
  return m == 0 ? kAbort : kOk;
}

int run_sample(const std::string& q_text, std::size_t n, const std::string& eps_inp, std::uint64_t seed) {
  const auto q = parse_probs(q_text);
  const std::size_t bits = seed_budget(q, n, detail::parse_real(eps_inp, 0));
  Rng rng = Rng::derive(seed, kInputStream);
  const auto s = BitVector::random(bits, rng);
  const auto r = SequenceSampler(q).sample(s, n);
  std::cout << "format=1\nn=" << n << "\nseed_bits=" << bits << "\nbits_used=" << r.bits_used << "\nabort=" << (r.symbols ? 0 : 1)
            << '\n';
  if (!r.symbols) return kAbort;
  std::cout << "symbols=";
  for (std::size_t i = 0; i < r.symbols->size(); ++i) std::cout << (i ? " " : "") << (*r.symbols)[i];
  std::cout << '\n';
  return kOk;
}

int run_run(const std::string& config, std::optional<std::uint64_t> seed, std::size_t jobs, const std::string& out_dir) {
  const auto c = load_config(config);
  const auto run = run_protocol(c, seed, jobs);
  write_report(std::cout, c, run);
  if (!out_dir.empty()) write_run(out_dir, c, run);
  if (run.input_failure) std::cerr << "input sampler aborted\n";
  else if (run.aborted()) std::cerr << "Bell estimate below the first certifying threshold; aborting\n";
  return run.exit_code();
}

int run_verify(const std::string& config, const std::string& dir, std::optional<std::uint64_t> seed, std::size_t jobs) {
  const auto c = load_config(config);
  auto r = verify_run(dir, c, jobs);
  if (seed) {
    const auto recorded = KeyValueFile::load(fs::path(dir) / "report.txt").get("seed");
    if (recorded != std::to_string(*seed)) r.failures.push_back("seed mismatch: report " + recorded + ", expected " + std::to_string(*seed));
  }
  std::cout << "format=1\nverify=" << (r.passed() ? "pass" : "fail") << '\n';
  for (const auto& f : r.failures) std::cout << "failure=" << f << '\n';
  return r.passed() ? kOk : kViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Device-independent randomness expansion: simulation, certification and extraction"};
  app.require_subcommand(1);
  int format = 1;
  app.add_option("--format", format, "File format version")->check(CLI::IsMember({1}));

  std::string config, transcript, out, out_dir, raw, ext_seed, q = "0.25 0.25 0.25 0.25";
  std::string eps_ext = "2^-20", eps_inp = "2^-20";
  std::uint64_t seed = 0;
  std::size_t jobs = 1, n = 0;
  double k = 0.0;
  OracleArgs oa;

  auto add_seed = [&](CLI::App* s) { return s->add_option("--seed", seed, "Master seed"); };
  auto add_jobs = [&](CLI::App* s) { s->add_option("--jobs", jobs, "Worker threads (0: all cores)")->capture_default_str(); };

  auto* sim = app.add_subcommand("simulate", "Run a device on sampled inputs and write the transcript");
  sim->add_option("--config", config, "Protocol config")->required();
  auto* sim_seed = add_seed(sim);
  sim->add_option("--out", out, "Transcript file (default stdout)");

  auto* cert = app.add_subcommand("certify", "Certify a transcript (given or simulated)");
  cert->add_option("--config", config, "Protocol config")->required();
  cert->add_option("--transcript", transcript, "Transcript to certify")->check(CLI::ExistingFile);
  auto* cert_seed = add_seed(cert);

  auto* ext = app.add_subcommand("extract", "Apply the Toeplitz extractor to a raw bit file");
  ext->add_option("--raw", raw, "Raw bits (.bin with .meta)")->required()->check(CLI::ExistingFile);
  ext->add_option("--k", k, "Certified min-entropy")->required();
  ext->add_option("--eps-ext", eps_ext, "Extractor error")->capture_default_str();
  ext->add_option("--ext-seed", ext_seed, "Extractor seed bits (default: derived from --seed)")->check(CLI::ExistingFile);
  ext->add_option("--out-dir", out_dir, "Output directory")->required();
  add_seed(ext);
  add_jobs(ext);

  auto* smp = app.add_subcommand("sample", "Sample an input sequence from uniform seed bits");
  smp->add_option("--q", q, "Probabilities, whitespace separated")->capture_default_str();
  smp->add_option("--n", n, "Sequence length")->required();
  smp->add_option("--eps-inp", eps_inp, "Sampling error")->capture_default_str();
  add_seed(smp);

  auto* run = app.add_subcommand("run", "Full protocol: inputs, device, certificate, extraction");
  run->add_option("--config", config, "Protocol config")->required();
  auto* run_seed = add_seed(run);
  add_jobs(run);
  run->add_option("--out-dir", out_dir, "Write run artifacts here");

  auto* ver = app.add_subcommand("verify", "Recompute a run directory from its config and compare");
  ver->add_option("--config", config, "Protocol config")->required();
  ver->add_option("--out-dir", out_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  auto* ver_seed = add_seed(ver);
  add_jobs(ver);

  auto* orc = app.add_subcommand("oracle", "Run soundness oracles");
  orc->add_option("check", oa.check, "lemma1 | lemma2 | lemma3 | sampler | extractor | all")
      ->check(CLI::IsMember({"lemma1", "lemma2", "lemma3", "sampler", "extractor", "all"}))
      ->capture_default_str();
  orc->add_option("--config", oa.config, "Protocol config for the Bell expression, inputs and ladder");
  orc->add_option("--device", oa.device, "Device spec, strategy file or config")->capture_default_str();
  orc->add_option("--n", oa.n, "Rounds");
  orc->add_option("--trials", oa.trials, "Monte Carlo trials")->capture_default_str();
  orc->add_option("--mu", oa.mu, "Margin for the exact oracles")->capture_default_str();
  orc->add_option("--eps", oa.eps, "Azuma failure probability for lemma2")->capture_default_str();
  orc->add_option("--q", oa.q, "Sampler distribution")->capture_default_str();
  add_seed(orc);
  add_jobs(orc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  auto opt_seed = [&](CLI::Option* o) { return o->count() ? std::optional<std::uint64_t>(seed) : std::nullopt; };
  try {
    jobs = resolve_jobs(jobs);
    if (*sim) return run_simulate(config, opt_seed(sim_seed), out);
    if (*cert) return run_certify(config, transcript, opt_seed(cert_seed));
    if (*ext) return run_extract(raw, k, eps_ext, ext_seed, seed, out_dir, jobs);
    if (*smp) return run_sample(q, n, eps_inp, seed);
    if (*run) return run_run(config, opt_seed(run_seed), jobs, out_dir);
    if (*ver) return run_verify(config, out_dir, opt_seed(ver_seed), jobs);
    if (*orc) return run_oracle(oa, seed, jobs);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return kUsage;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsage;
}
