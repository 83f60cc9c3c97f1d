#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "direx/protocol.hpp"

using namespace direx;
namespace fs = std::filesystem;

namespace {

KeyValueFile kv(const std::string& text) {
  std::istringstream in(text);
  return KeyValueFile::parse(in);
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("direx_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ProtocolConfig small_config(std::size_t rounds, const std::string& device = "singlet") {
  return parse_config(kv("format=1\nrounds=" + std::to_string(rounds) + "\ndevice=" + device + "\nseed=99\n"));
}

}  // namespace

TEST(KeyValue, ParsesAndRejects) {
  const auto f = kv("format=1\n# comment\n  rounds = 5  \nname=a=b\n");
  EXPECT_EQ(f.get("rounds"), "5");
  EXPECT_EQ(f.get("name"), "a=b");
  EXPECT_EQ(f.entry("name").line, 4);
  EXPECT_THROW(kv("rounds=5\n"), ParseError);
  EXPECT_THROW(kv("format=2\n"), ParseError);
  EXPECT_THROW(kv("format=1\na=1\na=2\n"), ParseError);
  EXPECT_THROW(kv("format=1\njunk\n"), ParseError);
  EXPECT_THROW(kv("format=1\n").get("missing"), ParseError);
}

TEST(Config, Defaults) {
  const auto c = small_config(10);
  EXPECT_EQ(c.rounds, 10u);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.ladder.m_max(), 8u);
  EXPECT_EQ(c.params.eps, 0x1p-20);
  EXPECT_TRUE(c.replayable());
}

TEST(Config, Variants) {
  const auto c = parse_config(
      kv("format=1\nrounds=10\ndevice=werner:0.9\ninputs=biased:0.05\nladder=values:2 2.5 2.7 Iq\neps=2^-10\neps_ext=0.001\n"));
  EXPECT_DOUBLE_EQ(c.inputs.q_min(), 0.05);
  EXPECT_EQ(c.ladder.m_max(), 3u);
  EXPECT_EQ(c.params.eps, 0x1p-10);
  EXPECT_EQ(c.params.eps_ext, 0.001);
  const auto p = parse_config(kv("format=1\nrounds=10\ndevice=local\ninputs=p:0.4 0.2 0.2 0.2\n"));
  EXPECT_DOUBLE_EQ(p.inputs(0, 0), 0.4);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config(kv("format=1\nrounds=10\ndevice=singlet\ncolour=blue\n")), ParseError);
  EXPECT_THROW(parse_config(kv("format=1\nrounds=10\ndevice=singlet\nladder=values:1.9 2.5 Iq\n")), ValidationError);
  EXPECT_THROW(parse_config(kv("format=1\nrounds=10\ndevice=quantum\n")), ParseError);
  EXPECT_THROW(parse_config(kv("format=1\nrounds=0\ndevice=singlet\n")), ParameterError);
  EXPECT_THROW(parse_config(kv("format=1\nrounds=10\ndevice=singlet\neps=0\n")), ParameterError);
  EXPECT_THROW(parse_config(kv("format=1\ndevice=singlet\n")), ParseError);
  try {
    parse_config(kv("format=1\nrounds=10\ndevice=singlet\ninputs=biased:x\n"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4);
  }
}

TEST(Config, TranscriptDevice) {
  const auto c = load_config(fs::path(DIREX_DATA_DIR) / "local.cfg");
  EXPECT_FALSE(c.replayable());
  EXPECT_EQ(c.rounds, 400u);
  EXPECT_THROW(parse_config(kv("format=1\nrounds=3\ndevice=transcript:local_transcript.txt\n"), DIREX_DATA_DIR),
               ValidationError);
}

TEST(RawString, Layout) {
  Transcript t;
  t.rounds = {{0, 0, 1, 0}, {1, 1, 0, 1}, {0, 1, 1, 1}};
  EXPECT_EQ(raw_string(t, BellDims{}).to_string(), "100111");
  EXPECT_EQ(bits_for(2), 1u);
  EXPECT_EQ(bits_for(3), 2u);
  EXPECT_EQ(bits_for(1), 0u);
}

TEST(Run, HonestDevicesProduceCertifiedOutput) {
  const auto c = small_config(20000);
  const auto run = run_protocol(c);
  ASSERT_FALSE(run.aborted());
  EXPECT_EQ(run.exit_code(), 0);
  EXPECT_EQ(run.transcript.size(), 20000u);
  EXPECT_EQ(run.raw.size(), 40000u);
  EXPECT_EQ(run.output.size(), output_length(run.cert.k, c.params.eps_ext));
  EXPECT_GT(run.output.size(), 1000u);
  EXPECT_EQ(run.extractor_seed.size(), run.raw.size() + run.output.size() - 1);
  EXPECT_LE(run.input_bits_used, run.input_seed_bits);
  // uniform inputs: about 2 bits per round
  EXPECT_NEAR(static_cast<double>(run.input_bits_used), 40000.0, 100.0);
}

TEST(Run, DeterministicPerSeed) {
  const auto c = small_config(3000);
  const auto a = run_protocol(c), b = run_protocol(c, std::nullopt, 3), other = run_protocol(c, 100);
  EXPECT_EQ(report_text(c, a), report_text(c, b));
  EXPECT_EQ(a.output, b.output);
  EXPECT_EQ(a.transcript, b.transcript);
  EXPECT_NE(a.transcript, other.transcript);
  EXPECT_EQ(other.seed, 100u);
}

TEST(Run, LocalDevicesAbort) {
  const auto c = small_config(5000, "local");
  const auto run = run_protocol(c);
  EXPECT_TRUE(run.aborted());
  EXPECT_EQ(run.exit_code(), 2);
  EXPECT_EQ(run.output.size(), 0u);
  const auto t = run_protocol(load_config(fs::path(DIREX_DATA_DIR) / "local.cfg"));
  EXPECT_TRUE(t.aborted());
}

TEST(Run, ReportFields) {
  const auto c = small_config(2000);
  const auto run = run_protocol(c);
  const auto r = kv(report_text(c, run));
  EXPECT_EQ(r.get("config.rounds"), "2000");
  EXPECT_EQ(r.get("config.device"), "singlet");
  EXPECT_EQ(r.get("seed"), "99");
  EXPECT_EQ(r.get("m_out"), std::to_string(run.output.size()));
  EXPECT_EQ(r.get("raw_bits"), "4000");
  EXPECT_EQ(r.get("k"), detail::format_double(run.cert.k));
}

TEST(Verify, AcceptsUntouchedRunAndReportsTampering) {
  const auto c = small_config(20000);
  const auto run = run_protocol(c);
  const auto dir = fresh_dir("verify");
  write_run(dir, c, run);
  EXPECT_TRUE(fs::exists(dir / "secret" / "random.bin.meta"));
  const auto ok = verify_run(dir, c);
  EXPECT_TRUE(ok.passed()) << (ok.failures.empty() ? "" : ok.failures.front());

  // flip one output bit
  auto out = run.output;
  out.set(17, !out.get(17));
  write_bits(dir / "secret" / "random.bin", out);
  auto bad = verify_run(dir, c);
  ASSERT_FALSE(bad.passed());
  EXPECT_NE(bad.failures.back().find("bit 17"), std::string::npos) << bad.failures.back();
  write_bits(dir / "secret" / "random.bin", run.output);

  // change one recorded output
  auto t = run.transcript;
  t.rounds[5].x ^= 1;
  {
    std::ofstream f(dir / "secret" / "transcript.txt");
    write_transcript(f, t);
  }
  bad = verify_run(dir, c);
  ASSERT_FALSE(bad.passed());
  EXPECT_NE(bad.failures.front().find("round 5"), std::string::npos) << bad.failures.front();
  fs::remove_all(dir);
}

TEST(Verify, DetectsEditedReport) {
  const auto c = small_config(2000);
  const auto run = run_protocol(c);
  const auto dir = fresh_dir("verify_report");
  write_run(dir, c, run);
  std::string text = report_text(c, run);
  const auto pos = text.find("\nm=");
  text.replace(pos, 4, "\nm=9");
  {
    std::ofstream f(dir / "report.txt");
    f << text;
  }
  const auto bad = verify_run(dir, c);
  ASSERT_FALSE(bad.passed());
  EXPECT_NE(bad.failures.front().find("m mismatch"), std::string::npos) << bad.failures.front();
  fs::remove_all(dir);
}

TEST(ExactAccount, ConsistentWithQConstruction) {
  const auto expr = BellExpression::chsh();
  const auto u = InputDistribution::uniform();
  AdversaryMixture mix(Distribution({0.7, 0.3}), {honest_device(TwoQubitState::singlet()), AutomatonRules::constant(0, 1)});
  SecurityParams params;
  params.eps = 0.9999;
  params.eps_prime = params.eps_ext = 0.95;
  const ThresholdLadder ladder({2.0, 2.8, 2.0 * std::numbers::sqrt2});
  const auto acc = exact_security_account(mix, u, expr, BoundFunction::chsh(), ladder, params, 3);
  const auto l3 = lemma3_construct(mixture_distribution(mix, u, 3), expr, u, BoundFunction::chsh(), ladder, acc.mu);
  EXPECT_NEAR(acc.distance_pq, l3.non_g_mass, 1e-12);
  ASSERT_EQ(acc.bins.size(), 1u);
  const auto& b = acc.bins[0];
  EXPECT_GE(b.p_delta, 0.0);
  EXPECT_LE(b.p_delta, 1.0);
  EXPECT_NEAR(acc.weighted, b.p_mass * b.p_delta, 1e-15);
  EXPECT_THROW(exact_security_account(mix, u, expr, BoundFunction::chsh(), ladder, params, 7), CapacityError);
}
