#pragma once

// Toeplitz hashing over GF(2).
//
// Bit strings are packed most significant bit first: bit i of a string lives in
// word i / 64 at position 63 - i % 64, and byte serializations follow the same
// order. Row j of the m x n matrix is T[j][i] = s[i - j] for i >= j and
// s[n + (j - i) - 1] otherwise, so the first row is seed[0, n) and the first
// column continues with seed[n, n + m - 1).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "direx/bell.hpp"
#include "direx/error.hpp"
#include "direx/parallel.hpp"
#include "direx/prob.hpp"
#include "direx/rng.hpp"

namespace direx {

class BitVector {
 public:
  BitVector() = default;
  explicit BitVector(std::size_t bits) : size_(bits), words_((bits + 63) / 64, 0) {}

  static BitVector from_string(std::string_view text) {
    BitVector b(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
      if (text[i] != '0' && text[i] != '1') throw ParseError("bit string: expected only '0' and '1'");
      b.set(i, text[i] == '1');
    }
    return b;
  }

  /// The low `bits` bits of value, most significant first.
  static BitVector from_integer(std::uint64_t value, std::size_t bits) {
    BitVector b(bits);
    for (std::size_t i = 0; i < bits; ++i) b.set(i, (value >> (bits - 1 - i)) & 1u);
    return b;
  }

  static BitVector random(std::size_t bits, Rng& rng) {
    BitVector b(bits);
    for (auto& w : b.words_) w = rng();
    b.clear_tail();
    return b;
  }

  static BitVector from_bytes(std::span<const std::uint8_t> bytes, std::size_t bits) {
    if (bytes.size() * 8 < bits) throw ShapeError("bit vector: not enough bytes for the declared length");
    BitVector b(bits);
    for (std::size_t i = 0; i < bits; ++i) b.set(i, (bytes[i / 8] >> (7 - i % 8)) & 1u);
    return b;
  }

  std::vector<std::uint8_t> to_bytes() const {
    std::vector<std::uint8_t> out((size_ + 7) / 8, 0);
    for (std::size_t i = 0; i < size_; ++i)
      if (get(i)) out[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
    return out;
  }

  std::string to_string() const {
    std::string s(size_, '0');
    for (std::size_t i = 0; i < size_; ++i)
      if (get(i)) s[i] = '1';
    return s;
  }

  std::size_t size() const noexcept { return size_; }
  std::span<const std::uint64_t> words() const noexcept { return words_; }

  bool get(std::size_t i) const { return (words_[i / 64] >> (63 - i % 64)) & 1u; }
  void set(std::size_t i, bool value) {
    const std::uint64_t mask = std::uint64_t{1} << (63 - i % 64);
    if (value)
      words_[i / 64] |= mask;
    else
      words_[i / 64] &= ~mask;
  }

  void push_back(bool value) {
    if (size_ % 64 == 0) words_.push_back(0);
    ++size_;
    set(size_ - 1, value);
  }

  /// Bits [begin, begin + count).
  BitVector slice(std::size_t begin, std::size_t count) const {
    if (begin + count > size_) throw ShapeError("bit vector: slice out of range");
    BitVector b(count);
    for (std::size_t i = 0; i < count; ++i) b.set(i, get(begin + i));
    return b;
  }

  /// First `bits` bits as an integer, most significant first.
  std::uint64_t to_integer() const {
    if (size_ > 64) throw ShapeError("bit vector: too long for an integer");
    return size_ == 0 ? 0 : words_[0] >> (64 - size_);
  }

  BitVector& operator^=(const BitVector& other) {
    if (other.size_ != size_) throw ShapeError("bit vector: xor of different lengths");
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] ^= other.words_[i];
    return *this;
  }
  friend BitVector operator^(BitVector a, const BitVector& b) { return a ^= b; }
  friend bool operator==(const BitVector&, const BitVector&) = default;

 private:
  void clear_tail() {
    if (size_ % 64 != 0 && !words_.empty()) words_.back() &= ~std::uint64_t{0} << (64 - size_ % 64);
  }

  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

struct ToeplitzSpec {
  std::size_t n_in = 0;
  std::size_t m_out = 0;

  ToeplitzSpec() = default;
  ToeplitzSpec(std::size_t n, std::size_t m) : n_in(n), m_out(m) {
    if (n_in == 0) throw ParameterError("toeplitz: input length must be positive");
    if (m_out > n_in) throw ParameterError("toeplitz: output longer than input");
  }
  std::size_t seed_len() const noexcept { return m_out == 0 ? 0 : n_in + m_out - 1; }
};

/// floor(k - 2 log2(1/eps_ext)), or 0.
inline std::size_t output_length(double k, double eps_ext) {
  if (!(eps_ext > 0.0 && eps_ext < 1.0)) throw ParameterError("output length: eps_ext must lie in (0,1)");
  const double m = std::floor(k - 2.0 * std::log2(1.0 / eps_ext));
  return m > 0.0 ? static_cast<std::size_t>(m) : 0;
}

namespace detail {

/// u[d] = T[j][i] for d = i - j + m - 1; row j is the window u[m-1-j, m-1-j+n).
inline BitVector toeplitz_diagonals(const ToeplitzSpec& spec, const BitVector& seed) {
  const std::size_t m = spec.m_out, n = spec.n_in;
  BitVector u(n + m - 1);
  for (std::size_t d = 0; d + 1 < m; ++d) u.set(d, seed.get(n + (m - 1 - d) - 1));
  for (std::size_t i = 0; i < n; ++i) u.set(m - 1 + i, seed.get(i));
  return u;
}

}  // namespace detail

inline BitVector extract(const BitVector& raw, const BitVector& seed, const ToeplitzSpec& spec, std::size_t jobs = 1) {
  if (raw.size() != spec.n_in) throw ShapeError("extract: raw string has " + std::to_string(raw.size()) + " bits, spec expects " + std::to_string(spec.n_in));
  if (seed.size() != spec.seed_len()) throw ShapeError("extract: seed has " + std::to_string(seed.size()) + " bits, spec expects " + std::to_string(spec.seed_len()));
  const std::size_t m = spec.m_out;
  BitVector out(m);
  if (m == 0) return out;
  const BitVector u = detail::toeplitz_diagonals(spec, seed);
  const auto uw = u.words();
  const std::size_t raw_words = raw.words().size();
  const std::size_t shifted_words = uw.size() + 1;

  // shifted[s][k] holds bits [64k + s, 64k + s + 64) of u, so every window is word aligned in one copy.
  const std::size_t copies = std::min<std::size_t>(64, m);
  std::vector<std::uint64_t> shifted(copies * shifted_words, 0);
  for (std::size_t s = 0; s < copies; ++s)
    for (std::size_t k = 0; k < uw.size(); ++k) {
      const std::uint64_t hi = uw[k], lo = k + 1 < uw.size() ? uw[k + 1] : 0;
      shifted[s * shifted_words + k] = s == 0 ? hi : (hi << s) | (lo >> (64 - s));
    }

  const auto rw = raw.words();
  std::vector<std::uint8_t> bits(m);
  detail::parallel_chunks(m, jobs, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const std::size_t offset = m - 1 - j;
      const std::uint64_t* window = &shifted[(offset % 64) * shifted_words + offset / 64];
      std::uint64_t acc = 0;
      for (std::size_t k = 0; k < raw_words; ++k) acc ^= rw[k] & window[k];
      bits[j] = static_cast<std::uint8_t>(std::popcount(acc) & 1);
    }
  });
  for (std::size_t j = 0; j < m; ++j) out.set(j, bits[j] != 0);
  return out;
}

// ---------------------------------------------------------------------------
// Small-instance checks (n_in <= 64, everything fits in one word)

namespace detail {

/// Row masks for an integer seed; bit i of the input is bit (n-1-i) of the integer.
inline void toeplitz_rows(std::size_t n, std::size_t m, std::uint64_t seed, std::vector<std::uint64_t>& rows) {
  const std::size_t len = n + m - 1;
  auto seed_bit = [&](std::size_t i) -> std::uint64_t { return (seed >> (len - 1 - i)) & 1u; };
  rows.assign(m, 0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t b = i >= j ? seed_bit(i - j) : seed_bit(n + (j - i) - 1);
      rows[j] |= b << (n - 1 - i);
    }
}

inline std::uint64_t apply_rows(std::span<const std::uint64_t> rows, std::uint64_t raw) {
  std::uint64_t out = 0;
  for (auto r : rows) out = (out << 1) | static_cast<std::uint64_t>(std::popcount(r & raw) & 1);
  return out;
}

}  // namespace detail

/// Integer form of extract for n_in + m_out - 1 <= 63.
inline std::uint64_t extract_small(std::uint64_t raw, std::uint64_t seed, const ToeplitzSpec& spec) {
  if (spec.seed_len() > 63) throw CapacityError("extract_small: seed longer than 63 bits");
  std::vector<std::uint64_t> rows;
  detail::toeplitz_rows(spec.n_in, spec.m_out, seed, rows);
  return detail::apply_rows(rows, raw);
}

struct ExtractorCheck {
  double distance = 0.0;  ///< d(P_{Ext(R,S) S E}, U_m x P_S x P_E)
  double bound = 0.0;     ///< 2^{-(k - m)/2}
  bool within_bound() const noexcept { return distance <= bound; }
};

/// Exact strong-extractor distance over all seeds; source axes "R" (2^n_in outcomes) and optionally "E".
inline ExtractorCheck exact_distance_check(const JointDistribution& source, const ToeplitzSpec& spec, double claimed_k,
                                           std::size_t jobs = 1) {
  const auto& axes = source.axes();
  if (axes.empty() || axes[0].name != "R" || axes.size() > 2 || (axes.size() == 2 && axes[1].name != "E"))
    throw ShapeError("exact distance check: source must have axes R[, E]");
  if (spec.n_in > 12) throw CapacityError("exact distance check: at most 12 input bits");
  if (axes[0].size != (std::size_t{1} << spec.n_in)) throw ShapeError("exact distance check: R axis must have 2^n_in outcomes");
  const std::size_t ne = axes.size() == 2 ? axes[1].size : 1;
  const std::size_t nr = axes[0].size, nout = std::size_t{1} << spec.m_out;
  const std::size_t seeds = std::size_t{1} << spec.seed_len();
  const auto p = source.probs();
  std::vector<double> pe(ne, 0.0);
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t e = 0; e < ne; ++e) pe[e] += p[r * ne + e];

  const std::size_t workers = std::min(detail::resolve_jobs(jobs), seeds);
  std::vector<double> partial(workers, 0.0);
  detail::parallel_chunks(seeds, workers, [&](std::size_t w, std::size_t begin, std::size_t end) {
    std::vector<std::uint64_t> rows;
    std::vector<double> t(nout * ne);
    double sum = 0.0;
    for (std::size_t s = begin; s < end; ++s) {
      detail::toeplitz_rows(spec.n_in, spec.m_out, s, rows);
      std::fill(t.begin(), t.end(), 0.0);
      for (std::size_t r = 0; r < nr; ++r) {
        const std::uint64_t o = detail::apply_rows(rows, r);
        for (std::size_t e = 0; e < ne; ++e) t[o * ne + e] += p[r * ne + e];
      }
      double d = 0.0;
      for (std::size_t o = 0; o < nout; ++o)
        for (std::size_t e = 0; e < ne; ++e) d += std::abs(t[o * ne + e] - pe[e] / static_cast<double>(nout));
      sum += 0.5 * d;
    }
    partial[w] = sum;
  });
  ExtractorCheck c;
  for (double s : partial) c.distance += s;
  c.distance /= static_cast<double>(seeds);
  c.bound = std::pow(2.0, -(claimed_k - static_cast<double>(spec.m_out)) / 2.0);
  return c;
}

// ---------------------------------------------------------------------------
// Bit files: raw bytes, most significant bit first, with a "<path>.meta" sidecar.

inline void write_bits(const std::filesystem::path& path, const BitVector& bits) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    const auto bytes = bits.to_bytes();
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream meta(path.string() + ".meta");
  if (!meta) throw Error("cannot write " + path.string() + ".meta");
  meta << "format=1\nbits=" << bits.size() << '\n';
}

inline BitVector read_bits(const std::filesystem::path& path) {
  std::ifstream meta(path.string() + ".meta");
  if (!meta) throw Error("cannot read " + path.string() + ".meta");
  std::string line;
  std::optional<std::size_t> bits;
  int lineno = 0;
  while (std::getline(meta, line)) {
    ++lineno;
    if (line.empty() || line == "format=1") continue;
    if (line.rfind("bits=", 0) == 0) {
      bits = detail::parse_size(line.substr(5), lineno);
      continue;
    }
    throw ParseError("bits sidecar: unexpected entry '" + line + "'", lineno);
  }
  if (!bits) throw ParseError("bits sidecar: missing 'bits='");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != (*bits + 7) / 8) throw ParseError("bits file: length does not match its sidecar");
  return BitVector::from_bytes(bytes, *bits);
}

}  // namespace direx
