#pragma once

// Two-qubit states and binary projective measurements.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <istream>
#include <numbers>
#include <string>
#include <vector>

#include "direx/bell.hpp"
#include "direx/error.hpp"
#include "direx/prob.hpp"
#include "direx/rng.hpp"

namespace direx {

using cplx = std::complex<double>;

/// 4x4 complex matrix, row-major, basis |ab> at index 2a + b.
using Mat4 = std::array<cplx, 16>;
using Mat2 = std::array<cplx, 4>;
using Bloch = std::array<double, 3>;

namespace detail {

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations.
template <std::size_t N>
std::array<double, N> symmetric_eigenvalues(std::array<double, N * N> a) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = i + 1; j < N; ++j) off += a[i * N + j] * a[i * N + j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t q = p + 1; q < N; ++q) {
        const double apq = a[p * N + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * N + q] - a[p * N + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < N; ++k) {
          const double akp = a[k * N + p], akq = a[k * N + q];
          a[k * N + p] = c * akp - s * akq;
          a[k * N + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < N; ++k) {
          const double apk = a[p * N + k], aqk = a[q * N + k];
          a[p * N + k] = c * apk - s * aqk;
          a[q * N + k] = s * apk + c * aqk;
        }
      }
  }
  std::array<double, N> ev{};
  for (std::size_t i = 0; i < N; ++i) ev[i] = a[i * N + i];
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

inline Mat4 kron(const Mat2& a, const Mat2& b) {
  Mat4 out{};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t l = 0; l < 2; ++l) out[(2 * i + k) * 4 + (2 * j + l)] = a[i * 2 + j] * b[k * 2 + l];
  return out;
}

/// Projector onto outcome x of the measurement along Bloch direction n.
inline Mat2 projector(const Bloch& n, std::size_t x) {
  const double s = x == 0 ? 0.5 : -0.5;
  return {cplx(0.5 + s * n[2], 0.0), cplx(s * n[0], -s * n[1]), cplx(s * n[0], s * n[1]), cplx(0.5 - s * n[2], 0.0)};
}

}  // namespace detail

/// Validated two-qubit density matrix.
class TwoQubitState {
 public:
  explicit TwoQubitState(const Mat4& rho) : rho_(rho) {
    cplx trace = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      trace += rho_[i * 4 + i];
      for (std::size_t j = 0; j < 4; ++j)
        if (std::abs(rho_[i * 4 + j] - std::conj(rho_[j * 4 + i])) > 1e-12)
          throw ValidationError("two-qubit state: not Hermitian");
    }
    if (std::abs(trace - 1.0) > 1e-12) throw ValidationError("two-qubit state: trace is not 1");
    if (eigenvalues()[3] < -1e-10) throw ValidationError("two-qubit state: not positive semidefinite");
  }

  static TwoQubitState maximally_mixed() {
    Mat4 m{};
    for (std::size_t i = 0; i < 4; ++i) m[i * 4 + i] = 0.25;
    return TwoQubitState(m);
  }

  /// |psi><psi| for a (normalised on construction) pure state.
  static TwoQubitState pure(std::array<cplx, 4> psi) {
    double norm = 0.0;
    for (auto c : psi) norm += std::norm(c);
    if (!(norm > 0.0)) throw ValidationError("two-qubit state: zero vector");
    Mat4 m{};
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) m[i * 4 + j] = psi[i] * std::conj(psi[j]) / norm;
    return TwoQubitState(m);
  }

  /// (|01> - |10>) / sqrt(2)
  static TwoQubitState singlet() {
    const double h = 1.0 / std::numbers::sqrt2;
    return pure({0.0, h, -h, 0.0});
  }

  const Mat4& matrix() const noexcept { return rho_; }

  /// Descending.
  std::array<double, 4> eigenvalues() const {
    // H = A + iB is spectrally equivalent to [[A, -B], [B, A]] with doubled multiplicities.
    std::array<double, 64> r{};
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const double re = rho_[i * 4 + j].real(), im = rho_[i * 4 + j].imag();
        r[i * 8 + j] = re;
        r[(i + 4) * 8 + (j + 4)] = re;
        r[i * 8 + (j + 4)] = -im;
        r[(i + 4) * 8 + j] = im;
      }
    const auto ev8 = detail::symmetric_eigenvalues<8>(r);
    return {ev8[0], ev8[2], ev8[4], ev8[6]};
  }

  friend TwoQubitState mix(const TwoQubitState& a, const TwoQubitState& b, double weight_a) {
    Mat4 m{};
    for (std::size_t i = 0; i < 16; ++i) m[i] = weight_a * a.rho_[i] + (1.0 - weight_a) * b.rho_[i];
    return TwoQubitState(m);
  }

 private:
  Mat4 rho_{};
};

/// nu |psi-><psi-| + (1 - nu) I/4.
inline TwoQubitState werner_state(double visibility) {
  if (!(visibility >= 0.0 && visibility <= 1.0)) throw ParameterError("werner state: visibility must lie in [0, 1]");
  return mix(TwoQubitState::singlet(), TwoQubitState::maximally_mixed(), visibility);
}

/// One Bloch direction per input value of a party.
class MeasurementSetting {
 public:
  MeasurementSetting() = default;
  explicit MeasurementSetting(std::vector<Bloch> directions) : dirs_(std::move(directions)) {
    if (dirs_.empty()) throw ValidationError("measurement setting: no inputs");
    for (const auto& n : dirs_) {
      const double norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      if (std::abs(norm - 1.0) > 1e-12) throw ValidationError("measurement setting: Bloch vector is not unit length");
    }
  }

  std::size_t inputs() const noexcept { return dirs_.size(); }
  const Bloch& direction(std::size_t input) const { return dirs_.at(input); }
  const std::vector<Bloch>& directions() const noexcept { return dirs_; }

 private:
  std::vector<Bloch> dirs_;
};

struct SettingsPair {
  MeasurementSetting a;
  MeasurementSetting b;
};

/// A measures Z, X; B measures -(Z+X)/sqrt2, (X-Z)/sqrt2. Gives CHSH = 2 sqrt2 on the singlet.
inline SettingsPair chsh_optimal_settings() {
  const double h = 1.0 / std::numbers::sqrt2;
  return {MeasurementSetting({{0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}}), MeasurementSetting({{-h, 0.0, -h}, {h, 0.0, -h}})};
}

/// P(xy|vw) = tr[(Pa(x|v) (x) Pb(y|w)) rho] for projective qubit measurements.
inline ConditionalTable measure_pair(const TwoQubitState& state, const MeasurementSetting& a, const MeasurementSetting& b) {
  const BellDims dims{2, 2, a.inputs(), b.inputs()};
  std::vector<double> p(dims.size());
  const auto& rho = state.matrix();
  for (std::size_t v = 0; v < dims.v; ++v)
    for (std::size_t w = 0; w < dims.w; ++w)
      for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t y = 0; y < 2; ++y) {
          const Mat4 m = detail::kron(detail::projector(a.direction(v), x), detail::projector(b.direction(w), y));
          cplx tr = 0.0;
          for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) tr += m[i * 4 + j] * rho[j * 4 + i];
          p[((v * dims.w + w) * 2 + x) * 2 + y] = std::max(0.0, tr.real());
        }
  // renormalise away rounding so the table validates at 1e-9
  for (std::size_t s = 0; s < dims.inputs(); ++s) {
    double total = 0.0;
    for (std::size_t k = 0; k < 4; ++k) total += p[s * 4 + k];
    for (std::size_t k = 0; k < 4; ++k) p[s * 4 + k] /= total;
  }
  return ConditionalTable(dims, std::move(p));
}

inline ConditionalTable measure_pair(const TwoQubitState& state, const SettingsPair& s) { return measure_pair(state, s.a, s.b); }

/// Lines "party input bloch_x bloch_y bloch_z", party A or B.
inline SettingsPair read_settings(std::istream& in) {
  std::vector<std::pair<std::size_t, Bloch>> a, b;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    if (tok.size() != 5 || (tok[0] != "A" && tok[0] != "B")) throw ParseError("expected 'party input bx by bz'", lineno);
    const Bloch n{detail::parse_double(tok[2], lineno), detail::parse_double(tok[3], lineno), detail::parse_double(tok[4], lineno)};
    (tok[0] == "A" ? a : b).emplace_back(detail::parse_size(tok[1], lineno), n);
  }
  auto assemble = [](std::vector<std::pair<std::size_t, Bloch>> entries, const char* party) {
    std::sort(entries.begin(), entries.end(), [](auto& l, auto& r) { return l.first < r.first; });
    std::vector<Bloch> dirs;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].first != i) throw ParseError(std::string("settings: inputs of party ") + party + " must be 0..k-1");
      dirs.push_back(entries[i].second);
    }
    return MeasurementSetting(std::move(dirs));
  };
  return {assemble(std::move(a), "A"), assemble(std::move(b), "B")};
}

// ---------------------------------------------------------------------------
// Random physical behaviours, used to build test families.

namespace detail {

inline double gaussian(Rng& rng) {
  double u1 = rng.uniform();
  while (u1 <= 0.0) u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

/// rho = G G^dagger / tr(G G^dagger) with G a complex Ginibre matrix of the given rank.
inline TwoQubitState random_state(Rng& rng, std::size_t rank = 4) {
  std::vector<cplx> g(4 * rank);
  for (auto& z : g) z = cplx(detail::gaussian(rng), detail::gaussian(rng));
  Mat4 m{};
  double tr = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      cplx s = 0.0;
      for (std::size_t k = 0; k < rank; ++k) s += g[i * rank + k] * std::conj(g[j * rank + k]);
      m[i * 4 + j] = s;
    }
  for (std::size_t i = 0; i < 4; ++i) tr += m[i * 4 + i].real();
  for (auto& z : m) z /= tr;
  // exact Hermitian symmetry after rounding
  for (std::size_t i = 0; i < 4; ++i) {
    m[i * 4 + i] = cplx(m[i * 4 + i].real(), 0.0);
    for (std::size_t j = i + 1; j < 4; ++j) m[j * 4 + i] = std::conj(m[i * 4 + j]);
  }
  return TwoQubitState(m);
}

inline Bloch random_direction(Rng& rng) {
  for (;;) {
    Bloch n{detail::gaussian(rng), detail::gaussian(rng), detail::gaussian(rng)};
    const double norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (norm < 1e-6) continue;
    for (auto& c : n) c /= norm;
    return n;
  }
}

inline SettingsPair random_settings(Rng& rng, std::size_t inputs_a = 2, std::size_t inputs_b = 2) {
  std::vector<Bloch> a(inputs_a), b(inputs_b);
  for (auto& n : a) n = random_direction(rng);
  for (auto& n : b) n = random_direction(rng);
  return {MeasurementSetting(std::move(a)), MeasurementSetting(std::move(b))};
}

}  // namespace direx
