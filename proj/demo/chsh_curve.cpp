// Prints the min-entropy rate bound f(I) for CHSH values from the local bound to Tsirelson's bound.
#include <cstdio>
#include <numbers>

#include "direx/bell.hpp"

int main() {
  const auto bound = direx::BoundFunction::chsh();
  const double lo = 2.0, hi = 2.0 * std::numbers::sqrt2;
  std::printf("%-10s %-12s %-12s\n", "I", "g(I)", "f(I)");
  for (int i = 0; i <= 20; ++i) {
    const double v = lo + (hi - lo) * i / 20.0;
    std::printf("%-10.5f %-12.8f %-12.8f\n", v, bound.g(v), bound.f(v));
  }
}
