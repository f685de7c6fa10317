// Deterministic random source. mt19937_64 is fully specified by the
// standard and the distributions below are implemented by hand, so a seed
// produces the same stream on every platform and toolchain.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace flowhijack {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, cacheless: two uniforms per draw.
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Marsaglia-Tsang; for k < 1 uses the Gamma(k+1) boost.
  double gamma(double k) {
    if (k <= 0.0) throw std::invalid_argument("gamma: shape must be > 0");
    if (k < 1.0) {
      double u = 0.0;
      do {
        u = uniform();
      } while (u <= 0.0);
      return gamma(k + 1.0) * std::pow(u, 1.0 / k);
    }
    const double d = k - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double vcub = t * t * t;
      double u = 0.0;
      do {
        u = uniform();
      } while (u <= 0.0);
      if (std::log(u) < 0.5 * x * x + d - d * vcub + d * std::log(vcub))
        return d * vcub;
    }
  }

  double beta(double a, double b) {
    if (a <= 0.0 || b <= 0.0)
      throw std::invalid_argument("beta: parameters must be > 0");
    double ga = gamma(a);
    double gb = gamma(b);
    return ga / (ga + gb);
  }

  // splitmix64-style mix for deriving independent sub-streams.
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace flowhijack
