#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace seqtest {

// splitmix64 finalizer; bijective 64-bit mixer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-mode seed splitting. A child stream depends only on (root, stream
// index), so grids and trial counts can grow without perturbing the seeds of
// existing trials.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return mix64(root ^ mix64(stream));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(root, a), b);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c) {
  return derive_seed(derive_seed(root, a, b), c);
}

// Deterministic random source. All variates are generated from raw mt19937_64
// output through fixed arithmetic, so sequences are reproducible across
// platforms and standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // Uniform in the open interval (0, 1).
  double uniform() { return static_cast<double>((engine_() >> 11) + 0.5) * 0x1.0p-53; }

  // Uniform integer in [0, n), n >= 1.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return r % n;
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Gamma(shape, 1) via Marsaglia-Tsang, with the standard boost for shape < 1.
  double gamma(double shape) {
    if (shape == 1.0) return -std::log(uniform());
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      return g * std::pow(uniform(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Symmetric Dirichlet with concentration `conc` on `m` coordinates.
  std::vector<double> dirichlet(double conc, std::size_t m) {
    std::vector<double> w(m);
    double sum = 0.0;
    for (auto& x : w) {
      x = gamma(conc);
      sum += x;
    }
    for (auto& x : w) x /= sum;
    return w;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace seqtest
