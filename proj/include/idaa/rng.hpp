#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "idaa/error.hpp"

namespace idaa {

// splitmix64; used to derive independent per-task seeds from (seed, index).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distributions are hand-rolled because std:: distributions are not, and
// reproducibility across toolchains is part of the contract.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds, rejection-sampled so the draw is exactly uniform
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw ValueError("uniform_int: hi < lo");
    uint64_t range = uint64_t(hi) - uint64_t(lo) + 1;
    uint64_t limit = ~uint64_t(0) - (~uint64_t(0) % range);
    uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return lo + int(v % range);
  }

  // standard normal, Box-Muller (fixed two-draw consumption per call)
  double normal() {
    double u1 = double((gen_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = double(gen_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Beta(a, b) via the gamma ratio; Beta(1,1) short-circuits to uniform.
  double beta(double a, double b) {
    if (a <= 0.0 || b <= 0.0) throw ValueError("beta: parameters must be > 0");
    if (a == 1.0 && b == 1.0) return uniform();
    double x = gamma(a);
    double y = gamma(b);
    double s = x + y;
    return s > 0.0 ? x / s : 0.5;
  }

 private:
  // Marsaglia-Tsang; boosted for shape < 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = double((gen_() >> 11) + 1) * 0x1.0p-53;
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = double((gen_() >> 11) + 1) * 0x1.0p-53;
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  std::mt19937_64 gen_;
};

}  // namespace idaa
