#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>

// Seeded RNG with explicit samplers. The distributions in <random> are not
// bit-identical across standard libraries, so normal/poisson draws are
// implemented here to keep event streams stable for a given seed.

namespace otpet {

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  double uniform() {  // [0,1)
    return (eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  uint64_t below(uint64_t n) {
    // modulo bias is irrelevant at our n << 2^64, but keep it unbiased anyway
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = eng_();
    } while (v >= limit);
    return v % n;
  }

  double normal() {  // Box-Muller, cached spare
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  // Poisson by multiplication (small mean) or normal approximation (large)
  int64_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 60.0) {
      double limit = std::exp(-mean), prod = uniform();
      int64_t n = 0;
      while (prod > limit) {
        prod *= uniform();
        ++n;
      }
      return n;
    }
    // rounded normal; adequate for the large-count regime used here
    double v = mean + std::sqrt(mean) * normal();
    return v < 0.0 ? 0 : int64_t(v + 0.5);
  }

  int64_t binomial(int64_t n, double p) {
    int64_t k = 0;
    for (int64_t i = 0; i < n; ++i)
      if (uniform() < p) ++k;
    return k;
  }

  std::array<double, 3> isotropic() {
    double z = uniform(-1.0, 1.0);
    double phi = uniform(0.0, 2.0 * M_PI);
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace otpet
