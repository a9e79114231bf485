#pragma once

#include <cmath>
#include <cstdint>

// Counter-based stream derivation so that every independent unit of work
// (day, bootstrap replication, Monte Carlo run) owns its own generator.
// Results are then independent of thread count and scheduling order.

namespace cqte {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// xoshiro256** with splitmix-expanded seeding.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      x = splitmix64(x);
      word = x;
    }
  }

  // Derive a child stream keyed by up to three indices.
  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    std::uint64_t s = splitmix64(seed ^ splitmix64(a));
    s = splitmix64(s ^ splitmix64(b + 0x517cc1b727220a95ULL));
    s = splitmix64(s ^ splitmix64(c + 0x2545f4914f6cdd1dULL));
    return Rng(s);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1); never returns an exact endpoint.
  double uniform_open() {
    return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  // Standard normal via Box-Muller (pairless form: one value per call,
  // deterministic given the stream position).
  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  // Student-t with integer df, scaled so it stays deterministic and portable.
  double student_t(int df) {
    const double z = normal();
    double chi2 = 0.0;
    for (int k = 0; k < df; ++k) {
      const double g = normal();
      chi2 += g * g;
    }
    return z / std::sqrt(chi2 / static_cast<double>(df));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t state_[4];
};

// Inverse standard normal CDF (Acklam's rational approximation, |err| < 1.2e-9).
double normal_quantile(double p);

// Upper tail probability of the standard normal.
inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace cqte
