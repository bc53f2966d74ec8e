#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dermnet {

/// Deterministic random helper around mt19937_64. The gaussian and shuffle
/// routines are spelled out here instead of using std::normal_distribution /
/// std::shuffle, whose output sequences are implementation-defined; every
/// seeded result in this project must be reproducible bit for bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Lemire multiply-shift; slight modulo bias is
  /// irrelevant at 64 bits.
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<__uint128_t>(gen_()) * static_cast<__uint128_t>(n)) >> 64);
  }

  bool coin() { return (gen_() >> 63) != 0; }

  /// Standard normal via Box-Muller, one cached value per pair.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  float gaussian(float stddev) { return static_cast<float>(gaussian()) * stddev; }

  /// Fisher-Yates with a pinned sequence.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// FNV-1a fold of a string tag into a seed; used to derive independent
/// per-sample / per-epoch streams from one master seed.
inline uint64_t mix_seed(uint64_t seed, std::string_view tag) {
  uint64_t h = 14695981039346656037ull ^ (seed * 0x9e3779b97f4a7c15ull);
  for (const char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t h = seed * 0x9e3779b97f4a7c15ull + salt + 0x2545f4914f6cdd1dull;
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

}  // namespace dermnet
