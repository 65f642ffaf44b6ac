#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace selfdoc {

uint64_t splitmix64(uint64_t x);

/// Combines a base seed with a stream tag so independent streams (per-doc
/// generation, per-epoch shuffles, masking) never overlap.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

/// mt19937_64 plus hand-rolled uniform/normal transforms. The transforms are
/// written out (rather than std::*_distribution) so that a fixed seed yields
/// identical streams across standard-library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n));
  }

  /// Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  /// Normal truncated to |x| <= 2*sigma by resampling (BERT-style init).
  double trunc_normal(double sigma) {
    double x = normal(0.0, sigma);
    while (std::abs(x) > 2.0 * sigma) x = normal(0.0, sigma);
    return x;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(static_cast<int64_t>(i)))]);
    }
  }

  /// Serializes engine state plus the Box-Muller cache; restores exactly.
  std::string save_state() const;
  void load_state(const std::string& s);

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace selfdoc
