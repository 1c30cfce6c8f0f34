#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "dcbpl/errors.hpp"

namespace dcbpl::rng {

inline constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

// splitmix64 finalizer; the mixing core for all counter-based streams.
inline std::uint64_t mix(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

inline std::uint64_t key_of(std::uint64_t seed, std::uint64_t id0, std::uint64_t id1) {
  std::uint64_t k = mix(seed + kGamma);
  k = mix(k + kGamma * (id0 + 1));
  k = mix(k + kGamma * (id1 + 1));
  return k;
}

// Counter-based random stream keyed on (seed, id0, id1). Streams with
// distinct keys are independent; a stream never shares state, so the
// simulator stays deterministic under any parallel schedule.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t id0 = 0, std::uint64_t id1 = 0)
      : key_(key_of(seed, id0, id1)) {}

  std::uint64_t next_u64() { return mix(key_ + kGamma * (++counter_)); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  double normal(double mean = 0.0, double sd = 1.0) {
    // Box-Muller; both uniforms drawn fresh each call to keep the stream
    // consumption pattern independent of caller interleaving.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + sd * z;
  }

  int categorical(std::span<const double> probs) {
    double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    if (total <= 0.0) throw UsageError("categorical draw over non-positive mass");
    double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = next_u64() % i;
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace dcbpl::rng
