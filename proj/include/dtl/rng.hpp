#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dtl {

// Deterministic RNG wrapper. The engine (mt19937_64) is fully specified by
// the standard; the distribution functions are hand-rolled because stdlib
// distributions are implementation-defined and would break the cross-build
// reproducibility contract.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  float next_float() { return static_cast<float>(next_double()); }

  // Uniform integer on [0, bound). bound must be > 0.
  std::uint64_t next_below(std::uint64_t bound) {
    // Rejection sampling on the top bits keeps this unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % bound;
  }

  float next_uniform(float lo, float hi) {
    return lo + (hi - lo) * next_float();
  }

  // Standard normal via Box-Muller; caches the second draw.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream seed, so that e.g. weight init and data
  // shuffling never share draws (seed-isolation contract).
  static std::uint64_t derive(std::uint64_t base, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Named streams hanging off one base seed.
enum class RngStream : std::uint64_t {
  weight_init = 1,
  data_shuffle = 2,
  dropout = 3,
  toy_generator = 4,
  split = 5,
  subsample = 6,
};

inline Rng make_stream(std::uint64_t base_seed, RngStream stream) {
  return Rng(Rng::derive(base_seed, static_cast<std::uint64_t>(stream)));
}

}  // namespace dtl
