#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace poecf {

// Counter-based pseudo-random generator (splitmix64 core). The output stream
// is a pure function of the 64-bit state, so identical seeds give identical
// streams on every platform. fork() derives an independent child stream
// without disturbing the parent, which is what makes per-user / per-term
// substreams reproducible regardless of scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Derive a stream from (seed, path), e.g. keyed(seed, {kUser, epoch, uid}).
  static Rng keyed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    Rng r(seed);
    for (std::uint64_t label : path) r = r.fork(label);
    return r;
  }

  std::uint64_t next_u64() {
    state_ += kGamma;
    return finalize(state_);
  }

  // Child stream; depends on the current state and the label only.
  Rng fork(std::uint64_t label) const {
    return Rng(finalize(finalize(state_ + kGamma) ^ finalize(label + kFork)));
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Two uniform draws per sample; no caching
  // so the draw count per sample is fixed.
  double next_normal() {
    const double u1 = 1.0 - next_unit();  // (0, 1]
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n) via multiply-shift.
  std::uint64_t next_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_index: n must be positive");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Knuth's product-of-uniforms method; fine for the small means used here.
  int next_poisson(double mean) {
    if (!(mean >= 0.0)) throw std::invalid_argument("Rng::next_poisson: mean must be >= 0");
    const double limit = std::exp(-mean);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= next_unit();
    } while (p > limit);
    return k - 1;
  }

  double next_gumbel() {
    double u = next_unit();
    if (u <= 0.0) u = 0x1.0p-53;
    return -std::log(-std::log(u));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), in draw order (partial Fisher-Yates).
  std::vector<std::int32_t> sample_without_replacement(std::int32_t n, std::int32_t k) {
    if (k < 0 || k > n) throw std::invalid_argument("sample_without_replacement: need 0 <= k <= n");
    std::vector<std::int32_t> pool(static_cast<std::size_t>(n));
    for (std::int32_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<std::int32_t> out;
    out.reserve(static_cast<std::size_t>(k));
    for (std::int32_t i = 0; i < k; ++i) {
      const auto j = static_cast<std::size_t>(i) +
                     static_cast<std::size_t>(next_index(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
      out.push_back(pool[static_cast<std::size_t>(i)]);
    }
    return out;
  }

  std::uint64_t state() const { return state_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kFork = 0xD1B54A32D192ED03ull;

  static std::uint64_t finalize(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

// Stable 64-bit hash for strings (FNV-1a); used to key substreams by name.
inline std::uint64_t hash_label(const char* s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (; *s; ++s) {
    h ^= static_cast<unsigned char>(*s);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace poecf
