#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace causalfuse {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Mixes a root seed with a path of indices (outer rep, inner rep, purpose, ...)
// into one 64-bit key. Streams derived from distinct paths are independent, so
// parallel replicates are reproducible regardless of scheduling order.
inline std::uint64_t derive_key(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = seed;
  splitmix64(state);
  for (std::uint64_t p : path) {
    state ^= splitmix64(state) + p;
    splitmix64(state);
  }
  return splitmix64(state);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : gen_(key) {}

  static RngStream from_path(std::uint64_t seed,
                             std::initializer_list<std::uint64_t> path) {
    return RngStream(derive_key(seed, path));
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double normal() { return normal_(gen_); }
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace causalfuse
