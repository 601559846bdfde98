#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace dtrec {

using Rng = std::mt19937_64;

// Deterministic child stream derived from a base seed and a salt
// (splitmix64 finalizer), so per-user or per-run streams do not depend
// on iteration order.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

// Uniform sample of `k` distinct values from `pool` (partial Fisher-Yates on
// a copy). Caller guarantees k <= pool.size().
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k,
                                          Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(
        uniform_int(rng, static_cast<std::int64_t>(i),
                    static_cast<std::int64_t>(pool.size()) - 1));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace dtrec
