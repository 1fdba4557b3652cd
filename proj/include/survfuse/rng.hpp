// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace survfuse {

// Deterministic random source. All distribution transforms are implemented
// here rather than through std:: distribution objects, whose output is not
// pinned by the standard and varies across library implementations. Given the
// same seed, every draw sequence is identical on any conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
  }

  // Box-Muller transform; consumes two draws per sample, never caches.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) {
    return mean + stddev * normal();
  }

  // Inverse-CDF exponential with the given rate (mean 1/rate).
  double exponential(double rate) {
    if (rate <= 0.0) {
      throw std::invalid_argument("Rng::exponential: rate must be positive");
    }
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(u) / rate;
  }

  // Uniform index in [0, n). Lemire multiply-shift; bias is below 2^-64 and
  // the mapping is a pure function of the engine output.
  std::size_t index(std::size_t n) {
    if (n == 0) {
      throw std::invalid_argument("Rng::index: n must be positive");
    }
    const unsigned __int128 wide =
        static_cast<unsigned __int128>(engine_()) * n;
    return static_cast<std::size_t>(wide >> 64);
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::swap(p[i - 1], p[index(i)]);
    }
    return p;
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  // Stable seed derivation for independent sub-streams (folds, patients,
  // clustering restarts). splitmix64 finalizer over seed xor stream.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed ^ (stream + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // FNV-1a, used to fold string identifiers into stream seeds.
  static std::uint64_t hash_string(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace survfuse
