#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "lrvb/core/types.hpp"

namespace lrvb {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// A seeded random stream. Child streams are derived from (key, name) or
// (key, index) only, so drawing from one stream never perturbs another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(detail::splitmix64(seed)), eng_(key_) {}

  Rng split(std::string_view name) const { return from_key(detail::splitmix64(key_ ^ detail::fnv1a(name))); }
  Rng split(std::uint64_t index) const {
    return from_key(detail::splitmix64(key_ + detail::splitmix64(index + 0x632be59bd9b4e019ULL)));
  }

  std::uint64_t key() const { return key_; }
  std::mt19937_64& engine() { return eng_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng_); }
  // Uniform on the open interval (0, 1); safe for inverse-cdf samplers.
  double uniform_open() {
    double u;
    do u = uniform();
    while (u <= 0.0);
    return u;
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }
  Vector normal(Index n) {
    Vector z(n);
    for (Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng_); }

 private:
  static Rng from_key(std::uint64_t k) {
    Rng r;
    r.key_ = k;
    r.eng_.seed(k);
    return r;
  }

  std::uint64_t key_;
  std::mt19937_64 eng_;
};

}  // namespace lrvb
