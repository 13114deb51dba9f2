#pragma once

// Seeding for every stochastic component. Streams are derived from a base
// seed plus a path of stream identifiers through splitmix64, so each
// (seed, purpose, iteration, ...) tuple gets an independent mt19937_64.
// Results are reproducible within one build; the normal distribution comes
// from the standard library and may differ across standard libraries.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace coatreg {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) noexcept {
  std::uint64_t s = splitmix64(seed);
  for (auto id : stream) s = splitmix64(s ^ splitmix64(id + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) {
  return Rng(derive_seed(seed, stream));
}

// Stream identifiers.
enum class Stream : std::uint64_t {
  init = 1,
  sampling = 2,
  shuffle = 3,
  phantom = 4,
  deformation = 5,
  noise = 6,
  gradcheck = 7,
};

constexpr std::uint64_t id(Stream s) noexcept { return static_cast<std::uint64_t>(s); }

}  // namespace coatreg
