#pragma once

#include <cstdint>
#include <random>

namespace bwlab {

/// What a random stream is used for. Distinct purposes never share draws.
enum class Purpose : std::uint64_t {
  kTruth = 1,
  kData = 2,
  kInit = 3,
  kProbe = 4,
  kMonteCarlo = 5,
  kInstance = 6,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the stream owned by (experiment seed, run index, purpose). The
/// result depends only on the triple, so runs can execute in any order.
inline constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t run, Purpose purpose) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (run + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t run, Purpose purpose) {
  return Rng(stream_seed(seed, run, purpose));
}

}  // namespace bwlab
