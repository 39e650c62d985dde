#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>

namespace chainqa {

/// Malformed records, inconsistent shapes, or configs that cannot produce a
/// valid world. CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or other numeric breakdown. CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Retrieval against an index built from older encoder parameters.
class StaleIndexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic per-purpose stream: the master seed mixed with a tag path
/// such as {kStreamEStep, iteration}. Resumed runs rebuild the exact same
/// streams from the seed stored in the checkpoint.
inline std::mt19937_64 make_rng(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> stream) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t s : stream) h = splitmix64(h ^ splitmix64(s));
  return std::mt19937_64(h);
}

// Stream tags for make_rng.
inline constexpr std::uint64_t kStreamGen = 1;
inline constexpr std::uint64_t kStreamInit = 2;
inline constexpr std::uint64_t kStreamWarmStart = 3;
inline constexpr std::uint64_t kStreamBootstrap = 4;
inline constexpr std::uint64_t kStreamEStep = 5;
inline constexpr std::uint64_t kStreamMStepEncoder = 6;
inline constexpr std::uint64_t kStreamMStepReader = 7;
inline constexpr std::uint64_t kStreamReaderInit = 8;

}  // namespace chainqa
