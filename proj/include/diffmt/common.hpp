#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffmt {

using Token = std::int32_t;
using TokenSequence = std::vector<Token>;
using Rng = std::mt19937_64;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument or out-of-range index supplied by the caller.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// File or format problem.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or produced non-finite numbers.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// SplitMix64 finalizer; used to derive independent seeds from (seed, index).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform double in [0, 1) with 53 random bits. Unlike
/// std::uniform_real_distribution the result is fixed by the generator alone.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n) by rejection; portable across standard libraries.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

}  // namespace diffmt
