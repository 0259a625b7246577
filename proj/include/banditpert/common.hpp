#pragma once

#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>

namespace banditpert {

// Derives an independent RNG stream from (seed, stream) so that pipeline
// stages (suite, log, shuffle, training, ...) never share draws.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream ids, one per pipeline stage.
namespace rng_stream {
inline constexpr std::uint64_t suite = 1;
inline constexpr std::uint64_t logged_data = 2;
inline constexpr std::uint64_t defense = 3;
inline constexpr std::uint64_t train = 4;
inline constexpr std::uint64_t model_init = 5;
inline constexpr std::uint64_t noise = 6;
inline constexpr std::uint64_t algorithm = 7;
}  // namespace rng_stream

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(mix_seed(seed, stream));
}

// Shortest round-trippable decimal form of a double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

}  // namespace banditpert
