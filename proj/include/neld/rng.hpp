#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>

// Counter-based random number generation.  Every draw is a pure function of
// (seed, stream, step, component), so values are reproducible regardless of
// evaluation order and can be regenerated for any sub-window of a path.

namespace neld {

inline constexpr std::uint64_t splitmix_gamma = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix64(std::uint64_t x) {
  x += splitmix_gamma;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Bits128 {
  std::uint64_t x0, x1;
};

// Philox 2x64, 10 rounds.  Counter (c0, c1), single 64-bit key.
inline Bits128 philox2x64(std::uint64_t c0, std::uint64_t c1, std::uint64_t key) {
  constexpr std::uint64_t mult = 0xD2B74407B1CE6E93ull;
  for (int round = 0; round < 10; ++round) {
    const unsigned __int128 prod = static_cast<unsigned __int128>(mult) * c0;
    const std::uint64_t hi = static_cast<std::uint64_t>(prod >> 64);
    const std::uint64_t lo = static_cast<std::uint64_t>(prod);
    c0 = hi ^ key ^ c1;
    c1 = lo;
    key += splitmix_gamma;
  }
  return {c0, c1};
}

// Named sub-streams; keeps draws for different purposes statistically
// independent under one seed.
enum class RngStream : std::uint64_t {
  fine_path = 0,       // (eta, zeta) pairs of the fine noise grid
  equilibration = 1,   // kicks during equilibration dynamics
  init_momenta = 2,    // Maxwell-Boltzmann initial momenta
  scratch = 3,         // tests and ad-hoc sampling
};

inline std::uint64_t stream_key(std::uint64_t seed, RngStream stream) {
  return mix64(seed ^ (0xA5A5A5A500000000ull + static_cast<std::uint64_t>(stream)));
}

// Uniform in the open interval (0,1); never 0, so log() is safe.
inline double to_unit_open(std::uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

struct GaussPair {
  double a, b;
};

// Two independent standard normals from one counter via Box-Muller.
inline GaussPair counter_normal_pair(std::uint64_t seed, RngStream stream,
                                     std::uint64_t step, std::uint64_t component) {
  const Bits128 bits = philox2x64(step, component, stream_key(seed, stream));
  const double u1 = to_unit_open(bits.x0);
  const double u2 = to_unit_open(bits.x1);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(angle), r * std::sin(angle)};
}

inline double counter_normal(std::uint64_t seed, RngStream stream,
                             std::uint64_t step, std::uint64_t component) {
  return counter_normal_pair(seed, stream, step, component).a;
}

inline double counter_uniform(std::uint64_t seed, RngStream stream,
                              std::uint64_t step, std::uint64_t component) {
  return to_unit_open(philox2x64(step, component, stream_key(seed, stream)).x0);
}

// Per-run seed so replicate runs are independent but reproducible.
inline std::uint64_t derive_run_seed(std::uint64_t master_seed, std::uint64_t run_index) {
  return mix64(master_seed ^ mix64(0x52554E0000000000ull + run_index));
}

}  // namespace neld
