#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "neld/rng.hpp"

// Single source of randomness for coupled-step-size runs.  A fine grid of
// independent Gaussian pairs (eta, zeta) encodes, per step of size h, the
// Brownian increment  dW = sqrt(h) eta  and the time integral
//   I = integral over the step of (W(s) - W(start)) ds
//     = h^{3/2} (eta/2 + zeta/(2 sqrt(3))).
// Coarsening two adjacent steps is the exact pathwise identity
//   dW_c = dW_1 + dW_2,   I_c = I_1 + I_2 + h dW_1,
// re-expressed in the (eta, zeta) normalization, so one fine path drives
// every step size of a ladder with zero coupling error.

namespace neld {

inline constexpr double inv_two_sqrt3 = 0.28867513459481288225457439025098;  // 1/(2 sqrt 3)
inline constexpr double sqrt3 = 1.7320508075688772935274463415059;

struct StepNoise {
  std::vector<double> eta, zeta;
  double dt = 0.0;

  std::size_t dim() const { return eta.size(); }
};

// Entry contract: the pair at (step k, component i) depends only on
// (seed, k, i).  Used both by materialized paths and streamed windows.
inline GaussPair fine_entry(std::uint64_t seed, std::uint64_t step, std::uint64_t component) {
  return counter_normal_pair(seed, RngStream::fine_path, step, component);
}

struct NoisePath {
  std::uint64_t seed = 0;
  double h_fine = 0.0;
  std::size_t steps = 0;
  std::size_t dim = 0;
  std::vector<double> eta, zeta;  // row-major [step][component]

  std::span<const double> eta_row(std::size_t k) const {
    return {eta.data() + k * dim, dim};
  }
  std::span<const double> zeta_row(std::size_t k) const {
    return {zeta.data() + k * dim, dim};
  }

  StepNoise step_noise(std::size_t k) const {
    StepNoise s;
    s.dt = h_fine;
    s.eta.assign(eta_row(k).begin(), eta_row(k).end());
    s.zeta.assign(zeta_row(k).begin(), zeta_row(k).end());
    return s;
  }
};

inline NoisePath sample_fine(std::uint64_t seed, double h_fine, std::size_t steps,
                             std::size_t dim) {
  if (steps < 1) throw std::invalid_argument("sample_fine: need at least one step");
  if (!(h_fine > 0.0)) throw std::invalid_argument("sample_fine: step size must be positive");
  NoisePath path;
  path.seed = seed;
  path.h_fine = h_fine;
  path.steps = steps;
  path.dim = dim;
  path.eta.resize(steps * dim);
  path.zeta.resize(steps * dim);
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t i = 0; i < dim; ++i) {
      const GaussPair g = fine_entry(seed, k, i);
      path.eta[k * dim + i] = g.a;
      path.zeta[k * dim + i] = g.b;
    }
  }
  return path;
}

// Exact coarsening of two adjacent steps of equal size to one step of twice
// the size.  Pathwise identity, not an approximation.
inline void coarsen_into(const StepNoise& a, const StepNoise& b, StepNoise& out) {
  if (a.dt != b.dt) throw std::invalid_argument("coarsen: mismatched step sizes");
  if (a.dim() != b.dim()) throw std::invalid_argument("coarsen: mismatched dimensions");
  const double h = a.dt;
  const double h32 = h * std::sqrt(h);
  const double h2_32 = 2.0 * h * std::sqrt(2.0 * h);
  const double sqrt_h = std::sqrt(h);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  out.dt = 2.0 * h;
  out.eta.resize(a.dim());
  out.zeta.resize(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double i1 = h32 * (0.5 * a.eta[i] + inv_two_sqrt3 * a.zeta[i]);
    const double i2 = h32 * (0.5 * b.eta[i] + inv_two_sqrt3 * b.zeta[i]);
    const double dw1 = sqrt_h * a.eta[i];
    const double ic = i1 + i2 + h * dw1;
    const double eta_c = (a.eta[i] + b.eta[i]) * inv_sqrt2;
    out.eta[i] = eta_c;
    out.zeta[i] = 2.0 * sqrt3 * ic / h2_32 - sqrt3 * eta_c;
  }
}

inline StepNoise coarsen(const StepNoise& a, const StepNoise& b) {
  StepNoise out;
  coarsen_into(a, b, out);
  return out;
}

// Sequence of steps at size 2^level * h_fine, derived from the fine path by
// repeated pairwise coarsening.
inline std::vector<StepNoise> coarsen_ladder(const NoisePath& path, int level) {
  if (level < 0) throw std::invalid_argument("coarsen_ladder: negative level");
  const std::size_t factor = std::size_t{1} << level;
  if (path.steps % factor != 0) {
    throw std::invalid_argument("coarsen_ladder: step count not divisible by 2^level");
  }
  std::vector<StepNoise> seq(path.steps);
  for (std::size_t k = 0; k < path.steps; ++k) seq[k] = path.step_noise(k);
  for (int l = 0; l < level; ++l) {
    std::vector<StepNoise> next(seq.size() / 2);
    for (std::size_t k = 0; k < next.size(); ++k) {
      coarsen_into(seq[2 * k], seq[2 * k + 1], next[k]);
    }
    seq = std::move(next);
  }
  return seq;
}

// Discrete Ornstein-Uhlenbeck noise functional over the fine window
// [k_begin, k_end): exponentially weighted combination of the window's
// Brownian increments, normalized to unit variance.  For a single fine step
// this reduces to that step's eta; for gamma -> 0 it is the normalized
// window increment.
inline void ou_noise_window(const NoisePath& path, std::size_t k_begin, std::size_t k_end,
                            double gamma, std::span<double> xi) {
  if (k_end <= k_begin || k_end > path.steps) {
    throw std::invalid_argument("ou_noise: window not aligned with the fine grid");
  }
  if (xi.size() != path.dim) throw std::invalid_argument("ou_noise: output size mismatch");
  const double h = path.h_fine;
  const std::size_t m = k_end - k_begin;
  if (m == 1) {  // one-term sum with unit normalization: xi is that step's eta
    const auto eta = path.eta_row(k_begin);
    std::copy(eta.begin(), eta.end(), xi.begin());
    return;
  }
  double norm_sq = 0.0;
  std::fill(xi.begin(), xi.end(), 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    // weight for fine step k_begin + j with right endpoint s_{j+1}
    const double w = std::exp(-gamma * h * static_cast<double>(m - 1 - j));
    norm_sq += w * w * h;
    const auto eta = path.eta_row(k_begin + j);
    const double wh = w * std::sqrt(h);
    for (std::size_t i = 0; i < path.dim; ++i) xi[i] += wh * eta[i];
  }
  const double inv_norm = 1.0 / std::sqrt(norm_sq);
  for (std::size_t i = 0; i < path.dim; ++i) xi[i] *= inv_norm;
}

// Binary dump: header (seed u64, h_fine f64, steps u64, dim u64) followed by
// the eta block then the zeta block, each row-major little-endian f64.
namespace detail {

inline void put_u64(std::FILE* f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  if (std::fwrite(b, 1, 8, f) != 8) throw std::runtime_error("noise dump: write failed");
}

inline std::uint64_t get_u64(std::FILE* f) {
  unsigned char b[8];
  if (std::fread(b, 1, 8, f) != 8) throw std::runtime_error("noise load: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::FILE* f, double x) {
  std::uint64_t v;
  std::memcpy(&v, &x, 8);
  put_u64(f, v);
}

inline double get_f64(std::FILE* f) {
  const std::uint64_t v = get_u64(f);
  double x;
  std::memcpy(&x, &v, 8);
  return x;
}

}  // namespace detail

inline void save_noise_path(const std::string& filename, const NoisePath& path) {
  std::FILE* f = std::fopen(filename.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + filename + " for writing");
  try {
    detail::put_u64(f, path.seed);
    detail::put_f64(f, path.h_fine);
    detail::put_u64(f, path.steps);
    detail::put_u64(f, path.dim);
    for (double x : path.eta) detail::put_f64(f, x);
    for (double x : path.zeta) detail::put_f64(f, x);
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
}

inline NoisePath load_noise_path(const std::string& filename) {
  std::FILE* f = std::fopen(filename.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + filename);
  NoisePath path;
  try {
    path.seed = detail::get_u64(f);
    path.h_fine = detail::get_f64(f);
    path.steps = detail::get_u64(f);
    path.dim = detail::get_u64(f);
    path.eta.resize(path.steps * path.dim);
    path.zeta.resize(path.steps * path.dim);
    for (double& x : path.eta) x = detail::get_f64(f);
    for (double& x : path.zeta) x = detail::get_f64(f);
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
  return path;
}

}  // namespace neld
