#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "neld/flow_lattice.hpp"

// WCA pair potential and force field.  Reduced units throughout: energy and
// length scales of the pair potential and the particle mass are all 1.

namespace neld {

inline double wca_cutoff() {
  static const double value = std::pow(2.0, 1.0 / 6.0);
  return value;
}

struct WcaParams {
  double cutoff = wca_cutoff();
};

struct PairValue {
  double energy;
  double dphi_dr;
};

// phi(r) = r^-12 - r^-6 + 1/4 below the cutoff, zero beyond; C^1 at the cutoff.
inline PairValue wca_pair(double r, const WcaParams& params = {}) {
  if (!(r > 0.0)) {
    throw std::domain_error("wca_pair: nonpositive separation (overlapping particles)");
  }
  if (r >= params.cutoff) return {0.0, 0.0};
  const double inv_r = 1.0 / r;
  const double inv_r6 = inv_r * inv_r * inv_r * inv_r * inv_r * inv_r;
  const double inv_r12 = inv_r6 * inv_r6;
  return {inv_r12 - inv_r6 + 0.25, (-12.0 * inv_r12 + 6.0 * inv_r6) * inv_r};
}

// Total energy, forces and Hessian-vector products over all minimum-image
// pairs.  Positions may lie outside the canonical cell; displacements go
// through the minimum image, so every evaluation is replica-invariant.
//
// Determinism: pairs are accumulated in increasing (i, j) order whether the
// cell list or the all-pairs path is taken, so the two are bitwise identical.
// Instances keep internal scratch; use one instance per thread.
class ForceField {
 public:
  explicit ForceField(WcaParams params = {}, bool use_cells = true)
      : params_(params), use_cells_(use_cells) {}

  const WcaParams& params() const { return params_; }
  bool use_cells() const { return use_cells_; }
  void set_use_cells(bool v) { use_cells_ = v; }

  // Fills f with -grad E and returns the total energy.
  double energy_forces(std::span<const double> q, const DeformingLattice& lattice, double t,
                       std::span<double> f) {
    check_size(q);
    if (f.size() != q.size()) throw std::invalid_argument("force buffer size mismatch");
    std::fill(f.begin(), f.end(), 0.0);
    const auto edges = lattice.edges_at(t);
    double energy = 0.0;
    auto kernel = [&](std::size_t i, std::size_t j) {
      double d[3] = {q[3 * i] - q[3 * j], q[3 * i + 1] - q[3 * j + 1], q[3 * i + 2] - q[3 * j + 2]};
      min_image3(d, edges);
      const double r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
      if (r2 >= cutoff_sq()) return;
      if (r2 < 1e-16) {
        throw std::runtime_error("particle overlap: pair (" + std::to_string(i) + ", " +
                                 std::to_string(j) + ") at distance < 1e-8");
      }
      const double inv_r2 = 1.0 / r2;
      const double inv_r6 = inv_r2 * inv_r2 * inv_r2;
      const double inv_r12 = inv_r6 * inv_r6;
      energy += inv_r12 - inv_r6 + 0.25;
      // -phi'(r)/r; positive, so the force on i points from j to i.
      const double f_over_r = (12.0 * inv_r12 - 6.0 * inv_r6) * inv_r2;
      for (int c = 0; c < 3; ++c) {
        const double fc = f_over_r * d[c];
        f[3 * i + c] += fc;
        f[3 * j + c] -= fc;
      }
    };
    for_each_pair(q, edges, kernel);
    return energy;
  }

  double energy(std::span<const double> q, const DeformingLattice& lattice, double t) {
    scratch_f_.assign(q.size(), 0.0);
    return energy_forces(q, lattice, t, scratch_f_);
  }

  // out = (grad^2 E) v, assembled from analytic pair second derivatives.
  void hessian_vec(std::span<const double> q, std::span<const double> v,
                   const DeformingLattice& lattice, double t, std::span<double> out) {
    check_size(q);
    if (v.size() != q.size() || out.size() != q.size()) {
      throw std::invalid_argument("hessian_vec buffer size mismatch");
    }
    std::fill(out.begin(), out.end(), 0.0);
    const auto edges = lattice.edges_at(t);
    const std::size_t n = q.size() / 3;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double d[3] = {q[3 * i] - q[3 * j], q[3 * i + 1] - q[3 * j + 1],
                       q[3 * i + 2] - q[3 * j + 2]};
        min_image3(d, edges);
        const double r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if (r2 >= cutoff_sq()) continue;
        if (r2 < 1e-16) {
          throw std::runtime_error("particle overlap in hessian_vec");
        }
        const double r = std::sqrt(r2);
        const double inv_r = 1.0 / r;
        const double inv_r2 = inv_r * inv_r;
        const double inv_r6 = inv_r2 * inv_r2 * inv_r2;
        const double inv_r12 = inv_r6 * inv_r6;
        const double dphi = (-12.0 * inv_r12 + 6.0 * inv_r6) * inv_r;
        const double ddphi = (156.0 * inv_r12 - 42.0 * inv_r6) * inv_r2;
        const double u[3] = {v[3 * i] - v[3 * j], v[3 * i + 1] - v[3 * j + 1],
                             v[3 * i + 2] - v[3 * j + 2]};
        const double du = (d[0] * u[0] + d[1] * u[1] + d[2] * u[2]) * inv_r;
        const double radial = (ddphi - dphi * inv_r) * du * inv_r;
        for (int c = 0; c < 3; ++c) {
          const double hc = radial * d[c] + dphi * inv_r * u[c];
          out[3 * i + c] += hc;
          out[3 * j + c] -= hc;
        }
      }
    }
  }

 private:
  double cutoff_sq() const { return params_.cutoff * params_.cutoff; }

  static void check_size(std::span<const double> q) {
    if (q.size() % 3 != 0) throw std::invalid_argument("coordinate array not a multiple of 3");
  }

  template <class Kernel>
  void for_each_pair(std::span<const double> q, const std::array<double, 3>& edges,
                     Kernel&& kernel) {
    const std::size_t n = q.size() / 3;
    int nc[3];
    bool cells_ok = use_cells_ && n >= 32;
    for (int d = 0; d < 3 && cells_ok; ++d) {
      nc[d] = static_cast<int>(std::floor(edges[d] / params_.cutoff));
      if (nc[d] < 3) cells_ok = false;
    }
    if (!cells_ok) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) kernel(i, j);
      }
      return;
    }

    const int total_cells = nc[0] * nc[1] * nc[2];
    cell_head_.assign(static_cast<std::size_t>(total_cells), -1);
    cell_next_.assign(n, -1);
    cell_index_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      int cc[3];
      for (int d = 0; d < 3; ++d) {
        const double frac = q[3 * i + d] / edges[d];
        double w = frac - std::floor(frac);  // [0,1)
        int c = static_cast<int>(w * nc[d]);
        if (c >= nc[d]) c = nc[d] - 1;
        cc[d] = c;
      }
      cell_index_[i] = (cc[0] * nc[1] + cc[1]) * nc[2] + cc[2];
    }
    // Insert in reverse so each cell's linked list comes out ascending.
    for (std::size_t ii = n; ii-- > 0;) {
      cell_next_[ii] = cell_head_[static_cast<std::size_t>(cell_index_[ii])];
      cell_head_[static_cast<std::size_t>(cell_index_[ii])] = static_cast<int>(ii);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int ci = cell_index_[i];
      const int cx = ci / (nc[1] * nc[2]);
      const int cy = (ci / nc[2]) % nc[1];
      const int cz = ci % nc[2];
      candidates_.clear();
      for (int ox = -1; ox <= 1; ++ox) {
        const int x = (cx + ox + nc[0]) % nc[0];
        for (int oy = -1; oy <= 1; ++oy) {
          const int y = (cy + oy + nc[1]) % nc[1];
          for (int oz = -1; oz <= 1; ++oz) {
            const int z = (cz + oz + nc[2]) % nc[2];
            for (int j = cell_head_[static_cast<std::size_t>((x * nc[1] + y) * nc[2] + z)];
                 j >= 0; j = cell_next_[static_cast<std::size_t>(j)]) {
              if (static_cast<std::size_t>(j) > i) candidates_.push_back(j);
            }
          }
        }
      }
      std::sort(candidates_.begin(), candidates_.end());
      for (int j : candidates_) kernel(i, static_cast<std::size_t>(j));
    }
  }

  WcaParams params_;
  bool use_cells_;
  std::vector<double> scratch_f_;
  std::vector<int> cell_head_, cell_next_, cell_index_, candidates_;
};

// Momentum drift of the flowing Langevin dynamics,
//   F(p, q) = -grad E(q) - gamma (p - A q) + A p,
// with forces evaluated by minimum image (valid for unwrapped positions).
// Returns the potential energy.
inline double drift_force(ForceField& ff, std::span<const double> q, std::span<const double> p,
                          double gamma, const FlowMatrix& flow, const DeformingLattice& lattice,
                          double t, std::span<double> out) {
  const double energy = ff.energy_forces(q, lattice, t, out);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double a = flow.rates[i % 3];
    out[i] += -gamma * (p[i] - a * q[i]) + a * p[i];
  }
  return energy;
}

}  // namespace neld
