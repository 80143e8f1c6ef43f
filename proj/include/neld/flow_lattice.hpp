#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Background flow, time-dependent simulation cell and replica arithmetic.
// The cell basis follows L(t) = exp(A t) L0 with A a trace-free diagonal
// flow matrix, so every edge evolves by a scalar exponential and the cell
// volume is constant in time.

namespace neld {

// Trace-free diagonal flow, one rate per axis, applied identically to every
// particle triple.  Off-diagonal flows are not representable.
struct FlowMatrix {
  std::array<double, 3> rates{0.0, 0.0, 0.0};

  static FlowMatrix diagonal(double ax, double ay, double az) {
    const double trace = ax + ay + az;
    if (std::abs(trace) > 1e-12) {
      throw std::invalid_argument("flow matrix trace must vanish, got " + std::to_string(trace));
    }
    FlowMatrix f;
    f.rates = {ax, ay, az};
    return f;
  }

  static FlowMatrix none() { return FlowMatrix{}; }

  // Accepts a full 3x3 block only when it is diagonal.
  static FlowMatrix from_matrix(const std::array<std::array<double, 3>, 3>& m) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (r != c && m[r][c] != 0.0) {
          throw std::invalid_argument("only diagonal flow matrices are supported");
        }
      }
    }
    return diagonal(m[0][0], m[1][1], m[2][2]);
  }

  bool is_zero() const { return rates[0] == 0.0 && rates[1] == 0.0 && rates[2] == 0.0; }
};

class DeformingLattice {
 public:
  // `horizon` and `min_edge` encode the non-degeneracy guard: every edge must
  // stay at least `min_edge` (twice the interaction cutoff in practice) for
  // all t in [0, horizon].  Edges are monotone in t for diagonal flow, so the
  // endpoints suffice.
  DeformingLattice(std::array<double, 3> edges0, FlowMatrix flow,
                   double horizon = 0.0, double min_edge = 0.0)
      : edges0_(edges0), flow_(flow) {
    for (int d = 0; d < 3; ++d) {
      if (!(edges0_[d] > 0.0)) {
        throw std::invalid_argument("cell edge lengths must be positive");
      }
    }
    if (horizon < 0.0) throw std::invalid_argument("lattice horizon must be nonnegative");
    for (double t : {0.0, horizon}) {
      const auto e = edges_at(t);
      for (int d = 0; d < 3; ++d) {
        if (e[d] < min_edge) {
          throw std::invalid_argument("cell edge " + std::to_string(e[d]) + " at t=" +
                                      std::to_string(t) + " below required minimum " +
                                      std::to_string(min_edge));
        }
      }
    }
  }

  const std::array<double, 3>& edges0() const { return edges0_; }
  const FlowMatrix& flow() const { return flow_; }

  std::array<double, 3> edges_at(double t) const {
    return {edges0_[0] * std::exp(flow_.rates[0] * t),
            edges0_[1] * std::exp(flow_.rates[1] * t),
            edges0_[2] * std::exp(flow_.rates[2] * t)};
  }

  double volume0() const { return edges0_[0] * edges0_[1] * edges0_[2]; }

 private:
  std::array<double, 3> edges0_;
  FlowMatrix flow_;
};

// Maps each coordinate into [0, L) and adjusts the momentum so the state
// refers to the replica inside the canonical cell: q -> q - L n, p -> p - A L n
// with n = floor(q / L).  Writes the shift counts when `shifts` is non-null.
inline void wrap_in_place(std::span<double> q, std::span<double> p,
                          const DeformingLattice& lattice, double t,
                          std::vector<int>* shifts = nullptr) {
  const auto edges = lattice.edges_at(t);
  const auto& rates = lattice.flow().rates;
  if (shifts) shifts->assign(q.size(), 0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!std::isfinite(q[i]) || !std::isfinite(p[i])) {
      throw std::runtime_error("non-finite coordinate at index " + std::to_string(i) +
                               " (trajectory blow-up?)");
    }
    const int d = static_cast<int>(i % 3);
    const double n = std::floor(q[i] / edges[d]);
    if (n != 0.0) {
      q[i] -= n * edges[d];
      p[i] -= n * rates[d] * edges[d];
      if (shifts) (*shifts)[i] = static_cast<int>(n);
    }
  }
}

// Shifts a state to the replica indexed by n: q += L n, p += A L n.
inline void replica_shift(std::span<double> q, std::span<double> p,
                          std::span<const int> n, const DeformingLattice& lattice, double t) {
  const auto edges = lattice.edges_at(t);
  const auto& rates = lattice.flow().rates;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (n[i] == 0) continue;
    const int d = static_cast<int>(i % 3);
    q[i] += n[i] * edges[d];
    p[i] += n[i] * rates[d] * edges[d];
  }
}

// Nearest-image displacement component: maps into [-L/2, L/2), so exactly
// half an edge resolves to the negative end.
inline double min_image(double dq, double edge) {
  return dq - edge * std::floor(dq / edge + 0.5);
}

inline void min_image3(double* dq, const std::array<double, 3>& edges) {
  dq[0] = min_image(dq[0], edges[0]);
  dq[1] = min_image(dq[1], edges[1]);
  dq[2] = min_image(dq[2], edges[2]);
}

}  // namespace neld
