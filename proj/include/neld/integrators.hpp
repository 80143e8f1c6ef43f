#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "neld/flow_lattice.hpp"
#include "neld/noise.hpp"
#include "neld/potential.hpp"

// One-step maps for the flowing Langevin dynamics
//   dq = p dt,   dp = F(p, q) dt + sigma dW,
//   F(p, q) = -grad E(q) - gamma (p - A q) + A p,
// under deforming periodic boundary conditions.  The schemes differ in when
// the periodic wrap is applied: se_a and abapo remap mid-step (which costs
// them an O(dt) local error whenever a particle crosses the boundary), their
// corrected twins wrap only at the step start and evaluate forces by minimum
// image on unwrapped positions.  `reference` is the second-order stochastic
// Taylor step used as the local truncation yardstick; it never wraps.

namespace neld {

struct SimParams {
  double gamma = 1.0;
  double beta = 1.0;
  double sigma = 0.0;  // sqrt(2 gamma / beta), fixed by fluctuation-dissipation
  FlowMatrix flow;

  static SimParams make(double gamma, double beta, FlowMatrix flow) {
    if (!(gamma >= 0.0) || !(beta > 0.0)) {
      throw std::invalid_argument("SimParams: need gamma >= 0 and beta > 0");
    }
    SimParams p;
    p.gamma = gamma;
    p.beta = beta;
    p.sigma = std::sqrt(2.0 * gamma / beta);
    p.flow = flow;
    return p;
  }
};

struct SystemState {
  std::vector<double> q, p;
  double t = 0.0;

  std::size_t dim() const { return q.size(); }
  std::size_t particles() const { return q.size() / 3; }
};

enum class SchemeId { em, se_a, se_b, se_ac, abapo, abapo_c, soile_a, soile_b, reference };

enum class SoileBNoise { ito_matched, paper };

struct SchemeSpec {
  SchemeId id = SchemeId::em;
  SoileBNoise soile_b_noise = SoileBNoise::ito_matched;

  bool uses_ou_noise() const { return id == SchemeId::abapo || id == SchemeId::abapo_c; }
  bool uses_zeta() const {
    return id == SchemeId::soile_a || id == SchemeId::soile_b || id == SchemeId::reference;
  }
  bool has_mid_wrap() const { return id == SchemeId::se_a || id == SchemeId::abapo; }
};

inline SchemeSpec corrected_twin(const SchemeSpec& s) {
  if (s.id == SchemeId::se_a) return {SchemeId::se_ac, s.soile_b_noise};
  if (s.id == SchemeId::abapo) return {SchemeId::abapo_c, s.soile_b_noise};
  throw std::invalid_argument("corrected_twin: scheme has no mid-step wrap");
}

// Wrap events recorded by the step maps; phase distinguishes the start-of-step
// remap from the mid-step one that only the failed schemes perform.
struct WrapEvent {
  enum Phase { start = 0, mid = 1 };
  Phase phase;
  std::size_t coord;
  int shift;
};
using WrapLog = std::vector<WrapEvent>;

struct StepWorkspace {
  std::vector<double> f, f2, qnew, g, hv;
  std::vector<int> shifts;

  void resize(std::size_t dim) {
    f.resize(dim);
    f2.resize(dim);
    qnew.resize(dim);
    g.resize(dim);
    hv.resize(dim);
  }
};

namespace detail {

inline void log_wraps(const std::vector<int>& shifts, WrapEvent::Phase phase, WrapLog* log) {
  if (!log) return;
  for (std::size_t i = 0; i < shifts.size(); ++i) {
    if (shifts[i] != 0) log->push_back({phase, i, shifts[i]});
  }
}

inline void wrap_start(SystemState& s, const DeformingLattice& lattice, StepWorkspace& ws,
                       WrapLog* log) {
  wrap_in_place(s.q, s.p, lattice, s.t, log ? &ws.shifts : nullptr);
  if (log) log_wraps(ws.shifts, WrapEvent::start, log);
}

inline void wrap_mid(std::span<double> q, std::span<double> p, const DeformingLattice& lattice,
                     double t, StepWorkspace& ws, WrapLog* log) {
  wrap_in_place(q, p, lattice, t, &ws.shifts);
  log_wraps(ws.shifts, WrapEvent::mid, log);
}

inline void check_noise(const SystemState& s, const StepNoise& noise, double dt) {
  if (noise.dim() != s.dim()) throw std::invalid_argument("step: noise dimension mismatch");
  if (noise.dt != dt) throw std::invalid_argument("step: noise step size mismatch");
}

// Euler-Maruyama without the initial remap; both updates use the pre-step
// state.  Separated out so replica-covariance tests can exercise the bare map.
inline void step_em_core(SystemState& s, const SimParams& params,
                         const DeformingLattice& lattice, ForceField& ff,
                         const StepNoise& noise, double dt, StepWorkspace& ws) {
  ws.resize(s.dim());
  drift_force(ff, s.q, s.p, params.gamma, params.flow, lattice, s.t, ws.f);
  const double amp = params.sigma * std::sqrt(dt);
  for (std::size_t i = 0; i < s.dim(); ++i) {
    s.q[i] += s.p[i] * dt;
    s.p[i] += ws.f[i] * dt + amp * noise.eta[i];
  }
  s.t += dt;
}

}  // namespace detail

inline void step_em(SystemState& s, const SimParams& params, const DeformingLattice& lattice,
                    ForceField& ff, const StepNoise& noise, double dt, StepWorkspace& ws,
                    WrapLog* log = nullptr) {
  detail::check_noise(s, noise, dt);
  detail::wrap_start(s, lattice, ws, log);
  detail::step_em_core(s, params, lattice, ff, noise, dt, ws);
}

// Symplectic Euler A: position first, then a second remap before the momentum
// update.  The mid-step remap is the convergence-breaking ingredient.
inline void step_se_a(SystemState& s, const SimParams& params, const DeformingLattice& lattice,
                      ForceField& ff, const StepNoise& noise, double dt, StepWorkspace& ws,
                      WrapLog* log = nullptr) {
  detail::check_noise(s, noise, dt);
  detail::wrap_start(s, lattice, ws, log);
  ws.resize(s.dim());
  for (std::size_t i = 0; i < s.dim(); ++i) s.q[i] += s.p[i] * dt;
  detail::wrap_mid(s.q, s.p, lattice, s.t, ws, log);
  drift_force(ff, s.q, s.p, params.gamma, params.flow, lattice, s.t, ws.f);
  const double amp = params.sigma * std::sqrt(dt);
  for (std::size_t i = 0; i < s.dim(); ++i) s.p[i] += ws.f[i] * dt + amp * noise.eta[i];
  s.t += dt;
}

// Symplectic Euler A corrected: single remap at the start, force by minimum
// image on the (possibly outside) updated positions.
inline void step_se_ac(SystemState& s, const SimParams& params, const DeformingLattice& lattice,
                       ForceField& ff, const StepNoise& noise, double dt, StepWorkspace& ws,
                       WrapLog* log = nullptr) {
  detail::check_noise(s, noise, dt);
  detail::wrap_start(s, lattice, ws, log);
  ws.resize(s.dim());
  for (std::size_t i = 0; i < s.dim(); ++i) s.q[i] += s.p[i] * dt;
  drift_force(ff, s.q, s.p, params.gamma, params.flow, lattice, s.t, ws.f);
  const double amp = params.sigma * std::sqrt(dt);
  for (std::size_t i = 0; i < s.dim(); ++i) s.p[i] += ws.f[i] * dt + amp * noise.eta[i];
  s.t += dt;
}

// Symplectic Euler B: implicit in p but linear, so the update is a
// componentwise solve (A diagonal); then the position drift uses the new p.
inline void step_se_b(SystemState& s, const SimParams& params, const DeformingLattice& lattice,
                      ForceField& ff, const StepNoise& noise, double dt, StepWorkspace& ws,
                      WrapLog* log = nullptr) {
  detail::check_noise(s, noise, dt);
  detail::wrap_start(s, lattice, ws, log);
  ws.resize(s.dim());
  ff.energy_forces(s.q, lattice, s.t, ws.f);  // ws.f = -grad E
  const double amp = params.sigma * std::sqrt(dt);
  for (std::size_t i = 0; i < s.dim(); ++i) {
    const double a = params.flow.rates[i % 3];
    const double divisor = 1.0 + (params.gamma - a) * dt;
    if (!(divisor > 0.0)) {
      throw std::runtime_error("step_se_b: nonpositive implicit divisor; reduce dt");
    }
    const double rhs = s.p[i] + (ws.f[i] + params.gamma * a * s.q[i]) * dt + amp * noise.eta[i];
    s.p[i] = rhs / divisor;
    s.q[i] += s.p[i] * dt;
  }
  s.t += dt;
}

namespace detail {

// Shared ABAPO body: half kick, full drift, optional mid-step remap, half
// kick, flow kick P = exp(dt A), then the exactly solved OU step
//   p <- e^{-gamma dt} p + (1 - e^{-gamma dt}) A q
//        + sqrt(beta^{-1} (1 - e^{-2 gamma dt})) xi.
inline void step_abapo_impl(SystemState& s, const SimParams& params,
                            const DeformingLattice& lattice, ForceField& ff,
                            std::span<const double> xi, double dt, bool mid_wrap,
                            StepWorkspace& ws, WrapLog* log) {
  if (xi.size() != s.dim()) throw std::invalid_argument("abapo: xi dimension mismatch");
  wrap_start(s, lattice, ws, log);
  ws.resize(s.dim());
  ff.energy_forces(s.q, lattice, s.t, ws.f);
  for (std::size_t i = 0; i < s.dim(); ++i) {
    s.p[i] += 0.5 * dt * ws.f[i];
    s.q[i] += dt * s.p[i];
  }
  if (mid_wrap) wrap_mid(s.q, s.p, lattice, s.t, ws, log);
  ff.energy_forces(s.q, lattice, s.t, ws.f);
  const double decay = std::exp(-params.gamma * dt);
  const double noise_amp = std::sqrt((1.0 - std::exp(-2.0 * params.gamma * dt)) / params.beta);
  const std::array<double, 3> flow_kick = {std::exp(params.flow.rates[0] * dt),
                                           std::exp(params.flow.rates[1] * dt),
                                           std::exp(params.flow.rates[2] * dt)};
  for (std::size_t i = 0; i < s.dim(); ++i) {
    const double a = params.flow.rates[i % 3];
    double pv = s.p[i] + 0.5 * dt * ws.f[i];
    pv *= flow_kick[i % 3];
    s.p[i] = decay * pv + (1.0 - decay) * a * s.q[i] + noise_amp * xi[i];
  }
  s.t += dt;
}

}  // namespace detail

inline void step_abapo(SystemState& s, const SimParams& params, const DeformingLattice& lattice,
                       ForceField& ff, std::span<const double> xi, double dt, StepWorkspace& ws,
                       WrapLog* log = nullptr) {
  detail::step_abapo_impl(s, params, lattice, ff, xi, dt, true, ws, log);
}

inline void step_abapo_c(SystemState& s, const SimParams& params, const DeformingLattice& lattice,
                         ForceField& ff, std::span<const double> xi, double dt, StepWorkspace& ws,
                         WrapLog* log = nullptr) {
  detail::step_abapo_impl(s, params, lattice, ff, xi, dt, false, ws, log);
}

// Second-order integrator A: position update carries the full second-order
// increment G = F dt^2/2 + sigma dt^{3/2} (eta/2 + zeta/(2 sqrt 3)); the
// momentum update averages old/new forces and corrects with (A - gamma I) G.
inline void step_soile_a(SystemState& s, const SimParams& params, const DeformingLattice& lattice,
                         ForceField& ff, const StepNoise& noise, double dt, StepWorkspace& ws,
                         WrapLog* log = nullptr) {
  detail::check_noise(s, noise, dt);
  detail::wrap_start(s, lattice, ws, log);
  ws.resize(s.dim());
  drift_force(ff, s.q, s.p, params.gamma, params.flow, lattice, s.t, ws.f);
  const double dt32 = dt * std::sqrt(dt);
  const double amp = params.sigma * std::sqrt(dt);
  for (std::size_t i = 0; i < s.dim(); ++i) {
    const double u = 0.5 * noise.eta[i] + inv_two_sqrt3 * noise.zeta[i];
    ws.g[i] = 0.5 * dt * dt * ws.f[i] + params.sigma * dt32 * u;
    ws.qnew[i] = s.q[i] + s.p[i] * dt + ws.g[i];
  }
  drift_force(ff, ws.qnew, s.p, params.gamma, params.flow, lattice, s.t, ws.f2);
  for (std::size_t i = 0; i < s.dim(); ++i) {
    const double a = params.flow.rates[i % 3];
    s.p[i] += 0.5 * dt * (ws.f[i] + ws.f2[i]) + amp * noise.eta[i] +
              (a - params.gamma) * ws.g[i];
    s.q[i] = ws.qnew[i];
  }
  s.t += dt;
}

// Second-order integrator B, quasi-symplectic half-kick / drift / half-kick.
// ito_matched (default): position noise sigma dt^{3/2} (eta/2 + zeta/(2 sqrt 3)),
// half-kick corrections built from (eta + zeta/sqrt 3), full strength kick
// noise in the closing half step; chosen so the one-step expansion cancels
// against the second-order stochastic Taylor step.  paper: the printed
// variant, with position noise sigma dt^{3/2} zeta/sqrt 3, corrections from
// (eta/2 + zeta/sqrt 3) and a half-strength closing kick noise.
inline void step_soile_b(SystemState& s, const SimParams& params, const DeformingLattice& lattice,
                         ForceField& ff, const StepNoise& noise, double dt, StepWorkspace& ws,
                         SoileBNoise variant = SoileBNoise::ito_matched,
                         WrapLog* log = nullptr) {
  detail::check_noise(s, noise, dt);
  detail::wrap_start(s, lattice, ws, log);
  ws.resize(s.dim());
  const bool ito = variant == SoileBNoise::ito_matched;
  const double dt32 = dt * std::sqrt(dt);
  const double kick_amp = (ito ? 1.0 : 0.5) * params.sigma * std::sqrt(dt);
  drift_force(ff, s.q, s.p, params.gamma, params.flow, lattice, s.t, ws.f);
  for (std::size_t i = 0; i < s.dim(); ++i) {
    const double a = params.flow.rates[i % 3];
    const double v = ito ? noise.eta[i] + 2.0 * inv_two_sqrt3 * noise.zeta[i]
                         : 0.5 * noise.eta[i] + 2.0 * inv_two_sqrt3 * noise.zeta[i];
    const double corr = 0.25 * (a - params.gamma) *
                        (0.5 * dt * dt * ws.f[i] + params.sigma * dt32 * v);
    s.p[i] += 0.5 * dt * ws.f[i] + corr;  // p is now the half-step momentum
    const double qn = ito ? 0.5 * noise.eta[i] + inv_two_sqrt3 * noise.zeta[i]
                          : 2.0 * inv_two_sqrt3 * noise.zeta[i];
    ws.qnew[i] = s.q[i] + s.p[i] * dt + params.sigma * dt32 * qn;
  }
  drift_force(ff, ws.qnew, s.p, params.gamma, params.flow, lattice, s.t, ws.f2);
  for (std::size_t i = 0; i < s.dim(); ++i) {
    const double a = params.flow.rates[i % 3];
    const double v = ito ? noise.eta[i] + 2.0 * inv_two_sqrt3 * noise.zeta[i]
                         : 0.5 * noise.eta[i] + 2.0 * inv_two_sqrt3 * noise.zeta[i];
    const double corr = 0.25 * (a - params.gamma) *
                        (0.5 * dt * dt * ws.f2[i] + params.sigma * dt32 * v);
    s.p[i] += 0.5 * dt * ws.f2[i] + kick_amp * noise.eta[i] + corr;
    s.q[i] = ws.qnew[i];
  }
  s.t += dt;
}

// Second-order stochastic Taylor step (the truncation-test oracle).  Never
// wraps: callers must hand it interior states and manage replicas themselves.
inline void step_reference(SystemState& s, const SimParams& params,
                           const DeformingLattice& lattice, ForceField& ff,
                           const StepNoise& noise, double dt, StepWorkspace& ws) {
  detail::check_noise(s, noise, dt);
  ws.resize(s.dim());
  drift_force(ff, s.q, s.p, params.gamma, params.flow, lattice, s.t, ws.f);
  ff.hessian_vec(s.q, s.p, lattice, s.t, ws.hv);
  const double dt32 = dt * std::sqrt(dt);
  const double amp = params.sigma * std::sqrt(dt);
  for (std::size_t i = 0; i < s.dim(); ++i) {
    const double a = params.flow.rates[i % 3];
    const double u = 0.5 * noise.eta[i] + inv_two_sqrt3 * noise.zeta[i];
    // second-order drift block: (-grad^2 E + gamma A) p + (A - gamma I) F
    const double second = -ws.hv[i] + params.gamma * a * s.p[i] +
                          (a - params.gamma) * ws.f[i];
    ws.qnew[i] = s.q[i] + s.p[i] * dt + 0.5 * dt * dt * ws.f[i] + params.sigma * dt32 * u;
    s.p[i] += ws.f[i] * dt + amp * noise.eta[i] + 0.5 * dt * dt * second +
              params.sigma * dt32 * (a - params.gamma) * u;
  }
  for (std::size_t i = 0; i < s.dim(); ++i) s.q[i] = ws.qnew[i];
  s.t += dt;
}

// Generic dispatcher.  `xi` is consumed by the abapo variants only.
inline void step(const SchemeSpec& scheme, SystemState& s, const SimParams& params,
                 const DeformingLattice& lattice, ForceField& ff, const StepNoise& noise,
                 std::span<const double> xi, double dt, StepWorkspace& ws,
                 WrapLog* log = nullptr) {
  switch (scheme.id) {
    case SchemeId::em: step_em(s, params, lattice, ff, noise, dt, ws, log); break;
    case SchemeId::se_a: step_se_a(s, params, lattice, ff, noise, dt, ws, log); break;
    case SchemeId::se_b: step_se_b(s, params, lattice, ff, noise, dt, ws, log); break;
    case SchemeId::se_ac: step_se_ac(s, params, lattice, ff, noise, dt, ws, log); break;
    case SchemeId::abapo: step_abapo(s, params, lattice, ff, xi, dt, ws, log); break;
    case SchemeId::abapo_c: step_abapo_c(s, params, lattice, ff, xi, dt, ws, log); break;
    case SchemeId::soile_a: step_soile_a(s, params, lattice, ff, noise, dt, ws, log); break;
    case SchemeId::soile_b:
      step_soile_b(s, params, lattice, ff, noise, dt, ws, scheme.soile_b_noise, log);
      break;
    case SchemeId::reference: step_reference(s, params, lattice, ff, noise, dt, ws); break;
  }
}

inline std::string scheme_name(const SchemeSpec& s) {
  switch (s.id) {
    case SchemeId::em: return "em";
    case SchemeId::se_a: return "se_a";
    case SchemeId::se_b: return "se_b";
    case SchemeId::se_ac: return "se_ac";
    case SchemeId::abapo: return "abapo";
    case SchemeId::abapo_c: return "abapo_c";
    case SchemeId::soile_a: return "soile_a";
    case SchemeId::soile_b:
      return s.soile_b_noise == SoileBNoise::ito_matched ? "soile_b" : "soile_b_paper";
    case SchemeId::reference: return "reference";
  }
  return "?";
}

inline SchemeSpec parse_scheme(const std::string& name) {
  if (name == "em") return {SchemeId::em};
  if (name == "se_a") return {SchemeId::se_a};
  if (name == "se_b") return {SchemeId::se_b};
  if (name == "se_ac") return {SchemeId::se_ac};
  if (name == "abapo") return {SchemeId::abapo};
  if (name == "abapo_c") return {SchemeId::abapo_c};
  if (name == "soile_a") return {SchemeId::soile_a};
  if (name == "soile_b") return {SchemeId::soile_b, SoileBNoise::ito_matched};
  if (name == "soile_b_paper") return {SchemeId::soile_b, SoileBNoise::paper};
  if (name == "reference") return {SchemeId::reference};
  throw std::invalid_argument("unknown scheme '" + name + "'");
}

}  // namespace neld
