#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "neld/integrators.hpp"

// Experiment drivers: Gibbs-measure equilibration, coupled multi-step-size
// trajectory runs off one Brownian path, pathwise error / order-of-convergence
// estimation, and one-step truncation slope measurements.

namespace neld {

// smallest n with n^3 >= count
inline std::size_t cube_side(std::size_t count) {
  std::size_t n = 1;
  while (n * n * n < count) ++n;
  return n;
}

struct ExperimentConfig {
  std::size_t num_particles = 216;
  double box_side = 7.5;
  std::array<double, 3> flow_rates{0.2, -0.1, -0.1};
  double gamma = 1.0;
  double beta = 1.0;
  double dt_base = 0x1.0p-14;  // 6.103515625e-05; dyadic so every grid time is exact
  double t_end = 0.25;
  double t_equil = 1.0;
  std::size_t runs = 32;
  int ladder_levels = 5;
  std::vector<SchemeSpec> schemes{SchemeSpec{SchemeId::em}};
  std::uint64_t seed = 1;
  std::size_t checkpoint_stride = 8;
  int threads = 1;
  bool deterministic_noise = false;  // zero all noise draws (debug / slope checks)

  std::size_t dim() const { return 3 * num_particles; }

  std::size_t fine_steps() const {
    return static_cast<std::size_t>(std::llround(t_end / dt_base));
  }
  std::size_t equil_steps() const {
    return static_cast<std::size_t>(std::llround(t_equil / dt_base));
  }
  std::size_t block_steps() const { return std::size_t{1} << (ladder_levels - 1); }
  std::size_t checkpoint_steps() const { return block_steps() * checkpoint_stride; }
  std::size_t num_checkpoints() const { return fine_steps() / checkpoint_steps(); }

  FlowMatrix flow() const {
    return FlowMatrix::diagonal(flow_rates[0], flow_rates[1], flow_rates[2]);
  }
  DeformingLattice lattice() const {
    return DeformingLattice({box_side, box_side, box_side}, flow(), t_end, 2.0 * wca_cutoff());
  }
  SimParams params() const { return SimParams::make(gamma, beta, flow()); }

  void validate() const {
    if (num_particles < 1) throw std::invalid_argument("num_particles must be >= 1");
    if (!(box_side > 0.0)) throw std::invalid_argument("box_side_length must be positive");
    if (runs < 1) throw std::invalid_argument("runs must be >= 1");
    if (ladder_levels < 1 || ladder_levels > 12) {
      throw std::invalid_argument("ladder_levels must be in [1, 12]");
    }
    if (checkpoint_stride < 1) throw std::invalid_argument("checkpoint_stride must be >= 1");
    if (!(dt_base > 0.0)) throw std::invalid_argument("time_step must be positive");
    if (!(t_end > 0.0)) throw std::invalid_argument("simulation_time must be positive");
    if (t_equil < 0.0) throw std::invalid_argument("equilibration_time must be >= 0");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
    if (schemes.empty()) throw std::invalid_argument("scheme list is empty");
    const double steps_exact = t_end / dt_base;
    if (std::abs(steps_exact - std::round(steps_exact)) > 1e-9 * steps_exact) {
      throw std::invalid_argument("simulation_time must be an integer multiple of time_step");
    }
    const double eq_exact = t_equil / dt_base;
    if (t_equil > 0.0 && std::abs(eq_exact - std::round(eq_exact)) > 1e-9 * eq_exact) {
      throw std::invalid_argument("equilibration_time must be an integer multiple of time_step");
    }
    if (fine_steps() % checkpoint_steps() != 0 || num_checkpoints() == 0) {
      throw std::invalid_argument(
          "step count must be a positive multiple of 2^(ladder_levels-1) * checkpoint_stride");
    }
    const std::size_t n_side = cube_side(num_particles);
    if (box_side / double(n_side) < wca_cutoff()) {
      throw std::invalid_argument("density too high: initial sublattice spacing below cutoff");
    }
    lattice();  // throws if the cell degenerates below 2*cutoff within [0, t_end]
  }
};

// Initial condition: cubic sublattice positions, Maxwell-Boltzmann momenta
// (variance 1/beta per component), then t_equil of zero-flow dynamics with
// the implicit symplectic Euler step.  Returns the state at t = 0, flow off.
inline SystemState equilibrate(const ExperimentConfig& config, std::uint64_t run_seed) {
  const std::size_t n = config.num_particles;
  const std::size_t n_side = cube_side(n);
  const double spacing = config.box_side / double(n_side);
  SystemState s;
  s.q.resize(3 * n);
  s.p.resize(3 * n);
  s.t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ix = i / (n_side * n_side);
    const std::size_t iy = (i / n_side) % n_side;
    const std::size_t iz = i % n_side;
    s.q[3 * i] = (double(ix) + 0.5) * spacing;
    s.q[3 * i + 1] = (double(iy) + 0.5) * spacing;
    s.q[3 * i + 2] = (double(iz) + 0.5) * spacing;
  }
  const double p_scale = 1.0 / std::sqrt(config.beta);
  for (std::size_t i = 0; i < 3 * n; ++i) {
    s.p[i] = config.deterministic_noise
                 ? 0.0
                 : p_scale * counter_normal(run_seed, RngStream::init_momenta, 0, i);
  }

  const std::size_t steps = config.equil_steps();
  if (steps > 0) {
    const DeformingLattice box({config.box_side, config.box_side, config.box_side},
                               FlowMatrix::none());
    const SimParams params = SimParams::make(config.gamma, config.beta, FlowMatrix::none());
    ForceField ff;
    StepWorkspace ws;
    StepNoise noise;
    noise.dt = config.dt_base;
    noise.eta.resize(3 * n);
    noise.zeta.assign(3 * n, 0.0);
    for (std::size_t k = 0; k < steps; ++k) {
      for (std::size_t i = 0; i < 3 * n; ++i) {
        noise.eta[i] = config.deterministic_noise
                           ? 0.0
                           : counter_normal(run_seed, RngStream::equilibration, k, i);
      }
      step_se_b(s, params, box, ff, noise, config.dt_base, ws);
    }
    wrap_in_place(s.q, s.p, box, 0.0);
  }
  s.t = 0.0;
  return s;
}

// Snapshots of all ladder levels at one checkpoint time.
struct LadderRun {
  std::vector<double> checkpoint_times;
  std::vector<std::vector<SystemState>> snapshots;  // [checkpoint][level]
  bool failed = false;
  std::string failure;
};

// Runs `ladder_levels` coupled trajectories at step sizes dt, 2dt, ..., from
// the same start state, all consuming noise derived from the one fine path.
// Levels advance in lockstep over blocks of 2^(levels-1) fine steps; the
// block's coarsening tree supplies every level's (eta, zeta) and the OU
// functional for the splitting schemes.
inline LadderRun run_coupled(const ExperimentConfig& config, const SystemState& state0,
                             const SchemeSpec& scheme, const NoisePath& path) {
  const int levels = config.ladder_levels;
  const std::size_t dim = config.dim();
  const std::size_t block = config.block_steps();
  const std::size_t n_blocks = config.fine_steps() / block;
  const DeformingLattice lattice = config.lattice();
  const SimParams params = config.params();

  LadderRun out;
  std::vector<SystemState> states(levels, state0);
  ForceField ff;
  StepWorkspace ws;

  // noise tree: tree[l][k] covers fine steps [k 2^l, (k+1) 2^l) of the block
  std::vector<std::vector<StepNoise>> tree(levels);
  for (int l = 0; l < levels; ++l) {
    tree[l].resize(block >> l);
    for (auto& sn : tree[l]) {
      sn.dt = config.dt_base * double(std::size_t{1} << l);
      sn.eta.assign(dim, 0.0);
      sn.zeta.assign(dim, 0.0);
    }
  }
  std::vector<double> xi(dim, 0.0);

  try {
    for (std::size_t b = 0; b < n_blocks; ++b) {
      const std::size_t base = b * block;
      if (!config.deterministic_noise) {
        for (std::size_t j = 0; j < block; ++j) {
          const auto eta = path.eta_row(base + j);
          const auto zeta = path.zeta_row(base + j);
          std::copy(eta.begin(), eta.end(), tree[0][j].eta.begin());
          std::copy(zeta.begin(), zeta.end(), tree[0][j].zeta.begin());
        }
        for (int l = 1; l < levels; ++l) {
          for (std::size_t k = 0; k < tree[l].size(); ++k) {
            coarsen_into(tree[l - 1][2 * k], tree[l - 1][2 * k + 1], tree[l][k]);
          }
        }
      }
      for (int l = 0; l < levels; ++l) {
        const std::size_t span = std::size_t{1} << l;
        const double dt_l = config.dt_base * double(span);
        for (std::size_t k = 0; k < tree[l].size(); ++k) {
          if (scheme.uses_ou_noise() && !config.deterministic_noise) {
            ou_noise_window(path, base + k * span, base + (k + 1) * span, params.gamma, xi);
          }
          step(scheme, states[l], params, lattice, ff, tree[l][k], xi, dt_l, ws);
        }
      }
      if ((b + 1) % config.checkpoint_stride == 0) {
        out.checkpoint_times.push_back(states[0].t);
        out.snapshots.push_back(states);
      }
    }
  } catch (const std::exception& e) {
    out.failed = true;
    out.failure = e.what();
  }
  return out;
}

// Difference of two states of the same system at the same time.  Both are
// first wrapped into the canonical cell; the replica-equivalent difference
// then compares nearest images, adjusting the momentum difference by A L n
// for the image shift n, so a pure replica relabeling measures as zero.
// The raw variant is the plain l2 difference of the wrapped states.
struct DiffNorms {
  double dq = 0.0, dp = 0.0;
  double dq_raw = 0.0, dp_raw = 0.0;
};

inline DiffNorms state_diff(const SystemState& a, const SystemState& b,
                            const DeformingLattice& lattice) {
  if (a.dim() != b.dim()) throw std::invalid_argument("state_diff: dimension mismatch");
  const double t = a.t;
  std::vector<double> qa = a.q, pa = a.p, qb = b.q, pb = b.p;
  wrap_in_place(qa, pa, lattice, t);
  wrap_in_place(qb, pb, lattice, t);
  const auto edges = lattice.edges_at(t);
  const auto& rates = lattice.flow().rates;
  DiffNorms out;
  double sq = 0, sp = 0, sq_raw = 0, sp_raw = 0;
  for (std::size_t i = 0; i < qa.size(); ++i) {
    const int d = static_cast<int>(i % 3);
    const double dq_raw = qa[i] - qb[i];
    const double dp_raw = pa[i] - pb[i];
    const double image = std::round(dq_raw / edges[d]);
    const double dq = dq_raw - image * edges[d];
    const double dp = dp_raw - image * rates[d] * edges[d];
    sq += dq * dq;
    sp += dp * dp;
    sq_raw += dq_raw * dq_raw;
    sp_raw += dp_raw * dp_raw;
  }
  out.dq = std::sqrt(sq);
  out.dp = std::sqrt(sp);
  out.dq_raw = std::sqrt(sq_raw);
  out.dp_raw = std::sqrt(sp_raw);
  return out;
}

// Per adjacent ladder pair j (step sizes 2^j dt vs 2^(j+1) dt), time series of
// run-averaged errors.  The replica-equivalent series is primary; the raw
// wrapped-coordinate series is kept for diagnostics.
struct PairSeries {
  std::vector<double> e_mean_q, e_rms_q, e_mean_p, e_rms_p;
  std::vector<double> e_mean_q_raw, e_mean_p_raw;
};

struct SchemeReport {
  SchemeSpec scheme;
  std::vector<double> times;
  std::vector<PairSeries> pairs;
  std::vector<std::vector<std::vector<double>>> run_e_q;  // [run][pair][checkpoint]; NaN if failed
  std::vector<std::size_t> failed_runs;
  std::size_t runs_requested = 0;
  std::size_t runs_used = 0;

  // ord(t) between adjacent error pairs of the mean-over-runs series:
  // log2(e at pair j+1 / e at pair j).  NaN when undefined.
  double ord_mean_q(std::size_t pair, std::size_t cp) const {
    return ord_of(pairs[pair].e_mean_q[cp], pairs[pair + 1].e_mean_q[cp]);
  }
  double ord_mean_p(std::size_t pair, std::size_t cp) const {
    return ord_of(pairs[pair].e_mean_p[cp], pairs[pair + 1].e_mean_p[cp]);
  }
  double ord_mean_q_raw(std::size_t pair, std::size_t cp) const {
    return ord_of(pairs[pair].e_mean_q_raw[cp], pairs[pair + 1].e_mean_q_raw[cp]);
  }

  static double ord_of(double e_fine, double e_coarse) {
    if (!(e_fine > 0.0) || !(e_coarse > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return std::log2(e_coarse / e_fine);
  }
};

struct ConvergenceReport {
  std::vector<SchemeReport> schemes;
  double wall_seconds = 0.0;
};

inline double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }),
          v.end());
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + mid);
    m = 0.5 * (m + lo);
  }
  return m;
}

// Time-median of ord(t) over the second half of the window, pooled over all
// adjacent pairs of the mean-over-runs q series.
inline double median_ord_q(const SchemeReport& r, bool raw = false) {
  std::vector<double> vals;
  const std::size_t half = r.times.size() / 2;
  for (std::size_t j = 0; j + 1 < r.pairs.size(); ++j) {
    for (std::size_t c = half; c < r.times.size(); ++c) {
      vals.push_back(raw ? r.ord_mean_q_raw(j, c) : r.ord_mean_q(j, c));
    }
  }
  return median(vals);
}

inline double median_ord_p(const SchemeReport& r) {
  std::vector<double> vals;
  const std::size_t half = r.times.size() / 2;
  for (std::size_t j = 0; j + 1 < r.pairs.size(); ++j) {
    for (std::size_t c = half; c < r.times.size(); ++c) vals.push_back(r.ord_mean_p(j, c));
  }
  return median(vals);
}

// Per-run ord medians and their spread across runs (used to quantify how
// irregular a scheme's convergence is).
inline std::vector<double> per_run_ord_q(const SchemeReport& r) {
  std::vector<double> out;
  const std::size_t half = r.times.size() / 2;
  for (std::size_t run = 0; run < r.run_e_q.size(); ++run) {
    if (std::find(r.failed_runs.begin(), r.failed_runs.end(), run) != r.failed_runs.end()) {
      continue;
    }
    std::vector<double> vals;
    const auto& e = r.run_e_q[run];
    for (std::size_t j = 0; j + 1 < e.size(); ++j) {
      for (std::size_t c = half; c < e[j].size(); ++c) {
        vals.push_back(SchemeReport::ord_of(e[j][c], e[j + 1][c]));
      }
    }
    out.push_back(median(vals));
  }
  return out;
}

inline double ord_spread(const SchemeReport& r) {
  const auto per_run = per_run_ord_q(r);
  std::vector<double> finite;
  for (double x : per_run) {
    if (std::isfinite(x)) finite.push_back(x);
  }
  if (finite.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  for (double x : finite) mean += x;
  mean /= double(finite.size());
  double var = 0.0;
  for (double x : finite) var += (x - mean) * (x - mean);
  return std::sqrt(var / double(finite.size() - 1));
}

namespace detail {

template <class Fn>
inline void parallel_for_runs(std::size_t runs, int threads, Fn&& fn) {
  if (threads <= 1 || runs <= 1) {
    for (std::size_t r = 0; r < runs; ++r) fn(r);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min<std::size_t>(threads, runs);
  std::mutex err_mutex;
  std::string first_error;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t r = next.fetch_add(1);
        if (r >= runs) return;
        try {
          fn(r);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (first_error.empty()) first_error = e.what();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (!first_error.empty()) throw std::runtime_error(first_error);
}

}  // namespace detail

// Full protocol: per run, equilibrate, then advance the coupled ladder for
// every scheme off the run's fine path, accumulating pathwise errors at the
// common checkpoints.  Runs execute independently (optionally in parallel);
// aggregation is in fixed run order, so results do not depend on thread count.
inline ConvergenceReport convergence_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const std::size_t n_schemes = config.schemes.size();
  const std::size_t n_pairs = config.ladder_levels - 1;
  const std::size_t n_cp = config.num_checkpoints();
  const DeformingLattice lattice = config.lattice();

  struct RunErrors {
    // [pair][checkpoint] for one scheme and run
    std::vector<std::vector<double>> eq, ep, eq_raw, ep_raw;
    bool failed = false;
    std::string failure;
  };
  std::vector<std::vector<RunErrors>> all(n_schemes, std::vector<RunErrors>(config.runs));

  detail::parallel_for_runs(config.runs, config.threads, [&](std::size_t run) {
    const std::uint64_t run_seed = derive_run_seed(config.seed, run);
    SystemState state0;
    NoisePath path;
    bool run_broken = false;
    std::string run_error;
    try {
      state0 = equilibrate(config, run_seed);
      path = config.deterministic_noise
                 ? NoisePath{}
                 : sample_fine(run_seed, config.dt_base, config.fine_steps(), config.dim());
      if (config.deterministic_noise) {
        path.seed = run_seed;
        path.h_fine = config.dt_base;
        path.steps = config.fine_steps();
        path.dim = config.dim();
        path.eta.assign(path.steps * path.dim, 0.0);
        path.zeta.assign(path.steps * path.dim, 0.0);
      }
    } catch (const std::exception& e) {
      run_broken = true;
      run_error = e.what();
    }
    for (std::size_t si = 0; si < n_schemes; ++si) {
      RunErrors& re = all[si][run];
      if (run_broken) {
        re.failed = true;
        re.failure = run_error;
        continue;
      }
      LadderRun lr = run_coupled(config, state0, config.schemes[si], path);
      if (lr.failed) {
        re.failed = true;
        re.failure = lr.failure;
        continue;
      }
      re.eq.assign(n_pairs, std::vector<double>(n_cp, 0.0));
      re.ep = re.eq;
      re.eq_raw = re.eq;
      re.ep_raw = re.eq;
      for (std::size_t c = 0; c < n_cp; ++c) {
        for (std::size_t j = 0; j < n_pairs; ++j) {
          const DiffNorms d = state_diff(lr.snapshots[c][j], lr.snapshots[c][j + 1], lattice);
          re.eq[j][c] = d.dq;
          re.ep[j][c] = d.dp;
          re.eq_raw[j][c] = d.dq_raw;
          re.ep_raw[j][c] = d.dp_raw;
        }
      }
    }
  });

  ConvergenceReport report;
  for (std::size_t si = 0; si < n_schemes; ++si) {
    SchemeReport sr;
    sr.scheme = config.schemes[si];
    sr.runs_requested = config.runs;
    sr.pairs.resize(n_pairs);
    sr.run_e_q.assign(config.runs, {});
    for (auto& ps : sr.pairs) {
      ps.e_mean_q.assign(n_cp, 0.0);
      ps.e_rms_q.assign(n_cp, 0.0);
      ps.e_mean_p.assign(n_cp, 0.0);
      ps.e_rms_p.assign(n_cp, 0.0);
      ps.e_mean_q_raw.assign(n_cp, 0.0);
      ps.e_mean_p_raw.assign(n_cp, 0.0);
    }
    std::size_t used = 0;
    for (std::size_t run = 0; run < config.runs; ++run) {
      const RunErrors& re = all[si][run];
      if (re.failed) {
        sr.failed_runs.push_back(run);
        continue;
      }
      ++used;
      sr.run_e_q[run] = re.eq;
      for (std::size_t j = 0; j < n_pairs; ++j) {
        for (std::size_t c = 0; c < n_cp; ++c) {
          sr.pairs[j].e_mean_q[c] += re.eq[j][c];
          sr.pairs[j].e_rms_q[c] += re.eq[j][c] * re.eq[j][c];
          sr.pairs[j].e_mean_p[c] += re.ep[j][c];
          sr.pairs[j].e_rms_p[c] += re.ep[j][c] * re.ep[j][c];
          sr.pairs[j].e_mean_q_raw[c] += re.eq_raw[j][c];
          sr.pairs[j].e_mean_p_raw[c] += re.ep_raw[j][c];
        }
      }
    }
    sr.runs_used = used;
    if (used > 0) {
      const double inv = 1.0 / double(used);
      for (std::size_t j = 0; j < n_pairs; ++j) {
        for (std::size_t c = 0; c < n_cp; ++c) {
          sr.pairs[j].e_mean_q[c] *= inv;
          sr.pairs[j].e_rms_q[c] = std::sqrt(sr.pairs[j].e_rms_q[c] * inv);
          sr.pairs[j].e_mean_p[c] *= inv;
          sr.pairs[j].e_rms_p[c] = std::sqrt(sr.pairs[j].e_rms_p[c] * inv);
          sr.pairs[j].e_mean_q_raw[c] *= inv;
          sr.pairs[j].e_mean_p_raw[c] *= inv;
        }
      }
    }
    // checkpoint times are grid-exact and common to all levels and runs
    sr.times.resize(n_cp);
    for (std::size_t c = 0; c < n_cp; ++c) {
      sr.times[c] = double(config.checkpoint_steps() * (c + 1)) * config.dt_base;
    }
    report.schemes.push_back(std::move(sr));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

// --- one-step truncation experiments -------------------------------------

struct TruncationResult {
  std::vector<double> dts;
  std::vector<double> errors;
  double slope = 0.0;
  double fit_residual = 0.0;
};

// Small force-active cluster placed mid-cell: eight particles on a 2x2x2
// sublattice compressed inside the interaction cutoff, Maxwell-Boltzmann
// momenta.  Margins keep every tested step strictly interior.
inline SystemState make_interior_state(const ExperimentConfig& config, std::uint64_t seed) {
  SystemState s;
  const std::size_t n = 8;
  s.q.resize(3 * n);
  s.p.resize(3 * n);
  const double spacing = 1.05;
  const std::array<double, 3> center{config.box_side / 2, config.box_side / 2,
                                     config.box_side / 2};
  std::size_t i = 0;
  for (int x = 0; x < 2; ++x) {
    for (int y = 0; y < 2; ++y) {
      for (int z = 0; z < 2; ++z) {
        s.q[3 * i] = center[0] + (x - 0.5) * spacing;
        s.q[3 * i + 1] = center[1] + (y - 0.5) * spacing;
        s.q[3 * i + 2] = center[2] + (z - 0.5) * spacing;
        ++i;
      }
    }
  }
  const double p_scale = 1.0 / std::sqrt(config.beta);
  for (std::size_t c = 0; c < 3 * n; ++c) {
    s.p[c] = p_scale * counter_normal(seed, RngStream::init_momenta, 1, c);
  }
  s.t = 0.0;
  return s;
}

// One free particle about to leave the +x face: crosses mid-step for every
// step size in the truncation ladder.
inline SystemState make_crossing_state(const ExperimentConfig& config) {
  SystemState s;
  s.q = {config.box_side - 3e-4, config.box_side / 2, config.box_side / 2};
  s.p = {10.0, 0.0, 0.0};
  s.t = 0.0;
  return s;
}

namespace detail {

inline void fit_loglog(const std::vector<double>& x, const std::vector<double>& y,
                       double& slope, double& residual) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
    mx += lx[i];
    my += ly[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  slope = sxy / sxx;
  const double intercept = my - slope * mx;
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - (slope * lx[i] + intercept);
    ss += r * r;
  }
  // fit residual in log2 units, to match the ord scale
  residual = std::sqrt(ss / double(n)) / std::log(2.0);
}

}  // namespace detail

// One-step error over a ladder of halved step sizes, against the stochastic
// Taylor reference (interior) or against the scheme's corrected twin modulo
// replica equivalence (forced crossing).  All step sizes consume the same
// underlying noise: one 16-entry fine grid, coarsened per step size, with the
// OU functional evaluated on the same grid.
inline TruncationResult truncation_experiment(const ExperimentConfig& config,
                                              const SchemeSpec& scheme, const SystemState& state,
                                              bool crossing, double dt_max = 1e-3,
                                              int n_dts = 5) {
  const SimParams params = config.params();
  const DeformingLattice lattice = config.lattice();
  const std::size_t dim = state.dim();
  constexpr std::size_t n_fine = 16;

  // Dimensionless fine pairs, identical for every tested step size; this is
  // the Brownian self-similarity scaling of one underlying path.
  NoisePath grid;
  grid.seed = config.seed;
  grid.steps = n_fine;
  grid.dim = dim;
  grid.eta.resize(n_fine * dim);
  grid.zeta.resize(n_fine * dim);
  for (std::size_t k = 0; k < n_fine; ++k) {
    for (std::size_t i = 0; i < dim; ++i) {
      GaussPair g = config.deterministic_noise ? GaussPair{0.0, 0.0}
                                               : fine_entry(config.seed, 1000 + k, i);
      grid.eta[k * dim + i] = g.a;
      grid.zeta[k * dim + i] = g.b;
    }
  }

  TruncationResult result;
  ForceField ff;
  StepWorkspace ws;
  std::vector<double> xi(dim, 0.0);
  for (int lvl = 0; lvl < n_dts; ++lvl) {
    const double dt = dt_max / double(1 << lvl);
    grid.h_fine = dt / double(n_fine);

    std::vector<StepNoise> seq(n_fine);
    for (std::size_t k = 0; k < n_fine; ++k) seq[k] = grid.step_noise(k);
    while (seq.size() > 1) {
      std::vector<StepNoise> next(seq.size() / 2);
      for (std::size_t k = 0; k < next.size(); ++k) {
        coarsen_into(seq[2 * k], seq[2 * k + 1], next[k]);
      }
      seq = std::move(next);
    }
    const StepNoise& noise = seq[0];
    if (!config.deterministic_noise) {
      ou_noise_window(grid, 0, n_fine, params.gamma, xi);
    }

    SystemState s1 = state;
    WrapLog log1;
    step(scheme, s1, params, lattice, ff, noise, xi, dt, ws, &log1);

    double err = 0.0;
    if (crossing) {
      SystemState s2 = state;
      step(corrected_twin(scheme), s2, params, lattice, ff, noise, xi, dt, ws);
      bool mid = false;
      for (const auto& ev : log1) mid |= ev.phase == WrapEvent::mid;
      if (!mid) {
        throw std::runtime_error("truncation: crossing state produced no mid-step wrap");
      }
      const DiffNorms d = state_diff(s1, s2, lattice);
      err = std::sqrt(d.dq * d.dq + d.dp * d.dp);
    } else {
      if (!log1.empty()) {
        throw std::runtime_error(
            "truncation: boundary crossing on an interior state (reference contract)");
      }
      SystemState s2 = state;
      step_reference(s2, params, lattice, ff, noise, dt, ws);
      double sum = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double dq = s1.q[i] - s2.q[i];
        const double dp = s1.p[i] - s2.p[i];
        sum += dq * dq + dp * dp;
      }
      err = std::sqrt(sum);
    }
    result.dts.push_back(dt);
    result.errors.push_back(err);
  }
  detail::fit_loglog(result.dts, result.errors, result.slope, result.fit_residual);
  return result;
}

}  // namespace neld
