// Command-line front end: convergence benchmarks, one-step truncation slope
// experiments, and state snapshots for restart / cross-implementation diffing.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "neld/config.hpp"
#include "neld/harness.hpp"
#include "neld/report_io.hpp"
#include "neld/version.hpp"

namespace fs = std::filesystem;
using namespace neld;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string scheme_list;
  std::string out_dir;
  std::uint64_t runs = 0;
  bool runs_set = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool deterministic_noise = false;
};

std::string default_out_dir() {
  const char* env = std::getenv("NELD_OUT_DIR");
  return env && *env ? env : ".";
}

ExperimentConfig load_with_overrides(const CommonOpts& opts) {
  ExperimentConfig config = parse_config_file(opts.config_path);
  if (!opts.scheme_list.empty()) {
    config.schemes.clear();
    for (const auto& name : detail::split_csv(opts.scheme_list)) {
      config.schemes.push_back(parse_scheme(name));
    }
  }
  if (opts.runs_set) config.runs = opts.runs;
  if (opts.seed_set) config.seed = opts.seed;
  if (opts.threads > 0) config.threads = opts.threads;
  config.deterministic_noise = opts.deterministic_noise;
  return config;
}

int cmd_converge(const CommonOpts& opts) {
  ExperimentConfig config;
  try {
    config = load_with_overrides(opts);
    config.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  const fs::path out_dir = opts.out_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  const ConvergenceReport report = convergence_experiment(config);

  std::vector<std::string> csv_files;
  std::vector<std::string> failure_lines;
  std::size_t total_failures = 0;
  for (const auto& sr : report.schemes) {
    const std::string name = scheme_name(sr.scheme) + std::string(".csv");
    detail::write_file_atomic((out_dir / name).string(), convergence_csv(sr));
    csv_files.push_back(name);
    std::string runs_line = "failed_runs_" + scheme_name(sr.scheme) + " =";
    for (std::size_t i = 0; i < sr.failed_runs.size(); ++i) {
      runs_line += (i ? "," : " ") + std::to_string(sr.failed_runs[i]);
    }
    failure_lines.push_back(runs_line);
    total_failures += sr.failed_runs.size();
    std::cout << scheme_name(sr.scheme) << ": runs " << sr.runs_used << "/"
              << sr.runs_requested << ", median ord(q) " << median_ord_q(sr)
              << ", median ord(p) " << median_ord_p(sr) << "\n";
  }
  detail::write_file_atomic(
      (out_dir / "manifest.txt").string(),
      manifest_text(config, report.wall_seconds, csv_files, failure_lines));
  std::cout << "wrote " << csv_files.size() << " csv file(s) and manifest.txt to "
            << out_dir.string() << " in " << report.wall_seconds << " s\n";
  return total_failures == 0 ? 0 : 3;
}

int cmd_truncation(const CommonOpts& opts, bool crossing) {
  ExperimentConfig config;
  SchemeSpec scheme;
  try {
    config = load_with_overrides(opts);
    if (config.schemes.size() != 1) {
      throw std::invalid_argument("truncation needs exactly one --scheme");
    }
    scheme = config.schemes[0];
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  const fs::path out_dir = opts.out_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  try {
    const SystemState state = crossing ? make_crossing_state(config)
                                       : make_interior_state(config, config.seed);
    const TruncationResult result = truncation_experiment(config, scheme, state, crossing);
    const std::string base =
        std::string("truncation_") + scheme_name(scheme) + (crossing ? "_crossing" : "");
    detail::write_file_atomic((out_dir / (base + ".csv")).string(), truncation_csv(result));
    std::ostringstream summary;
    summary << "scheme = " << scheme_name(scheme) << "\n"
            << "crossing = " << (crossing ? 1 : 0) << "\n"
            << "deterministic_noise = " << (config.deterministic_noise ? 1 : 0) << "\n"
            << "slope = " << detail::fmt_g(result.slope, 12) << "\n"
            << "fit_residual = " << detail::fmt_g(result.fit_residual, 12) << "\n";
    detail::write_file_atomic((out_dir / (base + "_summary.txt")).string(), summary.str());
    std::cout << "slope " << result.slope << " (fit residual " << result.fit_residual
              << "), wrote " << base << ".csv\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "truncation error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_snapshot(const CommonOpts& opts, const std::string& times_list) {
  ExperimentConfig config;
  std::vector<double> times;
  try {
    config = load_with_overrides(opts);
    config.validate();
    for (const auto& item : detail::split_csv(times_list)) {
      times.push_back(detail::parse_double(item, "times", 0));
    }
    if (times.empty()) throw std::invalid_argument("no snapshot times given");
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (times[i] <= times[i - 1]) throw std::invalid_argument("times must increase");
    }
    for (double t : times) {
      const double steps = t / config.dt_base;
      if (t < 0 || std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps)) {
        throw std::invalid_argument("snapshot times must be multiples of time_step");
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  const fs::path out_dir = opts.out_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  try {
    const SchemeSpec scheme = config.schemes.front();
    const std::uint64_t run_seed = derive_run_seed(config.seed, 0);
    SystemState s = equilibrate(config, run_seed);
    const DeformingLattice lattice = config.lattice();
    const SimParams params = config.params();
    ForceField ff;
    StepWorkspace ws;
    NoisePath path;
    const std::size_t last_step =
        static_cast<std::size_t>(std::llround(times.back() / config.dt_base));
    if (last_step > 0 && !config.deterministic_noise) {
      path = sample_fine(run_seed, config.dt_base, last_step, config.dim());
    } else {
      path.h_fine = config.dt_base;
      path.steps = std::max<std::size_t>(last_step, 1);
      path.dim = config.dim();
      path.eta.assign(path.steps * path.dim, 0.0);
      path.zeta.assign(path.steps * path.dim, 0.0);
    }
    std::vector<double> xi(config.dim(), 0.0);
    std::size_t step_index = 0;
    StepNoise noise;
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      const auto target = static_cast<std::size_t>(std::llround(times[ti] / config.dt_base));
      for (; step_index < target; ++step_index) {
        noise = path.step_noise(step_index);
        if (scheme.uses_ou_noise() && !config.deterministic_noise) {
          ou_noise_window(path, step_index, step_index + 1, params.gamma, xi);
        }
        step(scheme, s, params, lattice, ff, noise, xi, config.dt_base, ws);
      }
      std::ostringstream name;
      name << "snapshot_" << detail::fmt_g(times[ti], 12) << ".txt";
      detail::write_file_atomic((out_dir / name.str()).string(), snapshot_text(s, lattice));
      std::cout << "wrote " << name.str() << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "snapshot error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(version_string) +
               " - Langevin dynamics under deforming periodic boundary conditions"};
  app.require_subcommand(1);

  CommonOpts opts;
  opts.out_dir = default_out_dir();
  std::string times_list;
  bool crossing = false;

  auto add_common = [&](CLI::App* sub, bool need_scheme) {
    sub->add_option("--config", opts.config_path, "experiment config file")->required();
    auto* sch = sub->add_option("--scheme", opts.scheme_list,
                                "comma-separated scheme list (overrides config)");
    if (need_scheme) sch->required();
    sub->add_option("--out-dir", opts.out_dir, "output directory (default $NELD_OUT_DIR or .)");
    sub->add_option("--runs", opts.runs, "override run count")
        ->each([&](const std::string&) { opts.runs_set = true; });
    sub->add_option("--seed", opts.seed, "override master seed")
        ->each([&](const std::string&) { opts.seed_set = true; });
    sub->add_option("--threads", opts.threads, "worker threads (1 = deterministic mode)");
    sub->add_flag("--deterministic-noise", opts.deterministic_noise,
                  "zero all noise draws (deterministic dynamics)");
  };

  CLI::App* converge = app.add_subcommand("converge", "coupled step-size convergence runs");
  add_common(converge, false);

  CLI::App* truncation = app.add_subcommand("truncation", "one-step truncation slope");
  add_common(truncation, true);
  truncation->add_flag("--crossing", crossing, "force a mid-step boundary crossing");

  CLI::App* snapshot = app.add_subcommand("snapshot", "write plain-text state snapshots");
  add_common(snapshot, false);
  snapshot->add_option("--times", times_list, "comma-separated times (multiples of time_step)")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (converge->parsed()) return cmd_converge(opts);
    if (truncation->parsed()) return cmd_truncation(opts, crossing);
    if (snapshot->parsed()) return cmd_snapshot(opts, times_list);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
