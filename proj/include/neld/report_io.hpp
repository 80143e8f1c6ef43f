#pragma once

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "neld/config.hpp"
#include "neld/version.hpp"

// Output files: per-scheme convergence CSVs, truncation CSVs, plain-text
// state snapshots, and the run manifest.

namespace neld {

inline constexpr int csv_schema_version = 1;

namespace detail {

inline std::string fmt_g(double x, int digits = 12) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

inline void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

// One row per (checkpoint time, adjacent ladder pair).  Pair j compares the
// trajectories at step sizes 2^j dt and 2^(j+1) dt; ord columns relate pair j
// to pair j+1 and are "nan" for the coarsest pair.
inline std::string convergence_csv(const SchemeReport& report) {
  std::ostringstream out;
  out << "t,pair,e_mean_q,e_rms_q,e_mean_p,e_rms_p,ord_mean_q,ord_mean_p\n";
  for (std::size_t c = 0; c < report.times.size(); ++c) {
    for (std::size_t j = 0; j < report.pairs.size(); ++j) {
      const PairSeries& ps = report.pairs[j];
      const bool has_ord = j + 1 < report.pairs.size();
      out << detail::fmt_g(report.times[c], 17) << ',' << j << ','
          << detail::fmt_g(ps.e_mean_q[c]) << ',' << detail::fmt_g(ps.e_rms_q[c]) << ','
          << detail::fmt_g(ps.e_mean_p[c]) << ',' << detail::fmt_g(ps.e_rms_p[c]) << ','
          << (has_ord ? detail::fmt_g(report.ord_mean_q(j, c)) : "nan") << ','
          << (has_ord ? detail::fmt_g(report.ord_mean_p(j, c)) : "nan") << '\n';
    }
  }
  return out.str();
}

inline std::string truncation_csv(const TruncationResult& result) {
  std::ostringstream out;
  out << "dt,error\n";
  for (std::size_t i = 0; i < result.dts.size(); ++i) {
    out << detail::fmt_g(result.dts[i], 17) << ',' << detail::fmt_g(result.errors[i], 17)
        << '\n';
  }
  return out.str();
}

// Plain-text snapshot: `t Lx Ly Lz N` then one `qx qy qz px py pz` line per
// particle, 17 significant digits so doubles round-trip exactly.
inline std::string snapshot_text(const SystemState& state, const DeformingLattice& lattice) {
  const auto edges = lattice.edges_at(state.t);
  std::ostringstream out;
  out << detail::fmt_g(state.t, 17) << ' ' << detail::fmt_g(edges[0], 17) << ' '
      << detail::fmt_g(edges[1], 17) << ' ' << detail::fmt_g(edges[2], 17) << ' '
      << state.particles() << '\n';
  for (std::size_t i = 0; i < state.particles(); ++i) {
    out << detail::fmt_g(state.q[3 * i], 17) << ' ' << detail::fmt_g(state.q[3 * i + 1], 17)
        << ' ' << detail::fmt_g(state.q[3 * i + 2], 17) << ' '
        << detail::fmt_g(state.p[3 * i], 17) << ' ' << detail::fmt_g(state.p[3 * i + 1], 17)
        << ' ' << detail::fmt_g(state.p[3 * i + 2], 17) << '\n';
  }
  return out.str();
}

struct SnapshotData {
  SystemState state;
  std::array<double, 3> edges{};
};

inline SnapshotData parse_snapshot(std::istream& in) {
  SnapshotData snap;
  std::size_t n = 0;
  if (!(in >> snap.state.t >> snap.edges[0] >> snap.edges[1] >> snap.edges[2] >> n)) {
    throw std::runtime_error("snapshot: bad header");
  }
  snap.state.q.resize(3 * n);
  snap.state.p.resize(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(in >> snap.state.q[3 * i] >> snap.state.q[3 * i + 1] >> snap.state.q[3 * i + 2] >>
          snap.state.p[3 * i] >> snap.state.p[3 * i + 1] >> snap.state.p[3 * i + 2])) {
      throw std::runtime_error("snapshot: truncated particle data");
    }
  }
  return snap;
}

inline SnapshotData read_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open snapshot " + path);
  return parse_snapshot(in);
}

// Flat-text manifest, written atomically once every referenced file exists.
// The config echo between the markers is itself a valid config file.
inline std::string manifest_text(const ExperimentConfig& config, double wall_seconds,
                                 const std::vector<std::string>& csv_files,
                                 const std::vector<std::string>& failed_runs_by_scheme) {
  std::ostringstream out;
  out << "manifest_version = 1\n";
  out << "csv_schema_version = " << csv_schema_version << "\n";
  out << "code_version = " << version_string << "\n";
  out << "wall_seconds = " << detail::fmt_g(wall_seconds, 6) << "\n";
  out << "error_convention = wrapped states, nearest-image q difference, "
         "p adjusted by A L n of the image shift\n";
  out << "ord_convention = ord(t) = log2(e_pair(j+1) / e_pair(j)) from the mean-over-runs "
         "series; summaries use the time-median over the second half of the window, no "
         "smoothing\n";
  out << "csv_files =";
  for (std::size_t i = 0; i < csv_files.size(); ++i) out << (i ? "," : " ") << csv_files[i];
  out << "\n";
  for (const auto& line : failed_runs_by_scheme) out << line << "\n";
  out << "config_begin\n";
  out << serialize_config(config);
  out << "config_end\n";
  return out.str();
}

inline std::string extract_config_echo(const std::string& manifest) {
  const auto b = manifest.find("config_begin\n");
  const auto e = manifest.find("config_end");
  if (b == std::string::npos || e == std::string::npos) {
    throw std::runtime_error("manifest: missing config echo markers");
  }
  const auto start = b + std::string("config_begin\n").size();
  return manifest.substr(start, e - start);
}

}  // namespace neld
