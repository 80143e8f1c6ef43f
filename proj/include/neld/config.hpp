#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "neld/harness.hpp"

// Flat `key = value` experiment configuration.  Unknown keys are errors so a
// typo cannot silently fall back to a default; '#' starts a comment.

namespace neld {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& v, const std::string& key, int line) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw std::runtime_error("config line " + std::to_string(line) + ": bad number for '" +
                             key + "': " + v);
  }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key, int line) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw std::runtime_error("config line " + std::to_string(line) + ": bad integer for '" +
                             key + "': " + v);
  }
}

inline std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

inline void apply_config_line(ExperimentConfig& config, const std::string& key,
                              const std::string& value, int line) {
  using detail::parse_double;
  using detail::parse_u64;
  if (key == "time_step") {
    config.dt_base = parse_double(value, key, line);
  } else if (key == "simulation_time") {
    config.t_end = parse_double(value, key, line);
  } else if (key == "equilibration_time") {
    config.t_equil = parse_double(value, key, line);
  } else if (key == "num_particles") {
    config.num_particles = static_cast<std::size_t>(parse_u64(value, key, line));
  } else if (key == "box_side_length") {
    config.box_side = parse_double(value, key, line);
  } else if (key == "friction") {
    config.gamma = parse_double(value, key, line);
  } else if (key == "inverse_temperature") {
    config.beta = parse_double(value, key, line);
  } else if (key == "flow_x") {
    config.flow_rates[0] = parse_double(value, key, line);
  } else if (key == "flow_y") {
    config.flow_rates[1] = parse_double(value, key, line);
  } else if (key == "flow_z") {
    config.flow_rates[2] = parse_double(value, key, line);
  } else if (key == "runs") {
    config.runs = static_cast<std::size_t>(parse_u64(value, key, line));
  } else if (key == "ladder_levels") {
    config.ladder_levels = static_cast<int>(parse_u64(value, key, line));
  } else if (key == "schemes") {
    config.schemes.clear();
    for (const auto& name : detail::split_csv(value)) {
      try {
        config.schemes.push_back(parse_scheme(name));
      } catch (const std::exception& e) {
        throw std::runtime_error("config line " + std::to_string(line) + ": " + e.what());
      }
    }
  } else if (key == "seed") {
    config.seed = parse_u64(value, key, line);
  } else if (key == "checkpoint_stride") {
    config.checkpoint_stride = static_cast<std::size_t>(parse_u64(value, key, line));
  } else {
    throw std::runtime_error("config line " + std::to_string(line) + ": unknown key '" + key +
                             "'");
  }
}

inline ExperimentConfig parse_config_stream(std::istream& in, const std::string& origin) {
  ExperimentConfig config;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string text = detail::trim(raw);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(origin + " line " + std::to_string(line) +
                               ": expected 'key = value'");
    }
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::runtime_error(origin + " line " + std::to_string(line) +
                               ": expected 'key = value'");
    }
    apply_config_line(config, key, value, line);
  }
  return config;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  return parse_config_stream(in, path);
}

// Canonical serialization: parsing the output reproduces the configuration.
inline std::string serialize_config(const ExperimentConfig& config) {
  std::ostringstream out;
  out.precision(17);
  out << "num_particles = " << config.num_particles << "\n";
  out << "box_side_length = " << config.box_side << "\n";
  out << "flow_x = " << config.flow_rates[0] << "\n";
  out << "flow_y = " << config.flow_rates[1] << "\n";
  out << "flow_z = " << config.flow_rates[2] << "\n";
  out << "friction = " << config.gamma << "\n";
  out << "inverse_temperature = " << config.beta << "\n";
  out << "time_step = " << config.dt_base << "\n";
  out << "simulation_time = " << config.t_end << "\n";
  out << "equilibration_time = " << config.t_equil << "\n";
  out << "runs = " << config.runs << "\n";
  out << "ladder_levels = " << config.ladder_levels << "\n";
  out << "checkpoint_stride = " << config.checkpoint_stride << "\n";
  out << "seed = " << config.seed << "\n";
  out << "schemes = ";
  for (std::size_t i = 0; i < config.schemes.size(); ++i) {
    if (i) out << ",";
    out << scheme_name(config.schemes[i]);
  }
  out << "\n";
  return out.str();
}

}  // namespace neld
