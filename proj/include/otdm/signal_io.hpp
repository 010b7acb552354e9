#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "otdm/signal.hpp"

namespace otdm {

/// Shortest round-trip text form of a double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json grid_header(const TimeGrid& g) {
  return {{"sample_rate", g.sample_rate()}, {"n_samples", g.size()}, {"t0", g.t0()}};
}

inline TimeGrid grid_from_header(const nlohmann::json& j) {
  return TimeGrid(j.at("sample_rate").get<double>(), j.at("n_samples").get<std::size_t>(),
                  j.value("t0", 0.0));
}

inline void write_signal_csv(std::ostream& os, const Signal& sig) {
  os << "t_seconds,re,im\n";
  for (std::size_t i = 0; i < sig.size(); ++i)
    os << format_double(sig.time(i)) << ',' << format_double(sig[i].real()) << ','
       << format_double(sig[i].imag()) << '\n';
}

/// Reads the CSV body against a known grid header.
inline Signal read_signal_csv(std::istream& is, const TimeGrid& grid) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("t_seconds", 0) != 0)
    throw std::runtime_error("signal csv: missing 't_seconds,re,im' header");
  std::vector<cplx> samples;
  samples.reserve(grid.size());
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string t, re, im;
    if (!std::getline(ls, t, ',') || !std::getline(ls, re, ',') || !std::getline(ls, im))
      throw std::runtime_error("signal csv: malformed row '" + line + "'");
    samples.emplace_back(std::stod(re), std::stod(im));
  }
  return Signal(grid, std::move(samples));
}

/// Writes <base>.csv (samples) and <base>.json (grid header).
inline void save_signal(const std::string& base, const Signal& sig) {
  std::ofstream csv(base + ".csv");
  std::ofstream hdr(base + ".json");
  if (!csv || !hdr) throw std::runtime_error("save_signal: cannot open " + base);
  write_signal_csv(csv, sig);
  hdr << grid_header(sig.grid()).dump(2) << '\n';
}

inline Signal load_signal(const std::string& base) {
  std::ifstream hdr(base + ".json");
  std::ifstream csv(base + ".csv");
  if (!csv || !hdr) throw std::runtime_error("load_signal: cannot open " + base);
  return read_signal_csv(csv, grid_from_header(nlohmann::json::parse(hdr)));
}

}  // namespace otdm
