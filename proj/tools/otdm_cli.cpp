#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "otdm/scenario.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kConfig = 3, kRuntime = 4, kNotConverged = 5 };

int report_error(const std::string& kind, const std::string& field, const std::string& message, int code) {
  nlohmann::json j = {{"error", kind}, {"message", message}};
  if (!field.empty()) j["field"] = field;
  std::cerr << j.dump() << "\n";
  return code;
}

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw otdm::ConfigError("--values", "not a number: '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw otdm::ConfigError("--values", "no values given");
  return out;
}

otdm::Scenario load(const std::string& path, std::optional<std::uint64_t> seed) {
  otdm::Scenario s = otdm::load_scenario(path);
  if (seed) s.seed = *seed;
  return s;
}

void print_summary(const otdm::ReportBundle& b) {
  if (b.files.count("metrics_table.txt")) std::cout << b.files.at("metrics_table.txt");
  if (b.files.count("comb_table.txt")) std::cout << b.files.at("comb_table.txt");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optical time-division (de)multiplexing simulator"};
  app.require_subcommand(1);
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  app.add_option("--out-dir", out_dir, "Directory for reports and data files");
  app.add_option("--seed", seed, "Override the scenario seed");

  std::string config;
  auto* run = app.add_subcommand("run", "Run one scenario");
  run->add_option("config", config, "Scenario JSON")->required();

  std::string param, values;
  auto* sweep = app.add_subcommand("sweep", "Run a scenario over a list of parameter values");
  sweep->add_option("config", config, "Scenario JSON")->required();
  sweep->add_option("--param", param, "Dotted config path, e.g. noise.osnr_db")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();

  int lines = 3;
  double spacing_ghz = 10.0, flatness = 0.1, min_suppression = 40.0;
  auto* cal = app.add_subcommand("calibrate-comb", "Calibrate a flat comb drive");
  cal->add_option("--lines", lines, "Number of comb lines (odd)")->required();
  cal->add_option("--spacing", spacing_ghz, "Line spacing in GHz")->required();
  cal->add_option("--flatness", flatness, "Flatness target in dB");
  cal->add_option("--min-suppression", min_suppression, "Minimum unwanted sideband suppression in dB");

  auto* val = app.add_subcommand("validate", "Check a scenario without running it");
  val->add_option("config", config, "Scenario JSON")->required();

  for (auto* sub : {run, sweep, cal, val}) {
    sub->add_option("--out-dir", out_dir, "Directory for reports and data files");
    sub->add_option("--seed", seed, "Override the scenario seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", "", e.what(), kUsage);
  }

  try {
    if (*val) {
      const otdm::Scenario s = load(config, seed);
      std::cout << otdm::to_json(s).dump(2) << "\n";
      return kOk;
    }
    if (*run) {
      const otdm::ReportBundle b = otdm::run_scenario(load(config, seed));
      b.write(out_dir);
      print_summary(b);
      if (b.calibration && !b.calibration->converged)
        return report_error("calibration", "", "comb did not reach the flatness target", kNotConverged);
      return kOk;
    }
    if (*sweep) {
      const otdm::Scenario base = load(config, seed);
      const std::vector<double> vals = parse_values(values);
      const auto scenarios = otdm::sweep_scenarios(base, param, vals);
      std::string summary = "index,value,branch,evm_percent,q_i_db,q_q_db,ber_estimated,ber_estimated_log10,ber_counted\n";
      for (std::size_t i = 0; i < scenarios.size(); ++i) {
        const otdm::ReportBundle b = otdm::run_scenario(scenarios[i]);
        char dir[32];
        std::snprintf(dir, sizeof dir, "sweep_%03zu", i);
        b.write(std::filesystem::path(out_dir) / dir);
        for (const auto& br : b.branches) {
          const auto& m = br.metrics;
          summary += std::to_string(i) + "," + otdm::format_double(vals[i]) + "," + std::to_string(br.branch) + "," +
                     otdm::format_double(m.evm_percent.mean) + "," + otdm::format_double(m.q_i_db.mean) + "," +
                     otdm::format_double(m.q_q_db.mean) + "," + otdm::format_double(m.ber_estimated) + "," +
                     otdm::format_double(m.ber_estimated_log10) + "," +
                     otdm::format_double(m.ber_counted.ber()) + "\n";
        }
        if (b.comb_rmse_percent)
          summary += std::to_string(i) + "," + otdm::format_double(vals[i]) + ",comb,,,,,,\n";
      }
      std::filesystem::create_directories(out_dir);
      std::ofstream(std::filesystem::path(out_dir) / "sweep_summary.csv", std::ios::binary) << summary;
      std::cout << summary;
      return kOk;
    }
    if (*cal) {
      otdm::Scenario s;
      s.mode = "comb";
      if (seed) s.seed = *seed;
      s.comb.n_lines = lines;
      s.comb.spacing_hz = spacing_ghz * 1e9;
      s.comb.flatness_target_db = flatness;
      s.comb.min_suppression_db = min_suppression;
      const otdm::ReportBundle b = otdm::run_scenario(s);
      b.write(out_dir);
      print_summary(b);
      if (!b.calibration->converged)
        return report_error("calibration", "", "comb did not reach the flatness target", kNotConverged);
      return kOk;
    }
  } catch (const otdm::ConfigError& e) {
    return report_error("config", e.field(), e.message(), kConfig);
  } catch (const std::invalid_argument& e) {
    return report_error("invalid_argument", "", e.what(), kConfig);
  } catch (const std::exception& e) {
    return report_error("runtime", "", e.what(), kRuntime);
  }
  return kUsage;
}
