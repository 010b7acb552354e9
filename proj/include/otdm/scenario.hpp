#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "otdm/demux.hpp"
#include "otdm/link.hpp"
#include "otdm/modem.hpp"
#include "otdm/mzm.hpp"
#include "otdm/nyquist.hpp"
#include "otdm/signal.hpp"
#include "otdm/signal_io.hpp"

namespace otdm {

inline constexpr int kScenarioSchemaVersion = 1;

/// Invalid scenario configuration; `field()` is the dotted path of the offending key.
class ConfigError : public std::invalid_argument {
public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)), message_(message) {}
  const std::string& field() const { return field_; }
  const std::string& message() const { return message_; }

private:
  std::string field_;
  std::string message_;
};

enum class Compensation { none, pre_demux, post_detection };

inline const char* to_string(Compensation c) {
  switch (c) {
    case Compensation::none: return "none";
    case Compensation::pre_demux: return "pre_demux";
    case Compensation::post_detection: return "post_detection";
  }
  return "none";
}

struct BranchConfig {
  std::string format = "qpsk";
  double symbol_rate_hz = 8e9;
  double rolloff = 0.0;
};

struct SamplerConfig {
  std::string mode = "ideal";  // ideal | mzm
  MzmParams mzm;
  double flatness_target_db = 0.1;
  double min_suppression_db = 40.0;
  std::optional<DrivePlan> drive_plan;  // calibrated on the fly when absent
};

struct ReceiverConfig {
  double lo_power = 1.0;
  double lo_phase_rad = 0.0;
  bool align = true;  // data-aided complex gain (phase and amplitude)
  int evm_blocks = 10;
  double clock_delay_s = 0.0;
};

struct CombConfig {
  int n_lines = 3;
  double spacing_hz = 10e9;
  double flatness_target_db = 0.1;
  double min_suppression_db = 40.0;
  int samples_per_period = 96;
};

struct OutputConfig {
  bool spectra = true;
  bool constellation = true;
  bool eye = true;
};

struct Scenario {
  std::string mode = "transmission";  // transmission | comb
  std::uint64_t seed = 1;
  double carrier_frequency_thz = 193.4;
  ChannelPlan plan{3, 24e9, 1};
  int oversampling = 8;
  int window_periods = 4095;
  std::vector<BranchConfig> branches = std::vector<BranchConfig>(3);
  double carrier_loss_db = 0.0;
  double laser_linewidth_hz = 0.0;
  FiberSpec fiber;
  std::optional<double> fiber_wavelength_override_nm;
  Compensation compensation = Compensation::pre_demux;
  NoiseSpec noise;
  std::optional<std::uint64_t> noise_seed;
  SamplerConfig sampler;
  ReceiverConfig receiver;
  CombConfig comb;
  OutputConfig outputs;

  std::uint64_t effective_noise_seed() const { return noise_seed ? *noise_seed : seed + 0x9E3779B97F4A7C15ull; }

  double reference_wavelength_nm() const {
    return fiber_wavelength_override_nm ? *fiber_wavelength_override_nm
                                        : wavelength_nm_from_thz(carrier_frequency_thz);
  }

  TimeGrid grid() const {
    const double fs = oversampling * plan.aggregate_bandwidth_hz;
    const auto n = static_cast<std::size_t>(window_periods) * static_cast<std::size_t>(plan.n_branches) *
                   static_cast<std::size_t>(oversampling);
    return TimeGrid(fs, n);
  }

  double window_s() const { return window_periods * plan.sequence_period(); }

  std::size_t branch_symbol_count(std::size_t b) const {
    return static_cast<std::size_t>(std::llround(window_s() * branches[b].symbol_rate_hz));
  }
};

namespace detail {

/// Strict reader over one JSON object: every key must be consumed.
class ObjectReader {
public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json* raw(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  double number(const std::string& key, double def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (!v->is_number()) throw ConfigError(at(key), "expected a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) throw ConfigError(at(key), "must be finite");
    return x;
  }

  std::optional<double> nullable_number(const std::string& key, std::optional<double> def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (v->is_null()) return std::nullopt;
    if (!v->is_number()) throw ConfigError(at(key), "expected a number or null");
    return v->get<double>();
  }

  long long integer(const std::string& key, long long def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (!v->is_number_integer()) throw ConfigError(at(key), "expected an integer");
    return v->get<long long>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (!v->is_number_unsigned()) throw ConfigError(at(key), "expected a non-negative integer");
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (!v->is_boolean()) throw ConfigError(at(key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (!v->is_string()) throw ConfigError(at(key), "expected a string");
    return v->get<std::string>();
  }

  void finish() const {
    for (const auto& [key, val] : j_.items())
      if (!used_.count(key)) throw ConfigError(at(key), "unknown key");
  }

private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace detail

inline void validate(const Scenario& s);

inline Scenario parse_scenario(const nlohmann::json& j) {
  using detail::ObjectReader;
  Scenario s;
  ObjectReader root(j, "");
  const long long version = root.integer("schema_version", -1);
  if (version != kScenarioSchemaVersion)
    throw ConfigError("schema_version", "expected " + std::to_string(kScenarioSchemaVersion));
  s.mode = root.string("mode", s.mode);
  s.seed = root.unsigned_integer("seed", s.seed);
  s.carrier_frequency_thz = root.number("carrier_frequency_thz", s.carrier_frequency_thz);
  s.oversampling = static_cast<int>(root.integer("oversampling", s.oversampling));
  s.window_periods = static_cast<int>(root.integer("window_periods", s.window_periods));
  s.carrier_loss_db = root.number("carrier_loss_db", s.carrier_loss_db);
  s.laser_linewidth_hz = root.number("laser_linewidth_hz", s.laser_linewidth_hz);

  if (const auto* cp = root.raw("channel_plan")) {
    ObjectReader r(*cp, "channel_plan");
    s.plan.n_branches = static_cast<int>(r.integer("n_branches", s.plan.n_branches));
    s.plan.aggregate_bandwidth_hz = r.number("aggregate_bandwidth_ghz", s.plan.aggregate_bandwidth_hz / 1e9) * 1e9;
    r.finish();
  }
  s.branches.assign(static_cast<std::size_t>(std::max(s.plan.n_branches, 0)), BranchConfig{});
  for (auto& b : s.branches) b.symbol_rate_hz = s.plan.aggregate_bandwidth_hz / std::max(s.plan.n_branches, 1);

  auto read_branch = [](const nlohmann::json& bj, const std::string& path, BranchConfig b) {
    ObjectReader r(bj, path);
    b.format = r.string("format", b.format);
    b.symbol_rate_hz = r.number("symbol_rate_gbd", b.symbol_rate_hz / 1e9) * 1e9;
    b.rolloff = r.number("rolloff", b.rolloff);
    r.finish();
    return b;
  };
  if (const auto* br = root.raw("branches")) {
    if (br->is_object()) {
      const BranchConfig common = read_branch(*br, "branches", s.branches.empty() ? BranchConfig{} : s.branches[0]);
      for (auto& b : s.branches) b = common;
    } else if (br->is_array()) {
      if (br->size() != s.branches.size())
        throw ConfigError("branches", "expected " + std::to_string(s.branches.size()) + " entries (one per branch)");
      for (std::size_t i = 0; i < br->size(); ++i)
        s.branches[i] = read_branch((*br)[i], "branches[" + std::to_string(i) + "]", s.branches[i]);
    } else {
      throw ConfigError("branches", "expected an object or an array");
    }
  }

  if (const auto* f = root.raw("fiber")) {
    ObjectReader r(*f, "fiber");
    s.fiber.length_km = r.number("length_km", s.fiber.length_km);
    s.fiber.dispersion_ps_nm_km = r.number("dispersion_ps_nm_km", s.fiber.dispersion_ps_nm_km);
    s.fiber.attenuation_db_km = r.number("attenuation_db_km", s.fiber.attenuation_db_km);
    if (r.has("reference_wavelength_nm")) s.fiber_wavelength_override_nm = r.number("reference_wavelength_nm", 0.0);
    const std::string comp = r.string("compensation", to_string(s.compensation));
    if (comp == "none") s.compensation = Compensation::none;
    else if (comp == "pre_demux") s.compensation = Compensation::pre_demux;
    else if (comp == "post_detection") s.compensation = Compensation::post_detection;
    else throw ConfigError("fiber.compensation", "expected none, pre_demux or post_detection");
    r.finish();
  }

  if (const auto* n = root.raw("noise")) {
    ObjectReader r(*n, "noise");
    const auto osnr = r.nullable_number("osnr_db", std::nullopt);
    s.noise.osnr_db = osnr ? *osnr : std::numeric_limits<double>::infinity();
    s.noise.reference_bandwidth_hz = r.number("reference_bandwidth_ghz", s.noise.reference_bandwidth_hz / 1e9) * 1e9;
    if (r.has("seed")) s.noise_seed = r.unsigned_integer("seed", 0);
    r.finish();
  }

  if (const auto* sm = root.raw("sampler")) {
    ObjectReader r(*sm, "sampler");
    s.sampler.mode = r.string("mode", s.sampler.mode);
    s.sampler.flatness_target_db = r.number("flatness_target_db", s.sampler.flatness_target_db);
    s.sampler.min_suppression_db = r.number("min_suppression_db", s.sampler.min_suppression_db);
    if (const auto* m = r.raw("mzm")) {
      ObjectReader mr(*m, "sampler.mzm");
      auto& p = s.sampler.mzm;
      p.v_pi = mr.number("v_pi_v", p.v_pi);
      const auto bw = mr.nullable_number("eo_3db_bandwidth_ghz", p.eo_3db_bandwidth_hz / 1e9);
      p.eo_3db_bandwidth_hz = bw ? *bw * 1e9 : std::numeric_limits<double>::infinity();
      const auto e1 = mr.nullable_number("dc_extinction_arm1_db", p.dc_extinction_arm1_db);
      const auto e2 = mr.nullable_number("dc_extinction_arm2_db", p.dc_extinction_arm2_db);
      p.dc_extinction_arm1_db = e1 ? *e1 : std::numeric_limits<double>::infinity();
      p.dc_extinction_arm2_db = e2 ? *e2 : std::numeric_limits<double>::infinity();
      p.insertion_loss_db = mr.number("insertion_loss_db", p.insertion_loss_db);
      try {
        p.eo_model = eo_model_from_string(mr.string("eo_model", to_string(p.eo_model)));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("sampler.mzm.eo_model", e.what());
      }
      mr.finish();
    }
    if (const auto* d = r.raw("drive_plan")) {
      try {
        s.sampler.drive_plan = drive_plan_from_json(*d);
      } catch (const std::exception& e) {
        throw ConfigError("sampler.drive_plan", e.what());
      }
    }
    r.finish();
  }

  if (const auto* rc = root.raw("receiver")) {
    ObjectReader r(*rc, "receiver");
    s.receiver.lo_power = r.number("lo_power", s.receiver.lo_power);
    s.receiver.lo_phase_rad = r.number("lo_phase_rad", s.receiver.lo_phase_rad);
    s.receiver.align = r.boolean("align", s.receiver.align);
    s.receiver.evm_blocks = static_cast<int>(r.integer("evm_blocks", s.receiver.evm_blocks));
    s.receiver.clock_delay_s = r.number("clock_delay_ps", s.receiver.clock_delay_s * 1e12) * 1e-12;
    r.finish();
  }

  if (const auto* c = root.raw("comb")) {
    ObjectReader r(*c, "comb");
    s.comb.n_lines = static_cast<int>(r.integer("n_lines", s.comb.n_lines));
    s.comb.spacing_hz = r.number("spacing_ghz", s.comb.spacing_hz / 1e9) * 1e9;
    s.comb.flatness_target_db = r.number("flatness_target_db", s.comb.flatness_target_db);
    s.comb.min_suppression_db = r.number("min_suppression_db", s.comb.min_suppression_db);
    s.comb.samples_per_period = static_cast<int>(r.integer("samples_per_period", s.comb.samples_per_period));
    r.finish();
  }

  if (const auto* o = root.raw("outputs")) {
    ObjectReader r(*o, "outputs");
    s.outputs.spectra = r.boolean("spectra", s.outputs.spectra);
    s.outputs.constellation = r.boolean("constellation", s.outputs.constellation);
    s.outputs.eye = r.boolean("eye", s.outputs.eye);
    // Metrics are always produced; the key is accepted for completeness.
    if (!r.boolean("metrics", true)) throw ConfigError("outputs.metrics", "metrics cannot be disabled");
    r.finish();
  }
  root.finish();
  validate(s);
  return s;
}

/// Internal consistency of a parsed scenario.
inline void validate(const Scenario& s) {
  if (s.mode != "transmission" && s.mode != "comb")
    throw ConfigError("mode", "expected transmission or comb");
  if (!(s.carrier_frequency_thz > 0.0)) throw ConfigError("carrier_frequency_thz", "must be positive");

  if (s.mode == "comb") {
    if (s.comb.n_lines < 3 || s.comb.n_lines % 2 == 0) throw ConfigError("comb.n_lines", "must be odd and >= 3");
    if (!(s.comb.spacing_hz > 0.0)) throw ConfigError("comb.spacing_ghz", "must be positive");
    if (!(s.comb.flatness_target_db > 0.0)) throw ConfigError("comb.flatness_target_db", "must be positive");
    if (s.comb.samples_per_period < 2 * (s.comb.n_lines + 3))
      throw ConfigError("comb.samples_per_period", "too few samples to resolve the inspection window");
    try {
      s.sampler.mzm.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("sampler.mzm", e.what());
    }
    return;
  }

  try {
    s.plan.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("channel_plan", e.what());
  }
  if (s.oversampling < 4) throw ConfigError("oversampling", "must be an integer >= 4");
  if (s.window_periods < 1) throw ConfigError("window_periods", "must be positive");
  if (s.branches.size() != static_cast<std::size_t>(s.plan.n_branches))
    throw ConfigError("branches", "one entry per branch required");
  const double slot = s.plan.branch_symbol_rate();
  for (std::size_t b = 0; b < s.branches.size(); ++b) {
    const auto& br = s.branches[b];
    const std::string at = "branches[" + std::to_string(b) + "]";
    if (br.format != "qpsk" && br.format != "16qam") throw ConfigError(at + ".format", "expected qpsk or 16qam");
    if (!(br.rolloff >= 0.0 && br.rolloff <= 1.0)) throw ConfigError(at + ".rolloff", "must lie in [0, 1]");
    if (!(br.symbol_rate_hz > 0.0)) throw ConfigError(at + ".symbol_rate_gbd", "must be positive");
    if (br.symbol_rate_hz * (1.0 + br.rolloff) > slot * (1.0 + 1e-12))
      throw ConfigError(at + ".symbol_rate_gbd", "shaped bandwidth exceeds the branch slot B/N");
    const double m = s.window_s() * br.symbol_rate_hz;
    if (std::abs(m - std::round(m)) > 1e-9 * m || std::round(m) < 2)
      throw ConfigError("window_periods", "window must hold an integer number of symbols on " + at);
    if (br.rolloff == 0.0 && static_cast<long long>(std::llround(m)) % 2 == 0)
      throw ConfigError("window_periods",
                        "zero-rolloff branches need an odd symbol count per window (no line on the band edge)");
  }
  if (!(s.carrier_loss_db >= 0.0)) throw ConfigError("carrier_loss_db", "must be non-negative");
  if (!(s.laser_linewidth_hz >= 0.0)) throw ConfigError("laser_linewidth_hz", "must be non-negative");
  if (!(s.fiber.length_km >= 0.0)) throw ConfigError("fiber.length_km", "must be non-negative");
  if (!(s.fiber.attenuation_db_km >= 0.0)) throw ConfigError("fiber.attenuation_db_km", "must be non-negative");
  if (s.fiber_wavelength_override_nm && !(*s.fiber_wavelength_override_nm > 0.0))
    throw ConfigError("fiber.reference_wavelength_nm", "must be positive");
  if (!(s.noise.reference_bandwidth_hz > 0.0)) throw ConfigError("noise.reference_bandwidth_ghz", "must be positive");
  if (s.sampler.mode != "ideal" && s.sampler.mode != "mzm") throw ConfigError("sampler.mode", "expected ideal or mzm");
  try {
    s.sampler.mzm.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("sampler.mzm", e.what());
  }
  if (s.sampler.mode == "mzm" && s.sampler.drive_plan) {
    if (!s.sampler.drive_plan->calibrated)
      throw ConfigError("sampler.drive_plan", "drive plan is not marked calibrated");
    try {
      detail::check_mzm_sampler({*s.sampler.drive_plan, s.sampler.mzm}, s.plan);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("sampler.drive_plan", e.what());
    }
  }
  if (!(s.receiver.lo_power > 0.0)) throw ConfigError("receiver.lo_power", "must be positive");
  if (s.receiver.evm_blocks < 1) throw ConfigError("receiver.evm_blocks", "must be >= 1");
}

inline nlohmann::json to_json(const Scenario& s) {
  auto opt_num = [](double v) { return std::isinf(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json branches = nlohmann::json::array();
  for (const auto& b : s.branches)
    branches.push_back({{"format", b.format}, {"symbol_rate_gbd", b.symbol_rate_hz / 1e9}, {"rolloff", b.rolloff}});
  nlohmann::json fiber = {{"length_km", s.fiber.length_km},
                          {"dispersion_ps_nm_km", s.fiber.dispersion_ps_nm_km},
                          {"attenuation_db_km", s.fiber.attenuation_db_km},
                          {"compensation", to_string(s.compensation)}};
  if (s.fiber_wavelength_override_nm) fiber["reference_wavelength_nm"] = *s.fiber_wavelength_override_nm;
  nlohmann::json noise = {{"osnr_db", opt_num(s.noise.osnr_db)},
                          {"reference_bandwidth_ghz", s.noise.reference_bandwidth_hz / 1e9},
                          {"seed", s.effective_noise_seed()}};
  const auto& p = s.sampler.mzm;
  nlohmann::json sampler = {{"mode", s.sampler.mode},
                            {"flatness_target_db", s.sampler.flatness_target_db},
                            {"min_suppression_db", s.sampler.min_suppression_db},
                            {"mzm",
                             {{"v_pi_v", p.v_pi},
                              {"eo_3db_bandwidth_ghz", opt_num(p.eo_3db_bandwidth_hz / 1e9)},
                              {"dc_extinction_arm1_db", opt_num(p.dc_extinction_arm1_db)},
                              {"dc_extinction_arm2_db", opt_num(p.dc_extinction_arm2_db)},
                              {"insertion_loss_db", p.insertion_loss_db},
                              {"eo_model", to_string(p.eo_model)}}}};
  if (s.sampler.drive_plan) sampler["drive_plan"] = to_json(*s.sampler.drive_plan);
  return {{"schema_version", kScenarioSchemaVersion},
          {"mode", s.mode},
          {"seed", s.seed},
          {"carrier_frequency_thz", s.carrier_frequency_thz},
          {"channel_plan", {{"n_branches", s.plan.n_branches}, {"aggregate_bandwidth_ghz", s.plan.aggregate_bandwidth_hz / 1e9}}},
          {"oversampling", s.oversampling},
          {"window_periods", s.window_periods},
          {"branches", std::move(branches)},
          {"carrier_loss_db", s.carrier_loss_db},
          {"laser_linewidth_hz", s.laser_linewidth_hz},
          {"fiber", std::move(fiber)},
          {"noise", std::move(noise)},
          {"sampler", std::move(sampler)},
          {"receiver",
           {{"lo_power", s.receiver.lo_power},
            {"lo_phase_rad", s.receiver.lo_phase_rad},
            {"align", s.receiver.align},
            {"evm_blocks", s.receiver.evm_blocks},
            {"clock_delay_ps", s.receiver.clock_delay_s * 1e12}}},
          {"comb",
           {{"n_lines", s.comb.n_lines},
            {"spacing_ghz", s.comb.spacing_hz / 1e9},
            {"flatness_target_db", s.comb.flatness_target_db},
            {"min_suppression_db", s.comb.min_suppression_db},
            {"samples_per_period", s.comb.samples_per_period}}},
          {"outputs",
           {{"spectra", s.outputs.spectra}, {"constellation", s.outputs.constellation}, {"eye", s.outputs.eye}}}};
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return parse_scenario(j);
}

struct BranchResult {
  int branch = 1;
  std::string format;
  MetricsReport metrics;
  SymbolStream transmitted;
  SymbolStream received;  // after alignment
};

/// Everything a scenario run produces. `files` maps output file names to
/// their exact contents.
struct ReportBundle {
  nlohmann::json config;  // resolved, re-runnable
  std::vector<BranchResult> branches;
  std::optional<CalibrationResult> calibration;
  std::optional<double> comb_rmse_percent;
  std::map<std::string, std::string> files;

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [name, content] : files) {
      std::ofstream out(dir / name, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
      out << content;
    }
  }
};

namespace detail {

inline std::string spectrum_csv(const Spectrum& spec) {
  std::string out = "f_Hz,power_dBm\n";
  for (std::size_t i = 0; i < spec.bins.size(); ++i)
    out += format_double(spec.frequency(i)) + "," + format_double(line_power_dbm(spec.bins[i])) + "\n";
  return out;
}

inline Bits random_bits(std::mt19937_64& rng, std::size_t n) {
  Bits bits(n);
  for (auto& b : bits) b = static_cast<std::uint8_t>(rng() >> 63);
  return bits;
}

/// Least-squares complex gain mapping rx onto ref.
inline cplx data_aided_gain(std::span<const cplx> rx, std::span<const cplx> ref) {
  cplx num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    num += ref[i] * std::conj(rx[i]);
    den += std::norm(rx[i]);
  }
  return den > 0.0 ? num / den : cplx(1.0);
}

}  // namespace detail

inline ReportBundle run_comb(const Scenario& s) {
  ReportBundle bundle;
  const auto& c = s.comb;
  const TimeGrid g = comb_grid(c.spacing_hz, c.samples_per_period);
  CalibrationOptions opt;
  opt.min_suppression_db = c.min_suppression_db;
  CalibrationResult cal = calibrate_flat_comb(c.n_lines, c.spacing_hz, s.sampler.mzm, c.flatness_target_db, g, opt);
  bundle.comb_rmse_percent = sequence_rmse_percent(cal.plan, s.sampler.mzm, c.n_lines, c.spacing_hz);

  nlohmann::json report = {{"schema_version", kScenarioSchemaVersion},
                           {"mode", "comb"},
                           {"seed", s.seed},
                           {"converged", cal.converged},
                           {"modulation_index_rad", cal.modulation_index},
                           {"comb", to_json(cal.report)},
                           {"drive_plan", to_json(cal.plan)},
                           {"waveform_rmse_percent", *bundle.comb_rmse_percent},
                           {"config", to_json(s)}};
  bundle.files["report.json"] = report.dump(2) + "\n";
  bundle.files["comb_table.txt"] = format_comb_table(cal.report, c.spacing_hz);
  if (s.outputs.spectra) {
    Signal cw(g);
    for (auto& v : cw.samples()) v = 1.0;
    bundle.files["spectrum_comb.csv"] = detail::spectrum_csv(spectrum(modulate(cw, cal.plan, s.sampler.mzm)));
  }
  bundle.config = to_json(s);
  bundle.files["config_resolved.json"] = bundle.config.dump(2) + "\n";
  bundle.calibration = std::move(cal);
  return bundle;
}

/// Transmit, impair, demultiplex every branch and measure.
inline ReportBundle run_transmission(Scenario s) {
  ReportBundle bundle;
  const TimeGrid grid = s.grid();
  const ChannelPlan& plan = s.plan;

  // Sampler.
  Sampler sampler = IdealSampler{};
  if (s.sampler.mode == "mzm") {
    if (!s.sampler.drive_plan) {
      CalibrationOptions opt;
      opt.min_suppression_db = s.sampler.min_suppression_db;
      const double spacing = plan.branch_symbol_rate();
      CalibrationResult cal = calibrate_flat_comb(plan.n_branches, spacing, s.sampler.mzm, s.sampler.flatness_target_db,
                                                   comb_grid(spacing, 96), opt);
      if (!cal.converged)
        throw std::runtime_error("sampler calibration did not reach the flatness target");
      s.sampler.drive_plan = cal.plan;
      bundle.calibration = cal;
    }
    sampler = MzmSampler{*s.sampler.drive_plan, s.sampler.mzm};
  }

  // Transmitter.
  std::mt19937_64 rng(s.seed);
  std::vector<Constellation> constellations;
  std::vector<SymbolStream> tx_streams;
  std::vector<Signal> branch_signals;
  for (std::size_t b = 0; b < s.branches.size(); ++b) {
    const auto& bc = s.branches[b];
    constellations.push_back(constellation_from_name(bc.format));
    const Bits bits = detail::random_bits(
        rng, s.branch_symbol_count(b) * static_cast<std::size_t>(constellations.back().bits_per_symbol()));
    tx_streams.push_back(qam_map(bits, constellations.back(), bc.symbol_rate_hz));
    branch_signals.push_back(raised_cosine_shape(tx_streams.back(), bc.rolloff, grid,
                                                 grid.t0() + plan.with_branch(static_cast<int>(b) + 1).branch_offset()));
  }
  Signal field = otdm_multiplex_signals(branch_signals, plan);
  field *= cplx(std::pow(10.0, -s.carrier_loss_db / 20.0), 0.0);
  field = apply_phase_noise(field, s.laser_linewidth_hz, s.seed ^ 0xA5A5A5A5ull);

  // Link.
  FiberSpec fiber = s.fiber;
  fiber.reference_wavelength_nm = s.reference_wavelength_nm();
  field = propagate(field, fiber);
  NoiseSpec noise = s.noise;
  noise.seed = s.effective_noise_seed();
  field = add_noise(field, noise);
  if (s.compensation == Compensation::pre_demux) field = compensate_dispersion(field, fiber);

  if (s.outputs.spectra) bundle.files["spectrum_before_demux.csv"] = detail::spectrum_csv(spectrum(field));

  std::string table = metrics_table_header();
  nlohmann::json branch_reports = nlohmann::json::array();
  for (int l = 1; l <= plan.n_branches; ++l) {
    const auto b = static_cast<std::size_t>(l - 1);
    const ChannelPlan bp = plan.with_branch(l);
    const auto& bc = s.branches[b];
    if (s.outputs.spectra)
      bundle.files["spectrum_branch" + std::to_string(l) + "_sampled.csv"] =
          detail::spectrum_csv(spectrum(sample_with_sequence(field, bp, sampler, s.receiver.clock_delay_s)));
    Signal y = demultiplex(field, bp, sampler, s.receiver.clock_delay_s);
    y = coherent_detect(y, s.receiver.lo_power, s.receiver.lo_phase_rad);
    if (s.compensation == Compensation::post_detection) y = compensate_dispersion(y, fiber);

    const std::size_t count = s.branch_symbol_count(b);
    SymbolStream rx = recover_symbols(y, bp, bc.symbol_rate_hz, count, s.receiver.clock_delay_s);
    cplx gain = 1.0;
    if (s.receiver.align) gain = detail::data_aided_gain(rx.symbols, tx_streams[b].symbols);
    for (auto& v : rx.symbols) v *= gain;

    BranchResult br;
    br.branch = l;
    br.format = bc.format;
    br.metrics = measure(rx.symbols, tx_streams[b].symbols, constellations[b], s.receiver.evm_blocks);
    br.transmitted = tx_streams[b];
    br.received = rx;

    if (s.outputs.constellation) {
      std::string csv = "re,im,decided_symbol\n";
      const auto dec = decide(rx.symbols, constellations[b]);
      for (std::size_t k = 0; k < rx.size(); ++k)
        csv += format_double(rx.symbols[k].real()) + "," + format_double(rx.symbols[k].imag()) + "," +
               std::to_string(dec[k]) + "\n";
      bundle.files["constellation_branch" + std::to_string(l) + ".csv"] = std::move(csv);
    }
    if (s.outputs.eye) {
      std::string csv = "t_mod_2symbols,amplitude\n";
      const double two_symbols = 2.0 / bc.symbol_rate_hz;
      const double first = grid.t0() + bp.branch_offset() + s.receiver.clock_delay_s;
      for (std::size_t i = 0; i < y.size(); ++i) {
        double t = std::fmod(y.time(i) - first, two_symbols);
        if (t < 0.0) t += two_symbols;
        csv += format_double(t) + "," + format_double((y[i] * gain).real()) + "\n";
      }
      bundle.files["eye_branch" + std::to_string(l) + ".csv"] = std::move(csv);
    }
    table += format_metrics_row(bc.format, s.fiber.length_km, l, br.metrics);
    nlohmann::json jr = to_json(br.metrics);
    jr["branch"] = l;
    jr["format"] = bc.format;
    branch_reports.push_back(std::move(jr));
    bundle.branches.push_back(std::move(br));
  }

  bundle.config = to_json(s);
  nlohmann::json report = {{"schema_version", kScenarioSchemaVersion},
                           {"mode", "transmission"},
                           {"seed", s.seed},
                           {"noise_seed", s.effective_noise_seed()},
                           {"branches", std::move(branch_reports)},
                           {"config", bundle.config}};
  if (bundle.calibration) {
    report["calibration"] = {{"converged", bundle.calibration->converged},
                             {"comb", to_json(bundle.calibration->report)},
                             {"drive_plan", to_json(bundle.calibration->plan)}};
  }
  bundle.files["report.json"] = report.dump(2) + "\n";
  bundle.files["metrics_table.txt"] = table;
  bundle.files["config_resolved.json"] = bundle.config.dump(2) + "\n";
  return bundle;
}

inline ReportBundle run_scenario(const Scenario& s) {
  validate(s);
  return s.mode == "comb" ? run_comb(s) : run_transmission(s);
}

/// Splits "a.b.c" into a JSON pointer.
inline nlohmann::json::json_pointer parameter_pointer(const std::string& dotted) {
  std::string ptr;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError(dotted, "malformed parameter path");
    ptr += "/" + part;
  }
  if (ptr.empty()) throw ConfigError(dotted, "empty parameter path");
  return nlohmann::json::json_pointer(ptr);
}

/// One scenario per value of a config parameter (dotted path into the
/// resolved config). Run i uses seed base + i, and noise seed base + i.
inline std::vector<Scenario> sweep_scenarios(const Scenario& base, const std::string& parameter,
                                             const std::vector<double>& values) {
  const nlohmann::json resolved = to_json(base);
  const auto ptr = parameter_pointer(parameter);
  if (!resolved.contains(ptr) || resolved.at(ptr).is_object() || resolved.at(ptr).is_array())
    throw ConfigError(parameter, "unknown sweep parameter");
  std::vector<Scenario> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    nlohmann::json j = resolved;
    if (j.at(ptr).is_number_integer()) {
      if (values[i] != std::round(values[i])) throw ConfigError(parameter, "expects integer values");
      j[ptr] = static_cast<long long>(values[i]);
    } else {
      j[ptr] = values[i];
    }
    j["seed"] = base.seed + i;
    j["noise"]["seed"] = base.effective_noise_seed() + i;
    // A calibrated plan only holds for the plan it was derived from.
    if (parameter.rfind("channel_plan", 0) == 0 || parameter.rfind("sampler.mzm", 0) == 0)
      j["sampler"].erase("drive_plan");
    out.push_back(parse_scenario(j));
  }
  return out;
}

inline std::vector<ReportBundle> sweep(const Scenario& base, const std::string& parameter,
                                       const std::vector<double>& values) {
  std::vector<ReportBundle> out;
  for (const auto& s : sweep_scenarios(base, parameter, values)) out.push_back(run_scenario(s));
  return out;
}

}  // namespace otdm
