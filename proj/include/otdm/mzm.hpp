#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "otdm/signal.hpp"

namespace otdm {

enum class EoModel { single_pole, gaussian };

inline const char* to_string(EoModel m) { return m == EoModel::single_pole ? "single_pole" : "gaussian"; }

inline EoModel eo_model_from_string(const std::string& s) {
  if (s == "single_pole") return EoModel::single_pole;
  if (s == "gaussian") return EoModel::gaussian;
  throw std::invalid_argument("unknown EO response model '" + s + "'");
}

/// Dual-drive modulator. Extinction values may be +infinity for ideal arms.
struct MzmParams {
  double v_pi = 0.42;
  double eo_3db_bandwidth_hz = 16e9;
  double dc_extinction_arm1_db = 40.0;
  double dc_extinction_arm2_db = 37.0;
  double insertion_loss_db = 0.0;
  EoModel eo_model = EoModel::single_pole;

  void validate() const {
    if (!(v_pi > 0.0)) throw std::invalid_argument("MzmParams: v_pi must be positive");
    if (!(eo_3db_bandwidth_hz > 0.0))
      throw std::invalid_argument("MzmParams: eo_3db_bandwidth must be positive");
    if (!(dc_extinction_arm1_db > 0.0) || !(dc_extinction_arm2_db > 0.0))
      throw std::invalid_argument("MzmParams: extinction ratios must be positive (dB)");
    if (!(insertion_loss_db >= 0.0) || !std::isfinite(insertion_loss_db))
      throw std::invalid_argument("MzmParams: insertion loss must be non-negative");
  }

  /// Flat response, infinite extinction, lossless.
  static MzmParams ideal(double v_pi = 0.42) {
    MzmParams p;
    p.v_pi = v_pi;
    p.eo_3db_bandwidth_hz = std::numeric_limits<double>::infinity();
    p.dc_extinction_arm1_db = std::numeric_limits<double>::infinity();
    p.dc_extinction_arm2_db = std::numeric_limits<double>::infinity();
    return p;
  }
};

/// Field transmission of one arm. The arm is modeled against an ideal
/// partner arm, so an extinction ratio ER fixes (1 + a)^2 / (1 - a)^2 = ER.
inline double arm_amplitude(double extinction_db) {
  if (std::isinf(extinction_db)) return 1.0;
  const double r = std::pow(10.0, extinction_db / 20.0);
  return (r - 1.0) / (r + 1.0);
}

inline double eo_response(double f_hz, const MzmParams& params) {
  if (f_hz < 0.0) throw std::invalid_argument("eo_response: frequency must be non-negative");
  if (std::isinf(params.eo_3db_bandwidth_hz)) return 1.0;
  const double x = f_hz / params.eo_3db_bandwidth_hz;
  switch (params.eo_model) {
    case EoModel::single_pole:
      return 1.0 / std::sqrt(1.0 + x * x);
    case EoModel::gaussian:
      return std::exp(-0.5 * std::numbers::ln2 * x * x);
  }
  return 1.0;
}

struct DriveTone {
  double frequency_hz = 0.0;
  double amplitude_arm1_v = 0.0;
  double amplitude_arm2_v = 0.0;
  double phase_arm1_rad = 0.0;
  double phase_arm2_rad = 0.0;

  /// Complementary drive: arm 2 runs in anti-phase with arm 1.
  static DriveTone push_pull(double f, double amplitude_v, double phase_rad) {
    return {f, amplitude_v, amplitude_v, phase_rad, phase_rad + std::numbers::pi};
  }
};

struct DrivePlan {
  std::vector<DriveTone> tones;
  double bias_arm1_rad = 0.0;
  double bias_arm2_rad = 0.0;
  bool calibrated = false;

  std::size_t comb_lines() const { return 2 * tones.size() + 1; }

  void validate() const {
    for (std::size_t i = 0; i < tones.size(); ++i) {
      if (!(tones[i].frequency_hz > 0.0))
        throw std::invalid_argument("DrivePlan: tone frequencies must be positive");
      for (std::size_t j = 0; j < i; ++j)
        if (tones[j].frequency_hz == tones[i].frequency_hz)
          throw std::invalid_argument("DrivePlan: tone frequencies must be distinct");
    }
  }

  /// Same plan with every tone delayed by `delay_s`.
  DrivePlan delayed(double delay_s) const {
    DrivePlan p = *this;
    for (auto& t : p.tones) {
      const double shift = kTwoPi * t.frequency_hz * delay_s;
      t.phase_arm1_rad -= shift;
      t.phase_arm2_rad -= shift;
    }
    return p;
  }
};

/// Optical field transfer of the interferometer at time t (multiplicative).
inline cplx mzm_transfer(double t, const DrivePlan& plan, const MzmParams& params) {
  const double a1 = arm_amplitude(params.dc_extinction_arm1_db);
  const double a2 = arm_amplitude(params.dc_extinction_arm2_db);
  const double loss = std::pow(10.0, -params.insertion_loss_db / 20.0);
  double phi1 = plan.bias_arm1_rad;
  double phi2 = plan.bias_arm2_rad;
  for (const auto& tone : plan.tones) {
    const double k = std::numbers::pi * eo_response(tone.frequency_hz, params) / params.v_pi;
    const double arg = kTwoPi * tone.frequency_hz * t;
    phi1 += k * tone.amplitude_arm1_v * std::sin(arg + tone.phase_arm1_rad);
    phi2 += k * tone.amplitude_arm2_v * std::sin(arg + tone.phase_arm2_rad);
  }
  return loss * 0.5 * (a1 * std::polar(1.0, phi1) + a2 * std::polar(1.0, phi2));
}

inline Signal modulate(const Signal& field_in, const DrivePlan& plan, const MzmParams& params) {
  params.validate();
  plan.validate();
  const TimeGrid& g = field_in.grid();
  for (const auto& tone : plan.tones)
    if (tone.frequency_hz >= g.nyquist())
      throw std::invalid_argument("modulate: drive tone above grid Nyquist limit");
  Signal out(g);
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = mzm_transfer(g.time(i), plan, params) * field_in[i];
  return out;
}

struct CombReport {
  double flatness_db = 0.0;
  double sideband_suppression_db = 0.0;
  std::vector<double> line_powers_dbm;      // nominal lines, lowest frequency first
  std::vector<double> unwanted_powers_dbm;  // non-nominal lines inside the inspection window
};

/// Line powers below this are reported at the floor so every field stays finite.
inline constexpr double kLineFloorDbm = -300.0;

inline double line_power_dbm(cplx bin) {
  const double p = std::norm(bin);
  return p > 0.0 ? std::max(kLineFloorDbm, 10.0 * std::log10(p)) : kLineFloorDbm;
}

/// Flatness over the N nominal lines and suppression of the strongest other
/// multiple of `spacing` within +-(N+3)/2 spacings. Exact bin lookup.
inline CombReport comb_report(const Spectrum& spec, int n_lines, double spacing_hz) {
  if (n_lines < 1 || n_lines % 2 == 0) throw std::invalid_argument("comb_report: n_lines must be odd");
  if (!(spacing_hz > 0.0)) throw std::invalid_argument("comb_report: spacing must be positive");
  const double ratio = spacing_hz / spec.freq_resolution();
  if (std::abs(ratio - std::round(ratio)) > 1e-6 || std::round(ratio) < 1.0)
    throw std::invalid_argument("comb_report: spectral resolution does not divide the line spacing");
  const int n = (n_lines - 1) / 2;
  const int reach = (n_lines + 3) / 2;
  CombReport r;
  for (int m = -reach; m <= reach; ++m) {
    const auto idx = spec.index_of(m * spacing_hz);
    const bool nominal = std::abs(m) <= n;
    if (!idx) {
      if (nominal) throw std::invalid_argument("comb_report: nominal comb line outside the spectrum");
      continue;
    }
    const double p = line_power_dbm(spec.bins[*idx]);
    (nominal ? r.line_powers_dbm : r.unwanted_powers_dbm).push_back(p);
  }
  const auto [lo, hi] = std::minmax_element(r.line_powers_dbm.begin(), r.line_powers_dbm.end());
  r.flatness_db = *hi - *lo;
  const double worst =
      r.unwanted_powers_dbm.empty()
          ? kLineFloorDbm
          : *std::max_element(r.unwanted_powers_dbm.begin(), r.unwanted_powers_dbm.end());
  r.sideband_suppression_db = *lo - worst;
  return r;
}

struct CalibrationOptions {
  /// Unwanted lines must sit at least this far below the weakest comb line.
  double min_suppression_db = 40.0;
  /// Upper end of the drive scan as a peak modulation index (rad).
  double max_modulation_index = 2.4;
  int amplitude_steps = 48;
  int bias_steps = 60;
  int refine_iterations = 60;
};

struct CalibrationResult {
  DrivePlan plan;
  CombReport report;
  bool converged = false;
  double modulation_index = 0.0;  // effective peak phase swing per arm (rad)
  int evaluations = 0;
};

namespace detail {

/// Cosine-phased push-pull drive: the output field is even in time with its
/// peak at t = 0 and all nominal lines in phase.
inline DrivePlan comb_plan(double spacing_hz, const std::vector<double>& amplitudes, double diff_bias) {
  DrivePlan p;
  for (std::size_t k = 0; k < amplitudes.size(); ++k)
    p.tones.push_back(DriveTone::push_pull(spacing_hz * static_cast<double>(k + 1), amplitudes[k],
                                           -0.5 * std::numbers::pi));
  p.bias_arm1_rad = 0.5 * diff_bias;
  p.bias_arm2_rad = -0.5 * diff_bias;
  return p;
}

struct CombEval {
  CombReport report;
  double mean_line_dbm = 0.0;
};

class CombEvaluator {
public:
  CombEvaluator(int n_lines, double spacing, const MzmParams& params, const TimeGrid& grid)
      : n_lines_(n_lines), spacing_(spacing), params_(params), cw_(grid) {
    for (auto& s : cw_.samples()) s = 1.0;
  }

  CombEval operator()(const std::vector<double>& amplitudes, double diff_bias) {
    ++count;
    const Signal out = modulate(cw_, comb_plan(spacing_, amplitudes, diff_bias), params_);
    CombEval e{comb_report(spectrum(out), n_lines_, spacing_), 0.0};
    double lin = 0.0;
    for (double p : e.report.line_powers_dbm) lin += std::pow(10.0, p / 10.0);
    e.mean_line_dbm = 10.0 * std::log10(lin / static_cast<double>(e.report.line_powers_dbm.size()));
    return e;
  }

  int count = 0;

private:
  int n_lines_;
  double spacing_;
  MzmParams params_;
  Signal cw_;
};

/// Golden-section minimization of a unimodal function on [a, b].
template <typename F>
double golden_minimize(F&& f, double a, double b, int iterations) {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iterations; ++i) {
    if (fc < fd) {
      b = d; d = c; fd = fc;
      c = b - invphi * (b - a); fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + invphi * (b - a); fd = f(d);
    }
  }
  return fc < fd ? c : d;
}

}  // namespace detail

/// Finds a cosine push-pull drive and differential bias producing a flat
/// N-line comb at `spacing_hz` on a CW input.
///
/// Stage one scans drive amplitude against differential bias on a coarse
/// grid. For every amplitude the bias giving the flattest comb is refined by
/// golden-section search, and the strongest comb meeting both the flatness
/// target and the sideband-suppression floor is kept. Stage two refines the
/// amplitude between the last feasible and first infeasible scan point,
/// re-solving the bias at each step. For N > 3 the relative amplitudes of the
/// higher tones are additionally tuned by coordinate descent.
inline CalibrationResult calibrate_flat_comb(int n_lines, double spacing_hz, const MzmParams& params,
                                             double flatness_target_db, const TimeGrid& grid,
                                             const CalibrationOptions& opt = {}) {
  params.validate();
  if (n_lines < 3 || n_lines % 2 == 0)
    throw std::invalid_argument("calibrate_flat_comb: n_lines must be odd and >= 3");
  if (!(spacing_hz > 0.0)) throw std::invalid_argument("calibrate_flat_comb: spacing must be positive");
  if (n_lines * spacing_hz >= grid.nyquist())
    throw std::invalid_argument("calibrate_flat_comb: comb bandwidth exceeds grid Nyquist limit");
  if (!grid.holds_whole_periods(1.0 / spacing_hz))
    throw std::invalid_argument("calibrate_flat_comb: window must hold whole periods of 1/spacing");

  const int n_tones = (n_lines - 1) / 2;
  detail::CombEvaluator eval(n_lines, spacing_hz, params, grid);
  const double volts_per_index =
      params.v_pi / (std::numbers::pi * eo_response(spacing_hz, params));
  const double a_max = opt.max_modulation_index * volts_per_index;

  // Relative amplitudes of tones 2..n with respect to tone 1.
  std::vector<double> profile(static_cast<std::size_t>(n_tones), 0.0);
  profile[0] = 1.0;
  auto amplitudes = [&](double a1) {
    std::vector<double> v(profile.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = a1 * profile[k];
    return v;
  };

  struct Point {
    double amplitude = 0.0;
    double bias = 0.0;
    detail::CombEval e;
  };

  // Best bias for one amplitude: coarse sweep then golden refinement.
  auto solve_bias = [&](double a1) {
    const auto amps = amplitudes(a1);
    double best_bias = 0.0;
    double best_flat = std::numeric_limits<double>::infinity();
    // Differential bias in (0, pi) keeps the side lines in phase with the
    // carrier, i.e. the pulse peak at t = 0 rather than half a period later.
    const double step = std::numbers::pi / opt.bias_steps;
    for (int j = 0; j <= opt.bias_steps; ++j) {
      const double b = j * step;
      const double fl = eval(amps, b).report.flatness_db;
      if (fl < best_flat) { best_flat = fl; best_bias = b; }
    }
    const double b = detail::golden_minimize(
        [&](double x) { return eval(amps, x).report.flatness_db; }, best_bias - step, best_bias + step,
        opt.refine_iterations);
    return Point{a1, b, eval(amps, b)};
  };

  auto feasible = [&](const Point& p) {
    return p.e.report.flatness_db <= flatness_target_db &&
           p.e.report.sideband_suppression_db >= opt.min_suppression_db;
  };

  // Relative tone amplitudes for N > 3: minimize flatness at fixed first tone.
  auto tune_profile = [&](double a1) {
    if (n_tones == 1) return;
    double step = 0.25;
    for (int sweep = 0; sweep < 40 && step > 1e-4; ++sweep) {
      bool improved = false;
      for (std::size_t k = 1; k < profile.size(); ++k) {
        const double base = solve_bias(a1).e.report.flatness_db;
        for (double dir : {+1.0, -1.0}) {
          const double saved = profile[k];
          profile[k] = std::max(0.0, saved + dir * step);
          if (solve_bias(a1).e.report.flatness_db < base) { improved = true; break; }
          profile[k] = saved;
        }
      }
      if (!improved) step *= 0.5;
    }
  };

  std::optional<Point> best_feasible;
  std::optional<Point> best_any;
  double infeasible_above = a_max;
  for (int i = 1; i <= opt.amplitude_steps; ++i) {
    const double a1 = a_max * i / opt.amplitude_steps;
    tune_profile(a1);
    Point p = solve_bias(a1);
    if (!best_any || p.e.report.flatness_db < best_any->e.report.flatness_db) best_any = p;
    if (feasible(p)) {
      if (!best_feasible || p.e.mean_line_dbm > best_feasible->e.mean_line_dbm) {
        best_feasible = p;
        infeasible_above = std::min(a_max, a1 + a_max / opt.amplitude_steps);
      }
    }
  }

  CalibrationResult result;
  Point chosen;
  if (best_feasible) {
    // Push the drive up to the suppression floor by bisection.
    double lo = best_feasible->amplitude;
    double hi = infeasible_above;
    chosen = *best_feasible;
    for (int it = 0; it < 30 && hi - lo > 1e-6 * a_max; ++it) {
      const double mid = 0.5 * (lo + hi);
      Point p = solve_bias(mid);
      if (feasible(p)) {
        lo = mid;
        if (p.e.mean_line_dbm >= chosen.e.mean_line_dbm) chosen = p;
      } else {
        hi = mid;
      }
    }
    result.converged = true;
  } else {
    chosen = *best_any;
    result.converged = false;
  }

  result.plan = detail::comb_plan(spacing_hz, amplitudes(chosen.amplitude), chosen.bias);
  result.plan.calibrated = result.converged;
  result.report = chosen.e.report;
  result.modulation_index = chosen.amplitude / volts_per_index;
  result.evaluations = eval.count;
  return result;
}

/// Sum of the nominal comb-line amplitudes produced on a unit CW input. This
/// is the peak value of the equivalent sampling sequence (1 for the ideal one).
inline cplx comb_gain(const DrivePlan& plan, const MzmParams& params) {
  if (plan.tones.empty()) throw std::invalid_argument("comb_gain: plan has no tones");
  double spacing = plan.tones.front().frequency_hz;
  for (const auto& t : plan.tones) spacing = std::min(spacing, t.frequency_hz);
  const std::size_t per_period = 512;
  const TimeGrid g(spacing * per_period, per_period);
  Signal cw(g);
  for (auto& s : cw.samples()) s = 1.0;
  const Spectrum spec = spectrum(modulate(cw, plan, params));
  const int n = static_cast<int>(plan.tones.size());
  cplx acc = 0.0;
  for (int m = -n; m <= n; ++m) acc += spec.bins[*spec.index_of(m * spacing)];
  return acc;
}

inline nlohmann::json to_json(const DrivePlan& p) {
  nlohmann::json tones = nlohmann::json::array();
  for (const auto& t : p.tones)
    tones.push_back({{"frequency_hz", t.frequency_hz},
                     {"amplitude_arm1_v", t.amplitude_arm1_v},
                     {"amplitude_arm2_v", t.amplitude_arm2_v},
                     {"phase_arm1_rad", t.phase_arm1_rad},
                     {"phase_arm2_rad", t.phase_arm2_rad}});
  return {{"tones", std::move(tones)},
          {"bias_arm1_rad", p.bias_arm1_rad},
          {"bias_arm2_rad", p.bias_arm2_rad},
          {"calibrated", p.calibrated}};
}

inline DrivePlan drive_plan_from_json(const nlohmann::json& j) {
  DrivePlan p;
  for (const auto& t : j.at("tones"))
    p.tones.push_back({t.at("frequency_hz").get<double>(), t.at("amplitude_arm1_v").get<double>(),
                       t.at("amplitude_arm2_v").get<double>(), t.at("phase_arm1_rad").get<double>(),
                       t.at("phase_arm2_rad").get<double>()});
  p.bias_arm1_rad = j.at("bias_arm1_rad").get<double>();
  p.bias_arm2_rad = j.at("bias_arm2_rad").get<double>();
  p.calibrated = j.value("calibrated", false);
  p.validate();
  return p;
}

inline nlohmann::json to_json(const CombReport& r) {
  return {{"flatness_db", r.flatness_db},
          {"sideband_suppression_db", r.sideband_suppression_db},
          {"line_powers_dbm", r.line_powers_dbm},
          {"unwanted_powers_dbm", r.unwanted_powers_dbm}};
}

inline CombReport comb_report_from_json(const nlohmann::json& j) {
  CombReport r;
  r.flatness_db = j.at("flatness_db").get<double>();
  r.sideband_suppression_db = j.at("sideband_suppression_db").get<double>();
  r.line_powers_dbm = j.at("line_powers_dbm").get<std::vector<double>>();
  r.unwanted_powers_dbm = j.value("unwanted_powers_dbm", std::vector<double>{});
  return r;
}

inline std::string format_comb_table(const CombReport& r, double spacing_hz) {
  std::ostringstream os;
  char buf[96];
  os << "  line  offset (GHz)  power (dBm)\n";
  const int n = static_cast<int>(r.line_powers_dbm.size()) / 2;
  for (int m = -n; m <= n; ++m) {
    std::snprintf(buf, sizeof buf, "  %4d  %12.3f  %11.3f\n", m, m * spacing_hz / 1e9,
                  r.line_powers_dbm[static_cast<std::size_t>(m + n)]);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "  flatness            %8.4f dB\n", r.flatness_db);
  os << buf;
  std::snprintf(buf, sizeof buf, "  sideband suppression %7.2f dB\n", r.sideband_suppression_db);
  os << buf;
  return os.str();
}

}  // namespace otdm
