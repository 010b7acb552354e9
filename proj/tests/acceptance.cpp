#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "otdm/scenario.hpp"

using namespace otdm;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o{false, ""};
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0.0 && dt > limit_s) {
    o.pass = false;
    o.detail += "; over time limit";
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %d: %s [%s; %.2f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), dt);
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<SymbolStream> random_channels(std::mt19937_64& rng, const Constellation& c, int n, std::size_t m,
                                          double rate) {
  std::vector<SymbolStream> out;
  for (int l = 0; l < n; ++l) {
    Bits bits(m * static_cast<std::size_t>(c.bits_per_symbol()));
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng() >> 63);
    out.push_back(qam_map(bits, c, rate));
  }
  return out;
}

double max_rel_symbol_error(std::span<const cplx> rx, std::span<const cplx> ref) {
  double worst = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) worst = std::max(worst, std::abs(rx[i] - ref[i]) / std::abs(ref[i]));
  return worst;
}

/// Energy at branch l's symbol instants after demultiplexing.
double instant_energy(const Signal& sig, const ChannelPlan& plan, int l, const Sampler& s, std::size_t count) {
  const ChannelPlan p = plan.with_branch(l);
  const SymbolStream rx = recover_symbols(demultiplex(sig, p, s), p, p.branch_symbol_rate(), count);
  double e = 0.0;
  for (const auto& v : rx.symbols) e += std::norm(v);
  return e;
}

Scenario reference_link(double osnr_db) {
  Scenario s;
  s.plan = {3, 24e9, 1};
  s.window_periods = 4095;
  s.branches.assign(3, BranchConfig{"qpsk", 8e9, 0.0});
  s.fiber.length_km = 30.0;
  s.compensation = Compensation::pre_demux;
  s.noise.osnr_db = osnr_db;
  s.noise_seed = 2024;
  s.sampler.mode = "mzm";
  s.outputs = {false, false, false};
  return s;
}

}  // namespace

int main() {
  const double b = 24e9;
  const ChannelPlan plan{3, b, 1};
  const int os = 8;

  criterion(1, "round-trip exactness over 100 seeds (QPSK and 16-QAM)", 10.0, [&] {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      const Constellation c = make_constellation(seed % 2 ? 16 : 4);
      const std::size_t m = 63;
      const auto ch = random_channels(rng, c, 3, m, b / 3);
      const Signal sig = otdm_multiplex(ch, plan, TimeGrid(os * b, m * 3 * os));
      for (int l = 1; l <= 3; ++l) {
        const ChannelPlan p = plan.with_branch(l);
        const SymbolStream rx = recover_symbols(demultiplex(sig, p, IdealSampler{}), p, b / 3, m);
        worst = std::max(worst, max_rel_symbol_error(rx.symbols, ch[static_cast<std::size_t>(l - 1)].symbols));
      }
    }
    return Outcome{worst <= 1e-9, "max relative symbol error " + fmt("%.3e", worst)};
  });

  criterion(2, "sinc-sequence construction equals interleaved-sinc construction", 0.0, [&] {
    std::mt19937_64 rng(42);
    const std::size_t m = 255;
    const TimeGrid g(os * b, m * 3 * os);
    const auto ch = random_channels(rng, make_constellation(16), 3, m, b / 3);
    const Signal a = otdm_multiplex(ch, plan, g);
    const Signal i = nyquist_interpolate(interleave(ch), g);
    double diff = 0.0, peak = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      diff = std::max(diff, std::abs(a[k] - i[k]));
      peak = std::max(peak, std::abs(i[k]));
    }
    return Outcome{diff / peak <= 1e-9, "max relative waveform difference " + fmt("%.3e", diff / peak)};
  });

  criterion(3, "cross-talk with one active branch: ideal >= 60 dB, calibrated MZM >= 40 dB", 0.0, [&] {
    std::mt19937_64 rng(3);
    const std::size_t m = 255;
    auto ch = random_channels(rng, make_constellation(4), 3, m, b / 3);
    for (auto& v : ch[1].symbols) v = 0.0;
    for (auto& v : ch[2].symbols) v = 0.0;
    const Signal sig = otdm_multiplex(ch, plan, TimeGrid(os * b, m * 3 * os));
    const auto cal = calibrate_flat_comb(3, b / 3, MzmParams{}, 0.1, comb_grid(b / 3, 96));
    if (!cal.converged || cal.report.flatness_db > 0.1) return Outcome{false, "MZM sampler calibration failed"};
    const Sampler ideal = IdealSampler{}, mzm = MzmSampler{cal.plan, MzmParams{}};
    double worst_ideal = 1e300, worst_mzm = 1e300;
    const double ai = instant_energy(sig, plan, 1, ideal, m), am = instant_energy(sig, plan, 1, mzm, m);
    for (int l = 2; l <= 3; ++l) {
      worst_ideal = std::min(worst_ideal, 10.0 * std::log10(ai / (instant_energy(sig, plan, l, ideal, m) + 1e-300)));
      worst_mzm = std::min(worst_mzm, 10.0 * std::log10(am / instant_energy(sig, plan, l, mzm, m)));
    }
    return Outcome{worst_ideal >= 60.0 && worst_mzm >= 40.0,
                   "ideal " + fmt("%.1f", worst_ideal) + " dB, MZM " + fmt("%.2f", worst_mzm) + " dB (flatness " +
                       fmt("%.4f", cal.report.flatness_db) + " dB)"};
  });

  for (double spacing : {10e9, 20e9, 30e9}) {
    criterion(4, "comb calibration at " + fmt("%.0f", spacing / 1e9) + " GHz: flatness <= 0.1 dB, waveform RMSE <= 1%",
              60.0, [&] {
                const auto cal = calibrate_flat_comb(3, spacing, MzmParams{}, 0.1, comb_grid(spacing, 96));
                const double rmse = sequence_rmse_percent(cal.plan, MzmParams{}, 3, spacing);
                return Outcome{cal.converged && cal.report.flatness_db <= 0.1 && rmse <= 1.0,
                               "flatness " + fmt("%.4f", cal.report.flatness_db) + " dB, RMSE " + fmt("%.3f", rmse) +
                                   " %, suppression " + fmt("%.2f", cal.report.sideband_suppression_db) + " dB"};
              });
  }

  criterion(5, "Q to BER formula at 18.46 dB and integration cross-check", 0.0, [&] {
    const double q = std::pow(10.0, 18.46 / 20.0);
    const double ber = ber_estimate(q);
    // Simpson integration of the Gaussian density tail.
    auto tail = [](double x0) {
      const int n = 400000;
      const double h = 40.0 / n;
      auto phi = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); };
      double acc = phi(x0) + phi(x0 + 40.0);
      for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * phi(x0 + i * h);
      return acc * h / 3.0;
    };
    double worst = 0.0;
    for (double x : {1.0, 3.0, 7.03, q}) worst = std::max(worst, std::abs(ber_estimate(x) / tail(x) - 1.0));
    return Outcome{ber >= 1e-18 && ber <= 1e-16 && worst <= 1e-3,
                   "BER " + fmt("%.3e", ber) + ", worst relative deviation from integration " + fmt("%.2e", worst)};
  });

  criterion(6, "estimated vs counted BER on Gaussian-noise QPSK (1e7 bits)", 120.0, [&] {
    const Constellation c = make_constellation(4);
    std::mt19937_64 rng(6);
    std::string detail;
    bool ok = true;
    for (double target : {1e-4, 1e-3, 1e-2}) {
      double q = 0.0;
      for (double lo = 0.0, hi = 10.0; hi - lo > 1e-10;) {
        q = 0.5 * (lo + hi);
        (ber_estimate(q) > target ? lo : hi) = q;
      }
      const double sigma = (1.0 / std::sqrt(2.0)) / q;
      const std::size_t n_sym = 5000000;
      Bits bits(2 * n_sym);
      for (auto& bit : bits) bit = static_cast<std::uint8_t>(rng() >> 63);
      const SymbolStream ref = qam_map(bits, c, 1.0);
      std::normal_distribution<double> g(0.0, sigma);
      std::vector<cplx> rx(ref.symbols);
      for (auto& v : rx) v += cplx(g(rng), g(rng));
      const MetricsReport m = measure(rx, ref.symbols, c);
      const double counted = m.ber_counted.ber();
      const double ratio = m.ber_estimated / counted;
      const bool in_range = counted >= 1e-4 * 0.8 && counted <= 1e-2 * 1.2;
      ok = ok && in_range && ratio > 1.0 / 3.0 && ratio < 3.0 && m.ber_counted.n_bits >= 10000000;
      detail += (detail.empty() ? "" : ", ") + fmt("counted %.3e", counted) + fmt(" est %.3e", m.ber_estimated);
    }
    return Outcome{ok, detail};
  });

  criterion(7, "dispersion phase oracle and compensation round trip", 0.0, [&] {
    const TimeGrid g(160e9, 160);
    Signal tone(g);
    for (std::size_t i = 0; i < g.size(); ++i) tone[i] = std::polar(1.0, 2.0 * std::numbers::pi * 10e9 * g.time(i));
    FiberSpec f;
    f.length_km = 30.0;
    f.attenuation_db_km = 0.0;
    const double lambda = 1550e-9;
    const double expect = std::numbers::pi * lambda * lambda / 299792458.0 * 17e-6 * 30e3 * 1e20;
    const double got = std::arg(propagate(tone, f)[0] / tone[0]);
    const double phase_err = std::abs(got - expect) / expect;
    std::mt19937_64 rng(7);
    std::vector<SymbolStream> ch = random_channels(rng, make_constellation(4), 3, 255, b / 3);
    const Signal sig = otdm_multiplex(ch, plan, TimeGrid(os * b, 255 * 3 * os));
    const Signal back = compensate_dispersion(propagate(sig, f), f);
    double diff = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < sig.size(); ++i) {
      diff = std::max(diff, std::abs(back[i] - sig[i]));
      peak = std::max(peak, std::abs(sig[i]));
    }
    return Outcome{phase_err <= 1e-9 && diff / peak <= 1e-9,
                   "phase " + fmt("%.6f", got) + " rad (analytic " + fmt("%.6f", expect) + "), round trip " +
                       fmt("%.2e", diff / peak)};
  });

  criterion(8, "branch symmetry in the MZM-sampler scenario at OSNR 33 dB", 0.0, [&] {
    const ReportBundle r = run_scenario(reference_link(33.0));
    double lo = 1e300, hi = 0.0;
    std::string detail = "EVM";
    for (const auto& br : r.branches) {
      lo = std::min(lo, br.metrics.evm_percent.mean);
      hi = std::max(hi, br.metrics.evm_percent.mean);
      detail += fmt(" %.3f%%", br.metrics.evm_percent.mean);
    }
    return Outcome{r.branches.size() == 3 && (hi - lo) / lo <= 0.10, detail + fmt(", spread %.1f%%", 100.0 * (hi - lo) / lo)};
  });

  criterion(9, "OSNR sweep 15 to 40 dB: EVM non-increasing, estimated BER strictly decreasing", 0.0, [&] {
    double prev_evm = 1e300, prev_ber = 1.0;
    bool ok = true;
    std::string detail;
    for (double osnr = 15.0; osnr <= 40.0; osnr += 5.0) {
      const ReportBundle r = run_scenario(reference_link(osnr));
      const auto& m = r.branches[0].metrics;
      ok = ok && m.evm_percent.mean <= prev_evm && m.ber_estimated_log10 < prev_ber;
      prev_evm = m.evm_percent.mean;
      prev_ber = m.ber_estimated_log10;
      detail += (detail.empty() ? "" : ", ") + fmt("%.0f dB:", osnr) + fmt(" EVM %.2f%%", m.evm_percent.mean) +
                fmt(" log10 BER %.1f", m.ber_estimated_log10);
    }
    return Outcome{ok, detail};
  });

  criterion(10, "bit-identical re-runs", 0.0, [&] {
    Scenario s = reference_link(20.0);
    s.outputs = {true, true, true};
    const auto dir = std::filesystem::temp_directory_path() / "otdm_acceptance_rerun";
    std::filesystem::remove_all(dir);
    run_scenario(s).write(dir / "a");
    run_scenario(s).write(dir / "b");
    std::size_t files = 0;
    bool same = true;
    for (const auto& e : std::filesystem::directory_iterator(dir / "a")) {
      auto read = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
      };
      same = same && read(e.path()) == read(dir / "b" / e.path().filename());
      ++files;
    }
    std::filesystem::remove_all(dir);
    return Outcome{same && files > 0, std::to_string(files) + " files compared"};
  });

  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
