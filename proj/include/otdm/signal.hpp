#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "otdm/fft.hpp"

namespace otdm {

using cplx = std::complex<double>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Uniform sampling grid. Sample i sits at t0 + i / sample_rate.
class TimeGrid {
public:
  TimeGrid(double sample_rate_hz, std::size_t n_samples, double t0_s = 0.0)
      : sample_rate_(sample_rate_hz), n_samples_(n_samples), t0_(t0_s) {
    if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
      throw std::invalid_argument("TimeGrid: sample_rate must be positive");
    if (n_samples == 0) throw std::invalid_argument("TimeGrid: n_samples must be positive");
    if (!std::isfinite(t0_s)) throw std::invalid_argument("TimeGrid: t0 must be finite");
  }

  double sample_rate() const { return sample_rate_; }
  std::size_t size() const { return n_samples_; }
  double t0() const { return t0_; }
  double duration() const { return static_cast<double>(n_samples_) / sample_rate_; }
  double dt() const { return 1.0 / sample_rate_; }
  double time(std::size_t i) const { return t0_ + static_cast<double>(i) / sample_rate_; }
  double freq_resolution() const { return sample_rate_ / static_cast<double>(n_samples_); }
  double nyquist() const { return 0.5 * sample_rate_; }

  /// True when the window holds an integer number of periods of length `period`.
  bool holds_whole_periods(double period, double tol = 1e-9) const {
    const double count = duration() / period;
    return count >= 1.0 - tol && std::abs(count - std::round(count)) <= tol * std::max(1.0, count);
  }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

private:
  double sample_rate_;
  std::size_t n_samples_;
  double t0_;
};

/// Sampled complex field envelope. Amplitudes are in sqrt(mW), so |x|^2 is mW.
class Signal {
public:
  explicit Signal(TimeGrid grid) : grid_(grid), samples_(grid.size()) {}

  Signal(TimeGrid grid, std::vector<cplx> samples) : grid_(grid), samples_(std::move(samples)) {
    if (samples_.size() != grid_.size())
      throw std::invalid_argument("Signal: sample count does not match grid");
  }

  const TimeGrid& grid() const { return grid_; }
  std::size_t size() const { return samples_.size(); }
  std::span<const cplx> samples() const { return samples_; }
  std::span<cplx> samples() { return samples_; }
  const cplx& operator[](std::size_t i) const { return samples_[i]; }
  cplx& operator[](std::size_t i) { return samples_[i]; }
  double time(std::size_t i) const { return grid_.time(i); }

  Signal& operator+=(const Signal& other) {
    require_same_grid(other);
    for (std::size_t i = 0; i < samples_.size(); ++i) samples_[i] += other.samples_[i];
    return *this;
  }
  Signal& operator-=(const Signal& other) {
    require_same_grid(other);
    for (std::size_t i = 0; i < samples_.size(); ++i) samples_[i] -= other.samples_[i];
    return *this;
  }
  Signal& operator*=(cplx gain) {
    for (auto& s : samples_) s *= gain;
    return *this;
  }

  friend Signal operator+(Signal a, const Signal& b) { return a += b; }
  friend Signal operator-(Signal a, const Signal& b) { return a -= b; }
  friend Signal operator*(Signal a, cplx g) { return a *= g; }
  friend Signal operator*(cplx g, Signal a) { return a *= g; }

  /// Sample-wise product of two signals on the same grid.
  friend Signal multiply(const Signal& a, const Signal& b) {
    a.require_same_grid(b);
    Signal out(a.grid_);
    for (std::size_t i = 0; i < a.size(); ++i) out.samples_[i] = a.samples_[i] * b.samples_[i];
    return out;
  }

  void require_same_grid(const Signal& other) const {
    if (!(grid_ == other.grid_)) throw std::invalid_argument("Signal: grids differ");
  }

private:
  TimeGrid grid_;
  std::vector<cplx> samples_;
};

/// Line amplitudes of a periodic window, centered on the carrier.
///
/// bins[i] is the complex amplitude of the component at (i - center) * df,
/// normalized by the sample count, so a constant signal of amplitude a has a
/// single bin of value a and |bins[i]|^2 is the power carried by that line.
/// Phases are referenced to the first sample of the window.
struct Spectrum {
  TimeGrid grid;
  std::vector<cplx> bins;

  double freq_resolution() const { return grid.freq_resolution(); }
  std::size_t center() const { return bins.size() / 2; }
  long bin_number(std::size_t i) const {
    return static_cast<long>(i) - static_cast<long>(center());
  }
  double frequency(std::size_t i) const {
    return static_cast<double>(bin_number(i)) * freq_resolution();
  }

  /// Index of the bin at frequency f, if f lies on the bin grid.
  std::optional<std::size_t> index_of(double f, double tol = 1e-6) const {
    const double k = f / freq_resolution();
    const double kr = std::round(k);
    if (std::abs(k - kr) > tol) return std::nullopt;
    const long idx = static_cast<long>(kr) + static_cast<long>(center());
    if (idx < 0 || idx >= static_cast<long>(bins.size())) return std::nullopt;
    return static_cast<std::size_t>(idx);
  }

  double total_power() const {
    double p = 0.0;
    for (const auto& b : bins) p += std::norm(b);
    return p;
  }
};

inline Spectrum spectrum(const Signal& sig) {
  const std::size_t n = sig.size();
  auto raw = detail::dft(sig.samples(), /*inverse=*/false);
  Spectrum out{sig.grid(), std::vector<cplx>(n)};
  const std::size_t c = n / 2;
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) out.bins[i] = raw[(i + n - c) % n] * scale;
  return out;
}

inline Signal inverse_spectrum(const Spectrum& spec) {
  const std::size_t n = spec.bins.size();
  if (n != spec.grid.size()) throw std::invalid_argument("inverse_spectrum: bin count mismatch");
  std::vector<cplx> raw(n);
  const std::size_t c = n / 2;
  for (std::size_t i = 0; i < n; ++i) raw[(i + n - c) % n] = spec.bins[i];
  return Signal(spec.grid, detail::dft(raw, /*inverse=*/true));
}

/// Applies a real or complex frequency response H(f) bin by bin.
template <typename Response>
Signal apply_frequency_response(const Signal& sig, Response&& response) {
  Spectrum s = spectrum(sig);
  for (std::size_t i = 0; i < s.bins.size(); ++i) s.bins[i] *= response(s.frequency(i));
  return inverse_spectrum(s);
}

/// Rectangular low-pass: unity for |f| < half_width, 0.5 at |f| == half_width,
/// zero elsewhere. The boundary test is done on the bin grid.
inline Signal brickwall_lowpass(const Signal& sig, double half_width_hz) {
  const TimeGrid& g = sig.grid();
  if (!(half_width_hz > 0.0) || half_width_hz >= g.nyquist())
    throw std::invalid_argument("brickwall_lowpass: half_width must lie in (0, sample_rate/2)");
  const double edge = half_width_hz / g.freq_resolution();
  Spectrum s = spectrum(sig);
  for (std::size_t i = 0; i < s.bins.size(); ++i) {
    const double k = std::abs(static_cast<double>(s.bin_number(i)));
    if (std::abs(k - edge) <= 1e-9 * std::max(1.0, edge))
      s.bins[i] *= 0.5;
    else if (k > edge)
      s.bins[i] = 0.0;
  }
  return inverse_spectrum(s);
}

inline double mean_power(std::span<const cplx> x) {
  if (x.empty()) return 0.0;
  double p = 0.0;
  for (const auto& v : x) p += std::norm(v);
  return p / static_cast<double>(x.size());
}

inline double mean_power(const Signal& sig) { return mean_power(sig.samples()); }

inline double power_dbm(const Signal& sig) { return 10.0 * std::log10(mean_power(sig)); }

inline Signal normalize(const Signal& sig) {
  const double p = mean_power(sig);
  if (!(p > 0.0)) throw std::invalid_argument("normalize: signal is identically zero");
  return sig * cplx(1.0 / std::sqrt(p), 0.0);
}

/// 100 * rms(measured - reference) / peak(|reference|).
inline double rmse_percent(const Signal& measured, const Signal& reference) {
  measured.require_same_grid(reference);
  double peak = 0.0;
  double err = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    peak = std::max(peak, std::abs(reference[i]));
    err += std::norm(measured[i] - reference[i]);
  }
  if (!(peak > 0.0)) throw std::invalid_argument("rmse_percent: reference is identically zero");
  return 100.0 * std::sqrt(err / static_cast<double>(reference.size())) / peak;
}

/// Value of the periodic band-limited interpolant of `sig` at time t.
/// On-grid instants return the stored sample directly.
inline cplx evaluate_at(const Signal& sig, const Spectrum& spec, double t) {
  const TimeGrid& g = sig.grid();
  const auto n = static_cast<long>(g.size());
  const double pos = (t - g.t0()) * g.sample_rate();
  const double rpos = std::round(pos);
  if (std::abs(pos - rpos) <= 1e-9 * std::max(1.0, std::abs(pos))) {
    long i = static_cast<long>(rpos) % n;
    if (i < 0) i += n;
    return sig[static_cast<std::size_t>(i)];
  }
  const double tau = t - g.t0();
  cplx acc = 0.0;
  for (std::size_t i = 0; i < spec.bins.size(); ++i) {
    const double f = spec.frequency(i);
    if (g.size() % 2 == 0 && i == 0) {
      // Nyquist bin of an even-length window: split symmetrically.
      acc += spec.bins[i] * std::cos(kTwoPi * f * tau);
      continue;
    }
    acc += spec.bins[i] * std::polar(1.0, kTwoPi * f * tau);
  }
  return acc;
}

inline cplx evaluate_at(const Signal& sig, double t) { return evaluate_at(sig, spectrum(sig), t); }

/// Samples `count` instants first, first + 1/rate, ... using band-limited
/// interpolation when instants fall between grid samples.
inline std::vector<cplx> sample_instants(const Signal& sig, double first_s, double rate_hz,
                                         std::size_t count) {
  if (!(rate_hz > 0.0)) throw std::invalid_argument("sample_instants: rate must be positive");
  std::vector<cplx> out(count);
  std::optional<Spectrum> spec;
  const TimeGrid& g = sig.grid();
  for (std::size_t k = 0; k < count; ++k) {
    const double t = first_s + static_cast<double>(k) / rate_hz;
    const double pos = (t - g.t0()) * g.sample_rate();
    if (std::abs(pos - std::round(pos)) > 1e-9 * std::max(1.0, std::abs(pos)) && !spec)
      spec = spectrum(sig);
    out[k] = spec ? evaluate_at(sig, *spec, t) : evaluate_at(sig, Spectrum{g, {}}, t);
  }
  return out;
}

}  // namespace otdm
