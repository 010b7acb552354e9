#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "otdm/signal.hpp"

namespace otdm {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s

/// Standard single-mode fiber defaults (G.652-like).
struct FiberSpec {
  double length_km = 0.0;
  double dispersion_ps_nm_km = 17.0;
  double attenuation_db_km = 0.2;
  double reference_wavelength_nm = 1550.0;

  void validate() const {
    if (!(length_km >= 0.0)) throw std::invalid_argument("FiberSpec: length must be non-negative");
    if (!(attenuation_db_km >= 0.0))
      throw std::invalid_argument("FiberSpec: attenuation must be non-negative");
    if (!(reference_wavelength_nm > 0.0))
      throw std::invalid_argument("FiberSpec: wavelength must be positive");
  }

  /// Coefficient k of the spectral phase k f^2 accumulated over the span (rad/Hz^2).
  double quadratic_phase() const {
    const double lambda = reference_wavelength_nm * 1e-9;
    const double d = dispersion_ps_nm_km * 1e-6;  // s/m^2
    const double l = length_km * 1e3;
    return std::numbers::pi * lambda * lambda / kSpeedOfLight * d * l;
  }

  double field_loss() const { return std::pow(10.0, -attenuation_db_km * length_km / 20.0); }
};

inline double wavelength_nm_from_thz(double carrier_thz) { return kSpeedOfLight / (carrier_thz * 1e12) * 1e9; }

struct NoiseSpec {
  double osnr_db = std::numeric_limits<double>::infinity();
  double reference_bandwidth_hz = 12.5e9;  // 0.1 nm at 1550 nm
  std::uint64_t seed = 1;

  void validate() const {
    if (!(reference_bandwidth_hz > 0.0))
      throw std::invalid_argument("NoiseSpec: reference bandwidth must be positive");
    if (std::isnan(osnr_db)) throw std::invalid_argument("NoiseSpec: osnr is NaN");
  }
};

inline Signal propagate(const Signal& sig, const FiberSpec& fiber) {
  fiber.validate();
  if (fiber.length_km == 0.0) return sig;
  const double k = fiber.quadratic_phase();
  const double loss = fiber.field_loss();
  return apply_frequency_response(sig, [&](double f) { return loss * std::polar(1.0, k * f * f); });
}

/// Inverse dispersion only; span loss is left to the receiver gain.
inline Signal compensate_dispersion(const Signal& sig, const FiberSpec& fiber) {
  fiber.validate();
  if (fiber.length_km == 0.0) return sig;
  const double k = fiber.quadratic_phase();
  return apply_frequency_response(sig, [&](double f) { return std::polar(1.0, -k * f * f); });
}

/// Adds circular white Gaussian field noise over the whole grid bandwidth so
/// that signal power over noise power in the reference bandwidth equals the OSNR.
inline Signal add_noise(const Signal& sig, const NoiseSpec& noise) {
  noise.validate();
  if (std::isinf(noise.osnr_db) && noise.osnr_db > 0.0) return sig;
  const double p = mean_power(sig);
  if (!(p > 0.0)) throw std::invalid_argument("add_noise: signal is identically zero");
  const double osnr = std::pow(10.0, noise.osnr_db / 10.0);
  const double psd = p / (osnr * noise.reference_bandwidth_hz);
  const double sigma = std::sqrt(psd * sig.grid().sample_rate() / 2.0);  // per quadrature
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  Signal out = sig;
  for (auto& s : out.samples()) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    s += cplx(re, im);
  }
  return out;
}

/// Wiener laser phase noise of the given Lorentzian linewidth.
inline Signal apply_phase_noise(const Signal& sig, double linewidth_hz, std::uint64_t seed) {
  if (!(linewidth_hz >= 0.0)) throw std::invalid_argument("apply_phase_noise: negative linewidth");
  if (linewidth_hz == 0.0) return sig;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> step(0.0, std::sqrt(kTwoPi * linewidth_hz * sig.grid().dt()));
  Signal out = sig;
  double phase = 0.0;
  for (auto& s : out.samples()) {
    s *= std::polar(1.0, phase);
    phase += step(rng);
  }
  return out;
}

/// Ideal homodyne detection against a local oscillator.
inline Signal coherent_detect(const Signal& sig, double lo_power, double lo_phase_rad) {
  if (!(lo_power >= 0.0)) throw std::invalid_argument("coherent_detect: LO power must be non-negative");
  return sig * std::polar(std::sqrt(lo_power), -lo_phase_rad);
}

}  // namespace otdm
