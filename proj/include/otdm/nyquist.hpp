#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "otdm/channel_plan.hpp"
#include "otdm/signal.hpp"

namespace otdm {

/// Periodic sum of sinc pulses spaced N/B apart: sum_k sinc(B (t - shift) - k N).
struct SincSequenceSpec {
  int n_lines = 3;
  double bandwidth_hz = 24e9;
  double time_shift_s = 0.0;

  void validate() const {
    if (n_lines < 3 || n_lines % 2 == 0)
      throw std::invalid_argument("SincSequenceSpec: n_lines must be odd and >= 3");
    if (!(bandwidth_hz > 0.0)) throw std::invalid_argument("SincSequenceSpec: bandwidth must be positive");
  }
  double period() const { return n_lines / bandwidth_hz; }
  double line_spacing() const { return bandwidth_hz / n_lines; }
};

struct SymbolStream {
  std::vector<cplx> symbols;
  double symbol_rate_hz = 0.0;

  std::size_t size() const { return symbols.size(); }
};

/// Evaluates the sequence in closed form. The infinite sinc sum equals the
/// N-line Dirichlet kernel (1/N) sum_{|m| <= n} exp(j 2 pi m B/N t), so the
/// result is exact on any grid.
inline double sinc_sequence_value(const SincSequenceSpec& spec, double t) {
  const int n = (spec.n_lines - 1) / 2;
  const double x = kTwoPi * spec.line_spacing() * (t - spec.time_shift_s);
  double acc = 1.0;
  for (int m = 1; m <= n; ++m) acc += 2.0 * std::cos(m * x);
  return acc / spec.n_lines;
}

inline Signal sinc_sequence(const SincSequenceSpec& spec, const TimeGrid& grid) {
  spec.validate();
  if (!grid.holds_whole_periods(spec.period()))
    throw std::invalid_argument("sinc_sequence: window is not an integer number of periods N/B");
  if (spec.bandwidth_hz / 2.0 >= grid.nyquist())
    throw std::invalid_argument("sinc_sequence: bandwidth exceeds grid Nyquist limit");
  Signal out(grid);
  for (std::size_t i = 0; i < grid.size(); ++i)
    out[i] = sinc_sequence_value(spec, grid.time(i));
  return out;
}

/// Raised-cosine spectrum normalized to H(0) = 1. For rolloff 0 this is the
/// rectangular Nyquist spectrum with value 0.5 on the band edge.
inline double raised_cosine_response(double f, double symbol_rate, double rolloff) {
  const double af = std::abs(f);
  const double half = 0.5 * symbol_rate;
  const double tol = 1e-9 * half;
  if (rolloff <= 0.0) {
    if (std::abs(af - half) <= tol) return 0.5;
    return af < half ? 1.0 : 0.0;
  }
  const double lo = (1.0 - rolloff) * half;
  const double hi = (1.0 + rolloff) * half;
  if (af <= lo) return 1.0;
  if (af >= hi) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi / (rolloff * symbol_rate) * (af - lo)));
}

/// Periodized pulse shaping on the window. The window must hold exactly
/// stream.size() symbol periods; the first symbol sits at t = first_instant_s.
inline Signal raised_cosine_shape(const SymbolStream& stream, double rolloff, const TimeGrid& grid,
                                  double first_instant_s = 0.0) {
  if (!(rolloff >= 0.0 && rolloff <= 1.0))
    throw std::invalid_argument("raised_cosine_shape: rolloff must lie in [0, 1]");
  if (!(stream.symbol_rate_hz > 0.0))
    throw std::invalid_argument("raised_cosine_shape: symbol rate must be positive");
  if (stream.symbols.empty()) throw std::invalid_argument("raised_cosine_shape: empty stream");
  const double rate = stream.symbol_rate_hz;
  if (!(grid.sample_rate() > rate))
    throw std::invalid_argument("raised_cosine_shape: sample rate must exceed symbol rate");
  if ((1.0 + rolloff) * rate / 2.0 >= grid.nyquist())
    throw std::invalid_argument("raised_cosine_shape: occupied band exceeds grid Nyquist limit");
  const auto m = static_cast<long>(stream.size());
  const double window_symbols = grid.duration() * rate;
  if (std::abs(window_symbols - static_cast<double>(m)) > 1e-9 * static_cast<double>(m))
    throw std::invalid_argument("raised_cosine_shape: window must hold exactly one period of the stream");

  auto coeff = detail::dft(stream.symbols, /*inverse=*/false);
  for (auto& c : coeff) c /= static_cast<double>(m);

  Spectrum spec{grid, std::vector<cplx>(grid.size())};
  const double shift = first_instant_s - grid.t0();
  for (std::size_t i = 0; i < spec.bins.size(); ++i) {
    const long k = spec.bin_number(i);
    const double f = spec.frequency(i);
    const double h = raised_cosine_response(f, rate, rolloff);
    if (h == 0.0) continue;
    const long idx = ((k % m) + m) % m;
    spec.bins[i] = h * coeff[static_cast<std::size_t>(idx)] * std::polar(1.0, -kTwoPi * f * shift);
  }
  return inverse_spectrum(spec);
}

/// Ideal sinc (Nyquist) interpolation; identical to rolloff 0 shaping.
inline Signal nyquist_interpolate(const SymbolStream& stream, const TimeGrid& grid,
                                  double first_instant_s = 0.0) {
  return raised_cosine_shape(stream, 0.0, grid, first_instant_s);
}

/// Sum over branches of s_l(t) * sincseq(t - (l-1)/B) for branch signals
/// that are already band-limited to B/(2N).
inline Signal otdm_multiplex_signals(const std::vector<Signal>& branches, const ChannelPlan& plan) {
  plan.validate();
  if (static_cast<int>(branches.size()) != plan.n_branches)
    throw std::invalid_argument("otdm_multiplex: channel count does not match plan");
  const TimeGrid& grid = branches.front().grid();
  Signal out(grid);
  for (int l = 1; l <= plan.n_branches; ++l) {
    const Signal seq = sinc_sequence(
        {plan.n_branches, plan.aggregate_bandwidth_hz, grid.t0() + plan.with_branch(l).branch_offset()},
        grid);
    out += multiply(branches[static_cast<std::size_t>(l - 1)], seq);
  }
  return out;
}

/// Orthogonal time-division multiplexing of N Nyquist streams at B/N each.
inline Signal otdm_multiplex(const std::vector<SymbolStream>& channels, const ChannelPlan& plan,
                             const TimeGrid& grid) {
  plan.validate();
  if (static_cast<int>(channels.size()) != plan.n_branches)
    throw std::invalid_argument("otdm_multiplex: channel count does not match plan");
  const double rate = plan.branch_symbol_rate();
  std::vector<Signal> branches;
  branches.reserve(channels.size());
  for (int l = 1; l <= plan.n_branches; ++l) {
    const auto& ch = channels[static_cast<std::size_t>(l - 1)];
    if (std::abs(ch.symbol_rate_hz - rate) > 1e-12 * rate)
      throw std::invalid_argument("otdm_multiplex: channel symbol rate must equal B/N");
    branches.push_back(
        nyquist_interpolate(ch, grid, grid.t0() + plan.with_branch(l).branch_offset()));
  }
  return otdm_multiplex_signals(branches, plan);
}

/// Aggregate stream at rate B: symbol k N + l - 1 is channel l's k-th symbol.
inline SymbolStream interleave(const std::vector<SymbolStream>& channels) {
  if (channels.empty()) throw std::invalid_argument("interleave: no channels");
  const std::size_t k_count = channels.front().size();
  SymbolStream out;
  out.symbol_rate_hz = channels.front().symbol_rate_hz * static_cast<double>(channels.size());
  out.symbols.reserve(k_count * channels.size());
  for (const auto& ch : channels)
    if (ch.size() != k_count) throw std::invalid_argument("interleave: unequal channel lengths");
  for (std::size_t k = 0; k < k_count; ++k)
    for (const auto& ch : channels) out.symbols.push_back(ch.symbols[k]);
  return out;
}

inline nlohmann::json to_json(const SymbolStream& s) {
  nlohmann::json sym = nlohmann::json::array();
  for (const auto& v : s.symbols) sym.push_back({v.real(), v.imag()});
  return {{"symbol_rate", s.symbol_rate_hz}, {"symbols", std::move(sym)}};
}

inline SymbolStream symbol_stream_from_json(const nlohmann::json& j) {
  SymbolStream s;
  s.symbol_rate_hz = j.at("symbol_rate").get<double>();
  for (const auto& p : j.at("symbols")) {
    if (!p.is_array() || p.size() != 2)
      throw std::invalid_argument("symbol stream json: each symbol must be a [re, im] pair");
    s.symbols.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  return s;
}

}  // namespace otdm
