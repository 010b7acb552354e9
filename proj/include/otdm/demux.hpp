#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <variant>

#include "otdm/channel_plan.hpp"
#include "otdm/mzm.hpp"
#include "otdm/nyquist.hpp"
#include "otdm/signal.hpp"

namespace otdm {

/// Mathematical sinc-sequence gate.
struct IdealSampler {};

/// Physical gate: a calibrated flat-comb drive applied to the modulator.
struct MzmSampler {
  DrivePlan plan;
  MzmParams params;
};

using Sampler = std::variant<IdealSampler, MzmSampler>;

/// RF phase offset selecting branch l: 2 pi (l - 1) / N.
inline double branch_phase(const ChannelPlan& plan) {
  plan.validate();
  return kTwoPi * (plan.branch - 1) / plan.n_branches;
}

namespace detail {

inline void check_mzm_sampler(const MzmSampler& s, const ChannelPlan& plan) {
  if (!s.plan.calibrated)
    throw std::invalid_argument("demux: MZM sampler requires a calibrated drive plan");
  const auto n_tones = static_cast<std::size_t>((plan.n_branches - 1) / 2);
  if (s.plan.tones.size() != n_tones)
    throw std::invalid_argument("demux: drive plan tone count does not match (N-1)/2");
  const double spacing = plan.branch_symbol_rate();
  for (std::size_t k = 0; k < n_tones; ++k) {
    const double want = spacing * static_cast<double>(k + 1);
    if (std::abs(s.plan.tones[k].frequency_hz - want) > 1e-9 * want)
      throw std::invalid_argument("demux: drive tones must sit at multiples of B/N");
  }
}

}  // namespace detail

/// Gates the incoming field with branch l's sampling sequence. `delay_s`
/// shifts the sampling clock relative to the grid origin.
///
/// The MZM path shifts every drive tone by the branch delay (l-1)/B, which
/// for the fundamental is exactly branch_phase(plan).
inline Signal sample_with_sequence(const Signal& sig, const ChannelPlan& plan, const Sampler& sampler,
                                   double delay_s = 0.0) {
  plan.validate();
  const double shift = sig.grid().t0() + plan.branch_offset() + delay_s;
  if (std::holds_alternative<IdealSampler>(sampler)) {
    const Signal seq =
        sinc_sequence({plan.n_branches, plan.aggregate_bandwidth_hz, shift}, sig.grid());
    return multiply(sig, seq);
  }
  const auto& mzm = std::get<MzmSampler>(sampler);
  detail::check_mzm_sampler(mzm, plan);
  return modulate(sig, mzm.plan.delayed(shift), mzm.params);
}

/// Complex amplitude of the sampling gate at its peak; 1 for the ideal gate.
inline cplx sampler_gain(const Sampler& sampler) {
  if (std::holds_alternative<IdealSampler>(sampler)) return 1.0;
  const auto& mzm = std::get<MzmSampler>(sampler);
  return comb_gain(mzm.plan, mzm.params);
}

/// Sequence sampling followed by a B/(2N) rectangular low-pass and gain
/// restoration, returning branch l's tributary s_l(t) on its original scale.
inline Signal demultiplex(const Signal& sig, const ChannelPlan& plan, const Sampler& sampler,
                          double delay_s = 0.0) {
  const Signal gated = sample_with_sequence(sig, plan, sampler, delay_s);
  const Signal filtered = brickwall_lowpass(gated, plan.detection_half_width());
  return filtered * (static_cast<double>(plan.n_branches) / sampler_gain(sampler));
}

/// One period of the fundamental drive, sampled `samples_per_period` times.
inline TimeGrid comb_grid(double spacing_hz, int samples_per_period) {
  return TimeGrid(spacing_hz * samples_per_period, static_cast<std::size_t>(samples_per_period));
}

/// RMSE between the CW-driven modulator output and the ideal sinc sequence
/// of the same comb, after removing the best complex scale (loss and phase).
inline double sequence_rmse_percent(const DrivePlan& plan, const MzmParams& params, int n_lines,
                                    double spacing_hz, int samples_per_period = 256) {
  const TimeGrid g = comb_grid(spacing_hz, samples_per_period);
  Signal cw(g);
  for (auto& v : cw.samples()) v = 1.0;
  const Signal out = modulate(cw, plan, params);
  const Signal ideal = sinc_sequence({n_lines, n_lines * spacing_hz, 0.0}, g);
  cplx num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    num += ideal[i] * std::conj(out[i]);
    den += std::norm(out[i]);
  }
  if (!(den > 0.0)) throw std::invalid_argument("sequence_rmse_percent: modulator output is zero");
  return rmse_percent(out * (num / den), ideal);
}

/// Reads branch l's symbols off a demultiplexed signal at t = t0 + delay + (l-1)/B + k/rate.
inline SymbolStream recover_symbols(const Signal& branch_signal, const ChannelPlan& plan,
                                    double symbol_rate_hz, std::size_t count, double delay_s = 0.0) {
  plan.validate();
  const double first = branch_signal.grid().t0() + plan.branch_offset() + delay_s;
  return {sample_instants(branch_signal, first, symbol_rate_hz, count), symbol_rate_hz};
}

}  // namespace otdm
