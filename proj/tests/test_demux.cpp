#include <gtest/gtest.h>

#include <cmath>

#include "otdm/demux.hpp"
#include "test_util.hpp"

using namespace otdm;
using otdm::oracle::Gen;

namespace {

constexpr double kB = 24e9;
constexpr int kOs = 8;

TimeGrid grid_for(int n_branches, std::size_t symbols_per_branch, double b = kB) {
  return TimeGrid(kOs * b, symbols_per_branch * static_cast<std::size_t>(n_branches * kOs));
}

std::vector<SymbolStream> random_channels(Gen& gen, const Constellation& c, int n, std::size_t m, double rate) {
  std::vector<SymbolStream> out;
  for (int l = 0; l < n; ++l) out.push_back(gen.symbols(c, m, rate));
  return out;
}

/// Circular shift by whole samples: out(t) = in(t + shift * dt).
Signal advance(const Signal& s, long shift) {
  const long n = static_cast<long>(s.size());
  Signal out(s.grid());
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(((i + shift) % n + n) % n)];
  return out;
}

const MzmSampler& mzm_sampler_8ghz() {
  static const MzmSampler s = [] {
    const auto cal = calibrate_flat_comb(3, 8e9, MzmParams{}, 0.1, comb_grid(8e9, 96));
    if (!cal.converged) throw std::runtime_error("calibration failed in fixture");
    return MzmSampler{cal.plan, MzmParams{}};
  }();
  return s;
}

double max_branch_error_percent(const std::vector<SymbolStream>& ch, const Signal& sig, const ChannelPlan& plan,
                                const Sampler& sampler) {
  double worst = 0.0;
  for (int l = 1; l <= plan.n_branches; ++l) {
    const ChannelPlan p = plan.with_branch(l);
    const auto& ref = ch[static_cast<std::size_t>(l - 1)];
    const Signal d = demultiplex(sig, p, sampler);
    const SymbolStream rx = recover_symbols(d, p, ref.symbol_rate_hz, ref.size());
    worst = std::max(worst, evm_percent(rx.symbols, ref.symbols));
  }
  return worst;
}

}  // namespace

TEST(BranchPhase, ThreeBranchValues) {
  ChannelPlan p{3, kB, 1};
  EXPECT_DOUBLE_EQ(branch_phase(p), 0.0);
  EXPECT_NEAR(branch_phase(p.with_branch(2)), 2.0 * std::numbers::pi / 3.0, 1e-15);
  EXPECT_NEAR(branch_phase(p.with_branch(3)), 4.0 * std::numbers::pi / 3.0, 1e-15);
  p.branch = 4;
  EXPECT_THROW(branch_phase(p), std::invalid_argument);
}

TEST(SampleWithSequence, ConstantInputGivesBranchSequence) {
  const TimeGrid g = grid_for(3, 31);
  Signal one(g);
  for (auto& v : one.samples()) v = 1.0;
  for (int l = 1; l <= 3; ++l) {
    const ChannelPlan p{3, kB, l};
    const Signal got = sample_with_sequence(one, p, IdealSampler{});
    for (std::size_t i = 0; i < g.size(); i += 7) {
      const double expect = oracle::truncated_sinc_sum(3, kB, g.time(i) - (l - 1) / kB, 20000);
      EXPECT_NEAR(got[i].real(), expect, 2e-4);
      EXPECT_NEAR(got[i].imag(), 0.0, 1e-15);
    }
  }
}

TEST(Demultiplex, ZeroInputGivesZero) {
  const TimeGrid g = grid_for(3, 31);
  const Signal z(g);
  EXPECT_EQ(oracle::max_abs(demultiplex(z, {3, kB, 2}, IdealSampler{}).samples()), 0.0);
  EXPECT_EQ(oracle::max_abs(demultiplex(z, {3, kB, 2}, mzm_sampler_8ghz()).samples()), 0.0);
}

TEST(Demultiplex, RoundTripRecoversEveryBranch) {
  Gen gen(7);
  const ChannelPlan plan{3, kB, 1};
  const auto ch = random_channels(gen, make_constellation(4), 3, 63, kB / 3);
  const Signal sig = otdm_multiplex(ch, plan, grid_for(3, 63));
  EXPECT_LT(max_branch_error_percent(ch, sig, plan, IdealSampler{}), 1e-8);
}

TEST(DemultiplexProperty, RoundTripOverSeedsAndSizes) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Gen gen(seed);
    const int n = 3 + 2 * gen.integer(0, 2);
    const std::size_t m = 2 * static_cast<std::size_t>(gen.integer(4, 20)) + 1;
    const double b = n * 8e9;
    const ChannelPlan plan{n, b, 1};
    const auto ch = random_channels(gen, make_constellation(gen.integer(0, 1) ? 16 : 4), n, m, b / n);
    const Signal sig = otdm_multiplex(ch, plan, grid_for(n, m, b));
    EXPECT_LT(max_branch_error_percent(ch, sig, plan, IdealSampler{}), 1e-8) << "seed " << seed << " N " << n;
  }
}

TEST(DemultiplexProperty, NextBranchIsOneSlotLater) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Gen gen(seed);
    const TimeGrid g = grid_for(3, 15);
    const Signal x = gen.bandlimited(g, kB / 2);
    const Sampler samplers[] = {IdealSampler{}, mzm_sampler_8ghz()};
    for (const auto& s : samplers) {
      for (int l = 1; l <= 2; ++l) {
        // Branch l+1 of x equals branch l of x advanced by 1/B, delayed back.
        const Signal next = demultiplex(x, {3, kB, l + 1}, s);
        const Signal via = advance(demultiplex(advance(x, kOs), {3, kB, l}, s), -kOs);
        EXPECT_LT(oracle::rel_err(next.samples(), via.samples()), 1e-10) << "seed " << seed;
      }
    }
  }
}

TEST(DemultiplexProperty, IgnoresContentOutsideTheAggregateBand) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Gen gen(seed);
    const ChannelPlan plan{3, kB, 1};
    const auto ch = random_channels(gen, make_constellation(4), 3, 31, kB / 3);
    const Signal sig = otdm_multiplex(ch, plan, grid_for(3, 31));
    // Out-of-band interference beyond the sequence span plus the detection band.
    Spectrum sp = spectrum(gen.noise_signal(sig.grid()));
    for (std::size_t i = 0; i < sp.bins.size(); ++i)
      if (std::abs(sp.frequency(i)) <= kB / 2 + kB / 6 + 1e6) sp.bins[i] = 0.0;
    const Signal dirty = sig + inverse_spectrum(sp);
    for (int l = 1; l <= 3; ++l) {
      const Signal a = demultiplex(sig, plan.with_branch(l), IdealSampler{});
      const Signal b = demultiplex(dirty, plan.with_branch(l), IdealSampler{});
      EXPECT_LT(oracle::rel_err(b.samples(), a.samples()), 1e-10);
    }
  }
}

TEST(Demultiplex, IdealCrosstalkIsNegligible) {
  Gen gen(3);
  const ChannelPlan plan{3, kB, 1};
  auto ch = random_channels(gen, make_constellation(4), 3, 63, kB / 3);
  for (auto& v : ch[1].symbols) v = 0.0;
  for (auto& v : ch[2].symbols) v = 0.0;
  const Signal sig = otdm_multiplex(ch, plan, grid_for(3, 63));
  const double active = mean_power(demultiplex(sig, plan, IdealSampler{}));
  for (int l = 2; l <= 3; ++l) {
    const double leak = mean_power(demultiplex(sig, plan.with_branch(l), IdealSampler{}));
    EXPECT_LT(10.0 * std::log10(leak / active + 1e-300), -60.0);
  }
}

TEST(Demultiplex, MzmCrosstalkBelowFortyDb) {
  Gen gen(3);
  const ChannelPlan plan{3, kB, 1};
  auto ch = random_channels(gen, make_constellation(4), 3, 63, kB / 3);
  for (auto& v : ch[1].symbols) v = 0.0;
  for (auto& v : ch[2].symbols) v = 0.0;
  const Signal sig = otdm_multiplex(ch, plan, grid_for(3, 63));
  const Sampler s = mzm_sampler_8ghz();
  const double active = mean_power(demultiplex(sig, plan, s));
  for (int l = 2; l <= 3; ++l) {
    const double leak = mean_power(demultiplex(sig, plan.with_branch(l), s));
    EXPECT_LT(10.0 * std::log10(leak / active), -40.0) << "branch " << l;
  }
}

TEST(Demultiplex, MzmRoundTripIsClose) {
  Gen gen(11);
  const ChannelPlan plan{3, kB, 1};
  const auto ch = random_channels(gen, make_constellation(4), 3, 63, kB / 3);
  const Signal sig = otdm_multiplex(ch, plan, grid_for(3, 63));
  EXPECT_LT(max_branch_error_percent(ch, sig, plan, mzm_sampler_8ghz()), 3.0);
}

TEST(SampleWithSequence, MzmGateTracksIdealGate) {
  Gen gen(5);
  const TimeGrid g = grid_for(3, 31);
  const Signal x = gen.bandlimited(g, kB / 6);
  const MzmSampler& s = mzm_sampler_8ghz();
  for (int l = 1; l <= 3; ++l) {
    const ChannelPlan p{3, kB, l};
    const Signal ideal = sample_with_sequence(x, p, IdealSampler{});
    const Signal phys = sample_with_sequence(x, p, s) * (1.0 / sampler_gain(s));
    EXPECT_LT(rmse_percent(phys, ideal), 2.0);
  }
}

TEST(SamplerGainTest, IdealIsUnityAndMzmMatchesPeak) {
  EXPECT_EQ(sampler_gain(IdealSampler{}), cplx(1.0));
  const MzmSampler& s = mzm_sampler_8ghz();
  // Oracle: direct DFT of the CW-driven gate at the three nominal lines.
  const TimeGrid g = comb_grid(8e9, 60);
  Signal cw(g);
  for (auto& v : cw.samples()) v = 1.0;
  const Signal out = modulate(cw, s.plan, s.params);
  cplx expect = 0.0;
  for (long k = -1; k <= 1; ++k) expect += oracle::direct_bin(out.samples(), k);
  EXPECT_LT(std::abs(sampler_gain(s) - expect), 1e-12);
  // The waveform peak differs from it only by the suppressed sidebands.
  EXPECT_LT(std::abs(sampler_gain(s) - mzm_transfer(0.0, s.plan, s.params)), 0.02 * std::abs(sampler_gain(s)));
}

TEST(Demultiplex, RejectsUnusableMzmPlans) {
  const TimeGrid g = grid_for(3, 31);
  Signal x(g);
  x[0] = 1.0;
  MzmSampler s = mzm_sampler_8ghz();
  s.plan.calibrated = false;
  EXPECT_THROW(demultiplex(x, {3, kB, 1}, s), std::invalid_argument);
  s = mzm_sampler_8ghz();
  EXPECT_THROW(demultiplex(x, {5, 40e9, 1}, s), std::invalid_argument);  // wrong tone count
  EXPECT_THROW(demultiplex(x, {3, 30e9, 1}, s), std::invalid_argument);  // tones off B/N
}

TEST(RecoverSymbols, ReadsSlotInstants) {
  const TimeGrid g = grid_for(3, 5);
  Signal x(g);
  for (std::size_t i = 0; i < g.size(); ++i) x[i] = static_cast<double>(i);
  const SymbolStream s = recover_symbols(x, {3, kB, 2}, kB / 3, 5);
  ASSERT_EQ(s.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(s.symbols[k].real(), static_cast<double>(kOs + 3 * kOs * k), 1e-9);
  EXPECT_DOUBLE_EQ(s.symbol_rate_hz, kB / 3);
}
