// Multiplexes three QPSK tributaries, demultiplexes them with the ideal
// sinc-sequence gate and with a calibrated modulator gate, and prints EVM.
#include <cstdio>
#include <random>

#include "otdm/demux.hpp"
#include "otdm/modem.hpp"
#include "otdm/nyquist.hpp"

int main() {
  using namespace otdm;
  const ChannelPlan plan{3, 24e9, 1};
  const double rate = plan.branch_symbol_rate();
  const std::size_t m = 511;
  const TimeGrid grid(8 * plan.aggregate_bandwidth_hz, m * 3 * 8);
  const Constellation qpsk = make_constellation(4);

  std::mt19937_64 rng(42);
  std::vector<SymbolStream> tx;
  for (int l = 0; l < plan.n_branches; ++l) {
    Bits bits(2 * m);
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng() >> 63);
    tx.push_back(qam_map(bits, qpsk, rate));
  }
  const Signal field = otdm_multiplex(tx, plan, grid);

  const double spacing = rate;
  const CalibrationResult cal =
      calibrate_flat_comb(3, spacing, MzmParams{}, 0.1, TimeGrid(96 * spacing, 96), CalibrationOptions{});
  std::printf("comb: flatness %.3f dB, suppression %.1f dB\n", cal.report.flatness_db,
              cal.report.sideband_suppression_db);

  const Sampler samplers[] = {IdealSampler{}, MzmSampler{cal.plan, MzmParams{}}};
  const char* names[] = {"ideal", "mzm"};
  for (int s = 0; s < 2; ++s) {
    for (int l = 1; l <= plan.n_branches; ++l) {
      const ChannelPlan bp = plan.with_branch(l);
      const Signal y = demultiplex(field, bp, samplers[s]);
      const SymbolStream rx = recover_symbols(y, bp, rate, m);
      std::printf("%-5s branch %d  EVM %.3e %%\n", names[s], l, evm_percent(rx.symbols, tx[l - 1].symbols));
    }
  }
}
