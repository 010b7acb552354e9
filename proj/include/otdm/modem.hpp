#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "otdm/nyquist.hpp"
#include "otdm/signal.hpp"

namespace otdm {

/// Unit-mean-power Gray-labeled square constellation. points[i] carries the
/// bit pattern of i, most significant bit first.
///
/// QPSK: bits (b0 b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2), so 00 -> (1+j)/sqrt(2).
/// 16-QAM: (b0 b1) select I and (b2 b3) select Q, each through the Gray map
/// 00 -> +3, 01 -> +1, 11 -> -1, 10 -> -3, scaled by 1/sqrt(10).
struct Constellation {
  int order = 4;
  std::vector<cplx> points;

  int bits_per_symbol() const { return order == 4 ? 2 : 4; }
  std::string name() const { return order == 4 ? "qpsk" : "16qam"; }
};

inline Constellation make_constellation(int order) {
  Constellation c;
  c.order = order;
  if (order == 4) {
    const double s = 1.0 / std::sqrt(2.0);
    for (int i = 0; i < 4; ++i) c.points.emplace_back(s * (1 - 2 * ((i >> 1) & 1)), s * (1 - 2 * (i & 1)));
  } else if (order == 16) {
    auto level = [](int sign_bit, int inner_bit) { return (1 - 2 * sign_bit) * (inner_bit ? 1.0 : 3.0); };
    const double s = 1.0 / std::sqrt(10.0);
    for (int i = 0; i < 16; ++i)
      c.points.emplace_back(s * level((i >> 3) & 1, (i >> 2) & 1), s * level((i >> 1) & 1, i & 1));
  } else {
    throw std::invalid_argument("constellation order must be 4 (QPSK) or 16 (16-QAM)");
  }
  return c;
}

inline Constellation constellation_from_name(const std::string& name) {
  if (name == "qpsk") return make_constellation(4);
  if (name == "16qam") return make_constellation(16);
  throw std::invalid_argument("unknown modulation format '" + name + "'");
}

using Bits = std::vector<std::uint8_t>;

inline SymbolStream qam_map(std::span<const std::uint8_t> bits, const Constellation& c,
                            double symbol_rate_hz) {
  const auto k = static_cast<std::size_t>(c.bits_per_symbol());
  if (bits.size() % k != 0)
    throw std::invalid_argument("qam_map: bit count not divisible by bits per symbol");
  SymbolStream s;
  s.symbol_rate_hz = symbol_rate_hz;
  s.symbols.reserve(bits.size() / k);
  for (std::size_t i = 0; i < bits.size(); i += k) {
    std::size_t idx = 0;
    for (std::size_t b = 0; b < k; ++b) idx = (idx << 1) | (bits[i + b] & 1u);
    s.symbols.push_back(c.points[idx]);
  }
  return s;
}

/// Minimum-distance decisions, as point indices.
inline std::vector<int> decide(std::span<const cplx> symbols, const Constellation& c) {
  std::vector<int> out(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int p = 0; p < c.order; ++p) {
      const double d = std::norm(symbols[i] - c.points[static_cast<std::size_t>(p)]);
      if (d < best_d) { best_d = d; best = p; }
    }
    out[i] = best;
  }
  return out;
}

inline Bits qam_demap(std::span<const cplx> symbols, const Constellation& c) {
  const int k = c.bits_per_symbol();
  Bits bits;
  bits.reserve(symbols.size() * static_cast<std::size_t>(k));
  for (int idx : decide(symbols, c))
    for (int b = k - 1; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((idx >> b) & 1));
  return bits;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  if (v.empty()) return r;
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

/// RMS-referenced EVM in percent over one span of symbols.
inline double evm_percent(std::span<const cplx> rx, std::span<const cplx> ref) {
  if (rx.size() != ref.size()) throw std::invalid_argument("evm: length mismatch");
  if (rx.empty()) throw std::invalid_argument("evm: empty input");
  double err = 0.0, pref = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    err += std::norm(rx[i] - ref[i]);
    pref += std::norm(ref[i]);
  }
  if (!(pref > 0.0)) throw std::invalid_argument("evm: reference has zero power");
  return 100.0 * std::sqrt(err / pref);
}

/// Splits [0, n) into `blocks` near-equal contiguous ranges.
inline std::vector<std::pair<std::size_t, std::size_t>> block_ranges(std::size_t n, int blocks) {
  const auto b = static_cast<std::size_t>(std::clamp<long>(blocks, 1, static_cast<long>(std::max<std::size_t>(n, 1))));
  std::vector<std::pair<std::size_t, std::size_t>> r;
  for (std::size_t i = 0; i < b; ++i) r.emplace_back(i * n / b, (i + 1) * n / b);
  return r;
}

/// EVM mean and spread over equal blocks.
inline MeanStd evm(std::span<const cplx> rx, std::span<const cplx> ref, int blocks = 10) {
  if (rx.size() != ref.size()) throw std::invalid_argument("evm: length mismatch");
  std::vector<double> per_block;
  for (auto [a, b] : block_ranges(rx.size(), blocks))
    per_block.push_back(evm_percent(rx.subspan(a, b - a), ref.subspan(a, b - a)));
  return mean_std(per_block);
}

/// Q values above this are reported at the cap with a flag.
inline constexpr double kQCapDb = 30.0;

struct QuadratureQ {
  double linear = 0.0;  // +inf when the clusters have zero spread
  double db = 0.0;      // clipped to kQCapDb
  bool capped = false;
};

struct QFactor {
  QuadratureQ i;
  QuadratureQ q;
};

namespace detail {

inline QuadratureQ quadrature_q(std::span<const cplx> rx, std::span<const cplx> ref, bool imag_part) {
  // Group received values by the reference decision level.
  std::map<long long, std::vector<double>> groups;
  for (std::size_t n = 0; n < rx.size(); ++n) {
    const double level = imag_part ? ref[n].imag() : ref[n].real();
    groups[std::llround(level * 1e9)].push_back(imag_part ? rx[n].imag() : rx[n].real());
  }
  if (groups.size() < 2) throw std::invalid_argument("q_factor: fewer than two occupied levels in a quadrature");
  std::vector<MeanStd> stats;
  for (auto& [lvl, v] : groups) {
    if (v.size() < 2) throw std::invalid_argument("q_factor: each level needs at least two symbols");
    stats.push_back(mean_std(v));
  }
  double qmin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < stats.size(); ++k) {
    const double sep = stats[k].mean - stats[k - 1].mean;
    const double spread = stats[k].std + stats[k - 1].std;
    const double qv = spread > 0.0 ? sep / spread : (sep > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    qmin = std::min(qmin, qv);
  }
  QuadratureQ r;
  r.linear = qmin;
  const double db = qmin > 0.0 ? 20.0 * std::log10(qmin) : -std::numeric_limits<double>::infinity();
  r.capped = !(db <= kQCapDb);
  r.db = r.capped ? kQCapDb : db;
  return r;
}

}  // namespace detail

/// Decision-threshold Q per quadrature: (mu1 - mu0) / (sigma1 + sigma0) for
/// each pair of adjacent levels, minimum over pairs for multilevel formats.
inline QFactor q_factor(std::span<const cplx> rx, std::span<const cplx> ref) {
  if (rx.size() != ref.size()) throw std::invalid_argument("q_factor: length mismatch");
  return {detail::quadrature_q(rx, ref, false), detail::quadrature_q(rx, ref, true)};
}

/// BER estimate for a two-level decision from a linear Q: erfc(Q / sqrt 2) / 2.
inline double ber_estimate(double q_linear) {
  if (std::isnan(q_linear) || q_linear < 0.0) throw std::invalid_argument("ber_estimate: Q must be non-negative");
  return 0.5 * std::erfc(q_linear / std::sqrt(2.0));
}

/// log10 of ber_estimate, finite where the linear value underflows. Uses the
/// asymptotic series of erfc beyond the double range.
inline double log10_ber_estimate(double q_linear) {
  const double direct = ber_estimate(q_linear);
  if (direct > 1e-280) return std::log10(direct);
  if (std::isinf(q_linear)) return -std::numeric_limits<double>::infinity();
  const double x = q_linear / std::sqrt(2.0);
  const double x2 = x * x;
  double series = 1.0, term = 1.0;
  for (int k = 1; k <= 6; ++k) {
    term *= -(2.0 * k - 1.0) / (2.0 * x2);
    series += term;
  }
  const double ln = -x2 - std::log(x * std::sqrt(std::numbers::pi)) + std::log(series) + std::log(0.5);
  return ln / std::log(10.0);
}

inline constexpr double kHdFecLimit = 4.5e-3;

inline bool below_hd_fec(double ber) { return ber <= kHdFecLimit; }

struct BerCount {
  std::size_t errors = 0;
  std::size_t n_bits = 0;

  double ber() const { return n_bits ? static_cast<double>(errors) / static_cast<double>(n_bits) : 0.0; }
  bool zero_errors() const { return errors == 0; }
};

inline BerCount ber_count(std::span<const std::uint8_t> tx, std::span<const std::uint8_t> rx) {
  if (tx.size() != rx.size()) throw std::invalid_argument("ber_count: length mismatch");
  BerCount r{0, tx.size()};
  for (std::size_t i = 0; i < tx.size(); ++i) r.errors += ((tx[i] ^ rx[i]) & 1u);
  return r;
}

struct MetricsReport {
  MeanStd evm_percent;
  MeanStd q_i_db;
  MeanStd q_q_db;
  bool q_i_capped = false;
  bool q_q_capped = false;
  double ber_estimated = 0.0;
  double ber_estimated_log10 = -std::numeric_limits<double>::infinity();
  BerCount ber_counted;
  bool below_hd_fec = true;
};

/// All metrics for one branch. Q and EVM spreads are taken over `blocks`
/// equal blocks; the Q values themselves come from the whole record.
inline MetricsReport measure(std::span<const cplx> rx, std::span<const cplx> ref, const Constellation& c,
                             int blocks = 10) {
  if (rx.size() != ref.size()) throw std::invalid_argument("measure: length mismatch");
  MetricsReport m;
  m.evm_percent = evm(rx, ref, blocks);
  const QFactor whole = q_factor(rx, ref);
  std::vector<double> qi, qq;
  for (auto [a, b] : block_ranges(rx.size(), blocks)) {
    try {
      const QFactor part = q_factor(rx.subspan(a, b - a), ref.subspan(a, b - a));
      qi.push_back(part.i.db);
      qq.push_back(part.q.db);
    } catch (const std::invalid_argument&) {
      // Block too short to populate every level; it does not contribute to the spread.
    }
  }
  m.q_i_db = {whole.i.db, mean_std(qi).std};
  m.q_q_db = {whole.q.db, mean_std(qq).std};
  m.q_i_capped = whole.i.capped;
  m.q_q_capped = whole.q.capped;
  auto est = [](double q) { return std::isinf(q) ? 0.0 : ber_estimate(q); };
  m.ber_estimated = 0.5 * (est(whole.i.linear) + est(whole.q.linear));
  {
    // log10 of the same average, formed without leaving the log domain.
    const double li = log10_ber_estimate(whole.i.linear), lq = log10_ber_estimate(whole.q.linear);
    const double hi = std::max(li, lq), lo = std::min(li, lq);
    m.ber_estimated_log10 =
        std::isinf(hi) ? hi : hi + std::log10(0.5 * (1.0 + std::pow(10.0, lo - hi)));
  }
  m.ber_counted = ber_count(qam_demap(ref, c), qam_demap(rx, c));
  m.below_hd_fec = below_hd_fec(m.ber_counted.ber()) && below_hd_fec(m.ber_estimated);
  return m;
}

inline nlohmann::json to_json(const MetricsReport& m) {
  auto ms = [](const MeanStd& v) { return nlohmann::json{{"mean", v.mean}, {"std", v.std}}; };
  return {{"evm_percent", ms(m.evm_percent)},
          {"q_i_db", ms(m.q_i_db)},
          {"q_q_db", ms(m.q_q_db)},
          {"q_i_capped", m.q_i_capped},
          {"q_q_capped", m.q_q_capped},
          {"ber_estimated", m.ber_estimated},
          {"ber_estimated_log10", std::isinf(m.ber_estimated_log10) ? nlohmann::json(nullptr)
                                                                      : nlohmann::json(m.ber_estimated_log10)},
          {"ber_counted", m.ber_counted.ber()},
          {"bit_errors", m.ber_counted.errors},
          {"n_bits", m.ber_counted.n_bits},
          {"below_hd_fec", m.below_hd_fec}};
}

inline std::string format_q(const MeanStd& q, bool capped) {
  char buf[64];
  if (capped)
    std::snprintf(buf, sizeof buf, "> %.0f", kQCapDb);
  else
    std::snprintf(buf, sizeof buf, "%.4f +- %.4f", q.mean, q.std);
  return buf;
}

/// One row per branch in the layout format | distance | Q_I | Q_Q | EVM.
inline std::string format_metrics_row(const std::string& format, double distance_km, int branch,
                                      const MetricsReport& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %8.1f %6d  %-20s %-20s %8.4f +- %.4f  %10.3e  %s\n",
                format.c_str(), distance_km, branch, format_q(m.q_i_db, m.q_i_capped).c_str(),
                format_q(m.q_q_db, m.q_q_capped).c_str(), m.evm_percent.mean, m.evm_percent.std,
                m.ber_estimated,
                m.ber_counted.zero_errors()
                    ? ("0 errors in " + std::to_string(m.ber_counted.n_bits) + " bits").c_str()
                    : std::to_string(m.ber_counted.ber()).c_str());
  return buf;
}

inline std::string metrics_table_header() {
  return "format   dist(km) branch  Q_I (dB)             Q_Q (dB)             EVM (%)             "
         "BER_est     BER_counted\n";
}

}  // namespace otdm
