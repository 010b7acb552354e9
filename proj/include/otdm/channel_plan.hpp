#pragma once

#include <cmath>
#include <stdexcept>

#include "otdm/signal.hpp"

namespace otdm {

/// N interleaved branches sharing an aggregate optical bandwidth B.
/// Branches are numbered 1..N; branch l samples at t = (k N + l - 1) / B.
struct ChannelPlan {
  int n_branches = 3;
  double aggregate_bandwidth_hz = 24e9;
  int branch = 1;

  void validate() const {
    if (n_branches < 3 || n_branches % 2 == 0)
      throw std::invalid_argument("ChannelPlan: branch count must be odd and >= 3");
    if (!(aggregate_bandwidth_hz > 0.0) || !std::isfinite(aggregate_bandwidth_hz))
      throw std::invalid_argument("ChannelPlan: aggregate bandwidth must be positive");
    if (branch < 1 || branch > n_branches)
      throw std::invalid_argument("ChannelPlan: branch index out of range 1..N");
  }

  double branch_symbol_rate() const { return aggregate_bandwidth_hz / n_branches; }
  double detection_half_width() const { return aggregate_bandwidth_hz / (2.0 * n_branches); }
  double sequence_period() const { return n_branches / aggregate_bandwidth_hz; }
  /// Offset of branch l's first sampling instant from the grid origin.
  double branch_offset() const { return (branch - 1) / aggregate_bandwidth_hz; }

  ChannelPlan with_branch(int l) const {
    ChannelPlan p = *this;
    p.branch = l;
    p.validate();
    return p;
  }
};

}  // namespace otdm
