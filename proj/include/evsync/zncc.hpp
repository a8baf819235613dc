#pragma once

#include <cstdint>
#include <vector>

#include "evsync/events.hpp"

namespace evsync {

// Events per fixed time bin. t0 is anchored to the bin grid of the stream's
// own clock (floor(first_t / bin) * bin), so lag estimates are multiples of
// the bin width — the resolution floor this baseline is known for.
struct RateSignal {
  std::int64_t bin_width_us = 0;
  std::int64_t t0_us = 0;
  std::vector<double> counts;
};

RateSignal event_rate(const EventStream& s, std::int64_t bin_width_us);

struct ZnccOffset {
  std::int64_t offset_us = 0;   // amount by which signal 2's clock leads signal 1's
  double peak_score = 0;        // in [-1, 1]
};

// Scans integer-bin lags whose implied offset lies in [t_min, t_max] and at
// least 8 bins overlap; returns the lag maximizing the zero-normalized cross
// correlation (ties broken toward the smallest |offset|).
ZnccOffset zncc_offset(const RateSignal& sig1, const RateSignal& sig2, std::int64_t t_min_us,
                       std::int64_t t_max_us);

}  // namespace evsync
