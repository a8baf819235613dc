#include "evsync/zncc.hpp"

#include <algorithm>
#include <cmath>

#include "evsync/errors.hpp"

namespace evsync {

RateSignal event_rate(const EventStream& s, std::int64_t bin_width_us) {
  if (bin_width_us <= 0) throw ValidationError("event rate: bin width must be positive");
  RateSignal sig;
  sig.bin_width_us = bin_width_us;
  if (s.events.empty()) return sig;

  const std::int64_t first = s.events.front().t;
  sig.t0_us = (first / bin_width_us) * bin_width_us;  // timestamps are >= 0
  const std::int64_t last = s.events.back().t;
  const std::size_t n_bins = static_cast<std::size_t>((last - sig.t0_us) / bin_width_us) + 1;
  sig.counts.assign(n_bins, 0.0);
  for (const Event& e : s.events)
    sig.counts[static_cast<std::size_t>((e.t - sig.t0_us) / bin_width_us)] += 1.0;
  return sig;
}

ZnccOffset zncc_offset(const RateSignal& sig1, const RateSignal& sig2, std::int64_t t_min_us,
                       std::int64_t t_max_us) {
  if (sig1.bin_width_us != sig2.bin_width_us)
    throw ValidationError("zncc: signals have different bin widths");
  if (sig1.bin_width_us <= 0) throw ValidationError("zncc: invalid bin width");
  if (t_min_us > t_max_us) throw ValidationError("zncc: empty search interval");

  const std::int64_t bin = sig1.bin_width_us;
  const std::int64_t na = static_cast<std::int64_t>(sig1.counts.size());
  const std::int64_t nb = static_cast<std::int64_t>(sig2.counts.size());
  constexpr std::int64_t kMinOverlap = 8;

  // A lag of L bins pairs sig1 bin i with sig2 bin i + L and implies the
  // offset (t0_2 - t0_1) + L * bin (both t0 are grid-aligned).
  const std::int64_t dt0 = sig2.t0_us - sig1.t0_us;
  const auto ceil_div = [](std::int64_t a, std::int64_t b) {
    return a / b + ((a % b != 0 && (a > 0) == (b > 0)) ? 1 : 0);
  };
  const auto floor_div = [](std::int64_t a, std::int64_t b) {
    return a / b - ((a % b != 0 && (a > 0) != (b > 0)) ? 1 : 0);
  };
  const std::int64_t l_lo = ceil_div(t_min_us - dt0, bin);
  const std::int64_t l_hi = floor_div(t_max_us - dt0, bin);

  bool any_overlap = false;
  bool best_set = false;
  ZnccOffset best{0, -2.0};
  for (std::int64_t lag = l_lo; lag <= l_hi; ++lag) {
    const std::int64_t i0 = std::max<std::int64_t>(0, -lag);
    const std::int64_t i1 = std::min(na, nb - lag);
    const std::int64_t m = i1 - i0;
    if (m < kMinOverlap) continue;
    any_overlap = true;

    double sx = 0, sy = 0;
    for (std::int64_t i = i0; i < i1; ++i) {
      sx += sig1.counts[i];
      sy += sig2.counts[i + lag];
    }
    const double mx = sx / m, my = sy / m;
    double cov = 0, vx = 0, vy = 0;
    for (std::int64_t i = i0; i < i1; ++i) {
      const double dx = sig1.counts[i] - mx;
      const double dy = sig2.counts[i + lag] - my;
      cov += dx * dy;
      vx += dx * dx;
      vy += dy * dy;
    }
    if (!(vx > 0) || !(vy > 0)) continue;  // constant window: correlation undefined

    const double score = std::clamp(cov / std::sqrt(vx * vy), -1.0, 1.0);
    const std::int64_t offset = dt0 + lag * bin;
    if (!best_set || score > best.peak_score ||
        (score == best.peak_score && std::llabs(offset) < std::llabs(best.offset_us))) {
      best = {offset, score};
      best_set = true;
    }
  }

  if (!best_set) {
    if (any_overlap)
      throw ComputationError("undefined correlation: overlapping windows have zero variance");
    throw ComputationError("insufficient overlap: no lag in range pairs at least 8 bins");
  }
  return best;
}

}  // namespace evsync
