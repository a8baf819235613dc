#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "evsync/camera.hpp"
#include "evsync/geometry.hpp"

namespace evsync {

struct Event {
  std::int64_t t = 0;  // microseconds, camera clock
  std::int32_t x = 0;  // column
  std::int32_t y = 0;  // row
  std::int32_t polarity = 1;  // +1 or -1
};

inline bool operator==(const Event& a, const Event& b) {
  return a.t == b.t && a.x == b.x && a.y == b.y && a.polarity == b.polarity;
}

// Immutable after construction: non-decreasing timestamps, in-bounds pixels.
struct EventStream {
  CameraModel camera;
  std::vector<Event> events;
};

// CSV with header `t_us,x,y,p`, polarity stored as {0,1}. The loader rejects
// malformed rows, out-of-bounds pixels and non-monotonic timestamps, naming
// the offending line.
EventStream load_events(const std::string& path, const CameraModel& camera);
void save_events(const EventStream& s, const std::string& path);

// Shifts every timestamp by offset_us; order is preserved. Throws when a
// timestamp would underflow below zero.
EventStream apply_offset(const EventStream& s, std::int64_t offset_us);

// Keeps events with at least k_min OTHER events inside the window
// |dx| <= r_xy, |dy| <= r_xy, |dt| <= r_t (Chebyshev in space).
EventStream denoise_radius(const EventStream& s, int r_xy_px, std::int64_t r_t_us, int k_min);

struct UndistortedEvent {
  std::int64_t t = 0;
  PixelPoint point{0, 0};
};

// Maps integer sensor pixels to continuous undistorted coordinates. Events
// whose inversion fails to converge are dropped and counted in n_dropped.
std::vector<UndistortedEvent> undistort_events(const EventStream& s,
                                               std::size_t* n_dropped = nullptr);

}  // namespace evsync
