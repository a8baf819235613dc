#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evsync/events.hpp"

namespace evsync {

struct TrajectoryPoint {
  std::int64_t t = 0;        // window center, microseconds
  PixelPoint point{0, 0};    // undistorted centroid; (0,0) placeholder when empty
  int n_events = 0;          // events that contributed to the centroid
  bool valid = false;        // n_events >= n_min and border margin respected
};

struct Trajectory2D {
  CameraModel camera;
  std::int64_t window_us = 0;
  std::vector<TrajectoryPoint> points;  // strictly increasing timestamps
};

// Tiles the stream into consecutive windows of `window_us` starting at the
// first event; each window's centroid is the arithmetic mean of the
// undistorted coordinates of its events. Empty windows produce invalid
// placeholder points so the time grid stays regular.
Trajectory2D extract_centroids(const EventStream& s, std::int64_t window_us, int n_min,
                               double border_margin_px);

// Linear interpolation between the nearest valid points bracketing t.
// Empty when t lies outside the valid span or the brackets are more than
// max_gap_us apart.
std::optional<PixelPoint> sample(const Trajectory2D& traj, std::int64_t t_us,
                                 std::int64_t max_gap_us);

// Intersection of traj1's span with traj2's span shifted by -t_d, expressed
// in camera-1 time (camera 2 is sampled at t + t_d).
std::optional<std::pair<std::int64_t, std::int64_t>> overlap_span(const Trajectory2D& traj1,
                                                                  const Trajectory2D& traj2,
                                                                  std::int64_t t_d_us);

// CSV `t_us,u,v,n_events,valid`.
void save_trajectory(const Trajectory2D& traj, const std::string& path);
Trajectory2D load_trajectory(const std::string& path, const CameraModel& camera);

}  // namespace evsync
