#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "evsync/camera.hpp"
#include "evsync/events.hpp"
#include "evsync/geometry.hpp"
#include "evsync/trajectory.hpp"

namespace evsync {

// Sensor model used by the synthetic scenarios unless the caller overrides it:
// a 346x260 array with mild radial/tangential distortion.
CameraModel default_camera();

// Parameters of a two-camera synthetic recording. A zero/negative
// object_radius_m or workspace_half_extents entry means "derive from the
// camera placement" (the object spans a few pixels and the motion stays well
// inside both fields of view).
struct ScenarioConfig {
  std::uint64_t seed = 1;
  double duration_s = 10.0;
  double view_angle_deg = 90.0;
  double baseline_m = 6.0;
  std::int64_t injected_offset_us = 0;  // camera-2 clock minus camera-1 clock
  double object_radius_m = 0.0;
  double event_rate_gain = 40.0;        // expected events per pixel of image motion
  double noise_rate_hz_per_px = 1.0;    // uniform background noise
  double centroid_jitter_px = 0.0;      // extra per-event scatter, added in quadrature
  Eigen::Vector3d workspace_half_extents = Eigen::Vector3d::Zero();
  CameraModel camera{};                 // width == 0 selects default_camera()

  void validate() const;
};

nlohmann::json scenario_config_to_json(const ScenarioConfig& cfg);
// Starts from defaults; unknown keys are rejected.
ScenarioConfig scenario_config_from_json(const nlohmann::json& j);

// Smooth 3-D path through randomly drawn control points. Interpolation runs in
// a chord-length-derived parameter; a single linear map converts wall-clock
// microseconds to that parameter so the path stays C1 everywhere. Reflected
// phantom points close the ends, and eval(knot_times_us[i]) reproduces
// control_points[i] exactly (up to round-off).
struct Spline3D {
  std::vector<Eigen::Vector3d> control_points;
  std::vector<double> knot_times_us;  // strictly increasing, spans [0, duration_us]

  // Implementation detail, filled by generate_spline: controls plus one
  // reflected phantom at each end, with their interpolation-parameter knots.
  std::vector<Eigen::Vector3d> padded_points;
  std::vector<double> padded_knots;
  double param_per_us = 0.0;  // wall-time to interpolation-parameter rate

  // t_us is clamped to [knot_times_us.front(), knot_times_us.back()].
  Eigen::Vector3d eval(double t_us) const;
};

// Draws max(4, round(duration_s) + 1) control points uniformly inside the box
// center +/- half_extents. Collapsed (zero) extents are allowed and yield a
// stationary path.
Spline3D generate_spline(std::uint64_t seed, double duration_s,
                         const Eigen::Vector3d& half_extents,
                         const Eigen::Vector3d& center);

// World-to-camera poses for two converging cameras on a circle around
// `center`, separated by `baseline_m`, with view directions meeting at
// view_angle_deg. Returns {pose1, pose2}.
std::pair<RigidExtrinsics, RigidExtrinsics> place_cameras(
    double view_angle_deg, double baseline_m, const Eigen::Vector3d& center);

// Projected object center at a tick, in undistorted pixel coordinates of one
// camera's own clock.
struct TimedCenter {
  std::int64_t t_us = 0;
  PixelPoint undistorted_px = PixelPoint::Zero();
  bool visible = false;
};

struct RenderResult {
  EventStream stream;
  std::vector<TimedCenter> centers;  // one per tick, covering the whole recording
  double visible_fraction = 0.0;
};

// Renders one camera's event stream with a statistical sensor surrogate: at a
// fixed 10 kHz tick rate, the number of motion events is Poisson in the
// image-plane speed, each event scatters around the projected center (object
// footprint plus optional jitter), is pushed through the lens distortion, and
// is rounded to the pixel grid. Background noise is uniform over the array.
// Timestamps start at `epoch_us`. Throws ComputationError if the object never
// becomes visible.
RenderResult render_events(const Spline3D& spline, const CameraModel& camera,
                           const RigidExtrinsics& world_to_camera,
                           const ScenarioConfig& cfg, std::uint64_t seed,
                           std::int64_t epoch_us);

struct GroundTruth {
  std::int64_t injected_offset_us = 0;
  RigidExtrinsics relative;  // camera-1 to camera-2, metric translation
  RigidExtrinsics pose1;     // world to camera 1
  RigidExtrinsics pose2;     // world to camera 2
  std::vector<std::int64_t> times_us;          // camera-1 clock, tick grid
  std::vector<Eigen::Vector3d> positions_world;
  std::vector<TimedCenter> centers1;           // camera-1 clock
  std::vector<TimedCenter> centers2;           // camera-2 clock
  double visible_fraction1 = 0.0;
  double visible_fraction2 = 0.0;
};

struct Scenario {
  EventStream stream1;
  EventStream stream2;
  GroundTruth truth;
  ScenarioConfig config;  // with all auto-derived fields resolved
};

// Builds the full two-camera recording in memory. The two streams share one
// object path; camera-2 timestamps carry the injected offset.
Scenario make_scenario(const ScenarioConfig& cfg);

// Writes events1/2.csv, camera1/2.json, ground_truth.json, centers1/2.csv,
// trajectory3d.csv and manifest.json under out_dir (created if needed).
void write_scenario(const Scenario& scenario, const std::string& out_dir);

// Ideal noise-free trajectories built from the true projected centers, on each
// camera's own clock. Useful as a quantization-free reference.
std::pair<Trajectory2D, Trajectory2D> oracle_trajectories(const Scenario& s);

// Loaders for the evaluation path.
struct GroundTruthSummary {
  std::int64_t injected_offset_us = 0;
  RigidExtrinsics relative;
};
GroundTruthSummary load_ground_truth(const std::string& path);

// 3-D path samples as written by write_scenario (t_us,x,y,z).
struct Path3D {
  std::vector<std::int64_t> times_us;
  std::vector<Eigen::Vector3d> positions;
};
Path3D load_path3d(const std::string& path);

}  // namespace evsync
