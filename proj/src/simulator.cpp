#include "evsync/simulator.hpp"

#include <fmt/format.h>

#include <Eigen/Geometry>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string_view>

#include "evsync/errors.hpp"
#include "evsync/jsonio.hpp"
#include "evsync/util.hpp"

namespace evsync {
namespace {

constexpr std::int64_t kTickUs = 100;        // 10 kHz sensor surrogate
constexpr std::int64_t kEpochUs = 2'000'000; // start of every rendered recording
constexpr double kMinDepth = 0.05;           // metres in front of the lens

double deg2rad(double d) { return d * M_PI / 180.0; }

}  // namespace

CameraModel default_camera() {
  CameraModel cam;
  cam.fx = 250.0;
  cam.fy = 250.0;
  cam.cx = 173.0;
  cam.cy = 130.0;
  cam.k1 = -0.1;
  cam.k2 = 0.02;
  cam.p1 = 1e-4;
  cam.p2 = -1e-4;
  cam.k3 = 0.0;
  cam.width = 346;
  cam.height = 260;
  return cam;
}

void ScenarioConfig::validate() const {
  if (!(duration_s > 0) || !std::isfinite(duration_s))
    throw ValidationError("scenario: duration_s must be positive");
  if (std::llround(duration_s * 1e6) < kTickUs)
    throw ValidationError("scenario: duration_s shorter than one sensor tick");
  if (!(view_angle_deg > 0) || !(view_angle_deg < 180))
    throw ValidationError("scenario: view_angle_deg must lie in (0, 180)");
  if (!(baseline_m > 0) || !std::isfinite(baseline_m))
    throw ValidationError("scenario: baseline_m must be positive");
  if (injected_offset_us < -kEpochUs)
    throw ValidationError(
        fmt::format("scenario: injected_offset_us must be >= {} so camera-2 timestamps "
                    "stay non-negative",
                    -kEpochUs));
  if (!(event_rate_gain >= 0) || !std::isfinite(event_rate_gain))
    throw ValidationError("scenario: event_rate_gain must be non-negative");
  if (!(noise_rate_hz_per_px >= 0) || !std::isfinite(noise_rate_hz_per_px))
    throw ValidationError("scenario: noise_rate_hz_per_px must be non-negative");
  if (!(centroid_jitter_px >= 0) || !std::isfinite(centroid_jitter_px))
    throw ValidationError("scenario: centroid_jitter_px must be non-negative");
  if (!workspace_half_extents.allFinite() || !std::isfinite(object_radius_m))
    throw ValidationError("scenario: non-finite geometry parameter");
  if (camera.width != 0) camera.validate();
}

nlohmann::json scenario_config_to_json(const ScenarioConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["duration_s"] = cfg.duration_s;
  j["view_angle_deg"] = cfg.view_angle_deg;
  j["baseline_m"] = cfg.baseline_m;
  j["injected_offset_us"] = cfg.injected_offset_us;
  j["object_radius_m"] = cfg.object_radius_m;
  j["event_rate_gain"] = cfg.event_rate_gain;
  j["noise_rate_hz_per_px"] = cfg.noise_rate_hz_per_px;
  j["centroid_jitter_px"] = cfg.centroid_jitter_px;
  j["workspace_half_extents"] = vector_to_json(cfg.workspace_half_extents);
  j["camera"] = camera_to_json(cfg.camera.width == 0 ? default_camera() : cfg.camera);
  return j;
}

ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("scenario config must be a JSON object");
  ScenarioConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "seed") {
        cfg.seed = value.get<std::uint64_t>();
      } else if (key == "duration_s") {
        cfg.duration_s = value.get<double>();
      } else if (key == "view_angle_deg") {
        cfg.view_angle_deg = value.get<double>();
      } else if (key == "baseline_m") {
        cfg.baseline_m = value.get<double>();
      } else if (key == "injected_offset_us") {
        cfg.injected_offset_us = value.get<std::int64_t>();
      } else if (key == "object_radius_m") {
        cfg.object_radius_m = value.get<double>();
      } else if (key == "event_rate_gain") {
        cfg.event_rate_gain = value.get<double>();
      } else if (key == "noise_rate_hz_per_px") {
        cfg.noise_rate_hz_per_px = value.get<double>();
      } else if (key == "centroid_jitter_px") {
        cfg.centroid_jitter_px = value.get<double>();
      } else if (key == "workspace_half_extents") {
        cfg.workspace_half_extents = vector_from_json(value);
      } else if (key == "camera") {
        cfg.camera = camera_from_json(value);
      } else {
        throw ValidationError("scenario config: unknown key \"" + key + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("scenario config key \"" + key + "\": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

Eigen::Vector3d Spline3D::eval(double t_us) const {
  if (padded_points.size() < 4 || padded_knots.size() != padded_points.size() ||
      knot_times_us.size() + 2 != padded_points.size() || !(param_per_us > 0))
    throw ValidationError("spline not initialized");
  const std::size_t n = knot_times_us.size();  // control count
  t_us = std::clamp(t_us, knot_times_us.front(), knot_times_us.back());
  double s = padded_knots[1] + (t_us - knot_times_us.front()) * param_per_us;
  s = std::clamp(s, padded_knots[1], padded_knots[n]);

  // Segment j covers [padded_knots[j], padded_knots[j+1]] for j in [1, n-1].
  auto it = std::upper_bound(padded_knots.begin() + 1, padded_knots.begin() + n + 1, s);
  std::size_t j = static_cast<std::size_t>(it - padded_knots.begin()) - 1;
  j = std::clamp<std::size_t>(j, 1, n - 1);

  const double t0 = padded_knots[j - 1], t1 = padded_knots[j], t2 = padded_knots[j + 1],
               t3 = padded_knots[j + 2];
  const Eigen::Vector3d &p0 = padded_points[j - 1], &p1 = padded_points[j],
                        &p2 = padded_points[j + 1], &p3 = padded_points[j + 2];

  const Eigen::Vector3d a1 = ((t1 - s) * p0 + (s - t0) * p1) / (t1 - t0);
  const Eigen::Vector3d a2 = ((t2 - s) * p1 + (s - t1) * p2) / (t2 - t1);
  const Eigen::Vector3d a3 = ((t3 - s) * p2 + (s - t2) * p3) / (t3 - t2);
  const Eigen::Vector3d b1 = ((t2 - s) * a1 + (s - t0) * a2) / (t2 - t0);
  const Eigen::Vector3d b2 = ((t3 - s) * a2 + (s - t1) * a3) / (t3 - t1);
  return ((t2 - s) * b1 + (s - t1) * b2) / (t2 - t1);
}

Spline3D generate_spline(std::uint64_t seed, double duration_s,
                         const Eigen::Vector3d& half_extents,
                         const Eigen::Vector3d& center) {
  if (!(duration_s > 0)) throw ValidationError("spline: duration must be positive");
  if (!half_extents.allFinite() || (half_extents.array() < 0).any())
    throw ValidationError("spline: half extents must be non-negative");

  const auto n_ctrl = std::max<std::int64_t>(4, std::llround(duration_s) + 1);
  Rng rng(seed);
  Spline3D sp;
  sp.control_points.reserve(static_cast<std::size_t>(n_ctrl));
  for (std::int64_t i = 0; i < n_ctrl; ++i) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a) p(a) = center(a) + half_extents(a) * rng.uniform(-1.0, 1.0);
    sp.control_points.push_back(p);
  }

  const std::size_t n = sp.control_points.size();
  sp.padded_points.resize(n + 2);
  std::copy(sp.control_points.begin(), sp.control_points.end(), sp.padded_points.begin() + 1);
  sp.padded_points.front() = 2.0 * sp.control_points[0] - sp.control_points[1];
  sp.padded_points.back() = 2.0 * sp.control_points[n - 1] - sp.control_points[n - 2];

  sp.padded_knots.resize(n + 2);
  sp.padded_knots[0] = 0.0;
  for (std::size_t i = 0; i + 1 < sp.padded_points.size(); ++i) {
    const double chord = (sp.padded_points[i + 1] - sp.padded_points[i]).norm();
    sp.padded_knots[i + 1] = sp.padded_knots[i] + std::max(std::sqrt(chord), 1e-9);
  }

  const double duration_us = static_cast<double>(std::llround(duration_s * 1e6));
  const double span = sp.padded_knots[n] - sp.padded_knots[1];
  sp.param_per_us = span / duration_us;
  sp.knot_times_us.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    sp.knot_times_us[i] = (sp.padded_knots[i + 1] - sp.padded_knots[1]) / sp.param_per_us;
  sp.knot_times_us.front() = 0.0;
  sp.knot_times_us.back() = duration_us;
  return sp;
}

std::pair<RigidExtrinsics, RigidExtrinsics> place_cameras(double view_angle_deg,
                                                          double baseline_m,
                                                          const Eigen::Vector3d& center) {
  if (!(view_angle_deg > 0) || !(view_angle_deg < 180))
    throw ValidationError("camera placement: view angle must lie in (0, 180) degrees");
  if (!(baseline_m > 0)) throw ValidationError("camera placement: baseline must be positive");

  const double half = deg2rad(view_angle_deg) / 2.0;
  const double d = baseline_m / (2.0 * std::sin(half));
  const Eigen::Vector3d up(0, 1, 0);

  auto look_at = [&](const Eigen::Vector3d& eye) {
    Eigen::Vector3d z = (center - eye).normalized();
    Eigen::Vector3d x = up.cross(z).normalized();
    Eigen::Vector3d y = z.cross(x);
    RigidExtrinsics pose;
    pose.rotation.row(0) = x.transpose();
    pose.rotation.row(1) = y.transpose();
    pose.rotation.row(2) = z.transpose();
    pose.translation = -pose.rotation * eye;
    return pose;
  };

  const Eigen::Vector3d c1 = center + d * Eigen::Vector3d(-std::sin(half), 0, -std::cos(half));
  const Eigen::Vector3d c2 = center + d * Eigen::Vector3d(std::sin(half), 0, -std::cos(half));
  return {look_at(c1), look_at(c2)};
}

RenderResult render_events(const Spline3D& spline, const CameraModel& camera,
                           const RigidExtrinsics& world_to_camera, const ScenarioConfig& cfg,
                           std::uint64_t seed, std::int64_t epoch_us) {
  camera.validate();
  if (epoch_us < 0) throw ValidationError("render: epoch must be non-negative");
  if (!(cfg.object_radius_m > 0)) throw ValidationError("render: object radius must be positive");

  const double duration_us = spline.knot_times_us.empty()
                                 ? 0.0
                                 : spline.knot_times_us.back() - spline.knot_times_us.front();
  const std::int64_t n_ticks = std::llround(duration_us) / kTickUs;
  if (n_ticks < 1) throw ValidationError("render: path shorter than one sensor tick");

  // Project the path on the tick grid once; events are generated per tick.
  struct TickState {
    PixelPoint undist = PixelPoint::Zero();
    double depth = 0.0;
    bool visible = false;
  };
  std::vector<TickState> ticks(static_cast<std::size_t>(n_ticks) + 1);
  for (std::int64_t k = 0; k <= n_ticks; ++k) {
    const Eigen::Vector3d world = spline.eval(static_cast<double>(k * kTickUs));
    const Eigen::Vector3d cam_pt =
        world_to_camera.rotation * world + world_to_camera.translation;
    TickState& st = ticks[static_cast<std::size_t>(k)];
    st.depth = cam_pt.z();
    if (cam_pt.z() <= kMinDepth) continue;
    const Eigen::Vector2d norm(cam_pt.x() / cam_pt.z(), cam_pt.y() / cam_pt.z());
    st.undist = camera.normalized_to_pixel(norm);
    const Eigen::Vector2d distorted = camera.normalized_to_pixel(camera.distort_normalized(norm));
    st.visible = distorted.x() >= 0 && distorted.x() <= camera.width - 1 && distorted.y() >= 0 &&
                 distorted.y() <= camera.height - 1;
  }

  Rng rng(seed);
  const double noise_lambda =
      cfg.noise_rate_hz_per_px * camera.width * camera.height * (kTickUs * 1e-6);

  RenderResult out;
  out.stream.camera = camera;
  out.centers.reserve(ticks.size());
  std::vector<Event> tick_events;
  std::int64_t visible_ticks = 0;

  for (std::int64_t k = 0; k <= n_ticks; ++k) {
    const TickState& st = ticks[static_cast<std::size_t>(k)];
    out.centers.push_back({epoch_us + k * kTickUs, st.undist, st.visible});
    if (k == n_ticks) break;  // the last grid point only closes the speed window
    if (st.visible) ++visible_ticks;

    tick_events.clear();
    const TickState& next = ticks[static_cast<std::size_t>(k) + 1];
    if (st.visible && next.visible && cfg.event_rate_gain > 0) {
      const Eigen::Vector2d motion = next.undist - st.undist;
      const double lambda = cfg.event_rate_gain * motion.norm();
      const double radius_px = camera.fx * cfg.object_radius_m / st.depth;
      const double sigma = std::sqrt(0.25 * radius_px * radius_px +
                                     cfg.centroid_jitter_px * cfg.centroid_jitter_px);
      const std::int64_t n_motion = rng.poisson(lambda);
      for (std::int64_t i = 0; i < n_motion; ++i) {
        const Eigen::Vector2d scatter(rng.gaussian() * sigma, rng.gaussian() * sigma);
        const Eigen::Vector2d undist_px = st.undist + scatter;
        const Eigen::Vector2d dist_px = camera.distort_pixel(undist_px);
        Event ev;
        ev.t = epoch_us + k * kTickUs + static_cast<std::int64_t>(rng.below(kTickUs));
        ev.x = static_cast<std::int32_t>(
            std::clamp<long>(std::lround(dist_px.x()), 0, camera.width - 1));
        ev.y = static_cast<std::int32_t>(
            std::clamp<long>(std::lround(dist_px.y()), 0, camera.height - 1));
        ev.polarity = scatter.dot(motion) > 0 ? 1 : -1;
        tick_events.push_back(ev);
      }
    }
    const std::int64_t n_noise = rng.poisson(noise_lambda);
    for (std::int64_t i = 0; i < n_noise; ++i) {
      Event ev;
      ev.t = epoch_us + k * kTickUs + static_cast<std::int64_t>(rng.below(kTickUs));
      ev.x = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(camera.width)));
      ev.y = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(camera.height)));
      ev.polarity = rng.below(2) == 0 ? -1 : 1;
      tick_events.push_back(ev);
    }
    std::stable_sort(tick_events.begin(), tick_events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    out.stream.events.insert(out.stream.events.end(), tick_events.begin(), tick_events.end());
  }

  out.visible_fraction = static_cast<double>(visible_ticks) / static_cast<double>(n_ticks);
  if (visible_ticks == 0)
    throw ComputationError("render: object never enters the camera's field of view");
  return out;
}

Scenario make_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  ScenarioConfig rc = cfg;
  if (rc.camera.width == 0) rc.camera = default_camera();

  const double half = deg2rad(rc.view_angle_deg) / 2.0;
  const double distance = rc.baseline_m / (2.0 * std::sin(half));
  if (rc.object_radius_m <= 0) rc.object_radius_m = 0.006 * distance;
  if ((rc.workspace_half_extents.array() <= 0).any())
    rc.workspace_half_extents = distance * Eigen::Vector3d(0.38, 0.38, 0.22);

  const Eigen::Vector3d center = Eigen::Vector3d::Zero();
  auto [pose1, pose2] = place_cameras(rc.view_angle_deg, rc.baseline_m, center);
  const Spline3D spline =
      generate_spline(mix_seed(rc.seed, 100), rc.duration_s, rc.workspace_half_extents, center);

  RenderResult r1 = render_events(spline, rc.camera, pose1, rc, mix_seed(rc.seed, 1), kEpochUs);
  RenderResult r2 = render_events(spline, rc.camera, pose2, rc, mix_seed(rc.seed, 2), kEpochUs);

  Scenario sc;
  sc.config = rc;
  sc.stream1 = std::move(r1.stream);
  sc.stream2 = apply_offset(r2.stream, rc.injected_offset_us);

  GroundTruth& gt = sc.truth;
  gt.injected_offset_us = rc.injected_offset_us;
  gt.pose1 = pose1;
  gt.pose2 = pose2;
  gt.relative.rotation = pose2.rotation * pose1.rotation.transpose();
  gt.relative.translation = pose2.translation - gt.relative.rotation * pose1.translation;
  gt.centers1 = std::move(r1.centers);
  gt.centers2 = std::move(r2.centers);
  for (auto& c : gt.centers2) c.t_us += rc.injected_offset_us;
  gt.visible_fraction1 = r1.visible_fraction;
  gt.visible_fraction2 = r2.visible_fraction;
  gt.times_us.reserve(gt.centers1.size());
  gt.positions_world.reserve(gt.centers1.size());
  for (const auto& c : gt.centers1) {
    gt.times_us.push_back(c.t_us);
    gt.positions_world.push_back(spline.eval(static_cast<double>(c.t_us - kEpochUs)));
  }

  // Internal consistency: true centers must satisfy the true epipolar relation.
  const FundamentalMatrix f = compose_fundamental(rc.camera, rc.camera, gt.relative);
  for (std::size_t i = 0; i < gt.centers1.size(); ++i) {
    if (!gt.centers1[i].visible || !gt.centers2[i].visible) continue;
    const Eigen::Vector3d p1(gt.centers1[i].undistorted_px.x(),
                             gt.centers1[i].undistorted_px.y(), 1.0);
    const Eigen::Vector3d p2(gt.centers2[i].undistorted_px.x(),
                             gt.centers2[i].undistorted_px.y(), 1.0);
    if (std::abs(p2.dot(f.m * p1)) > 1e-9)
      throw ComputationError("scenario: internal epipolar consistency check failed");
  }
  return sc;
}

namespace {

void write_centers_csv(const std::vector<TimedCenter>& centers, const std::string& path) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "t_us,u,v,visible\n");
  for (const auto& c : centers)
    fmt::format_to(std::back_inserter(buf), "{},{},{},{}\n", c.t_us, c.undistorted_px.x(),
                   c.undistorted_px.y(), c.visible ? 1 : 0);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed to write " + path);
}

}  // namespace

void write_scenario(const Scenario& scenario, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  const auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

  save_events(scenario.stream1, path("events1.csv"));
  save_events(scenario.stream2, path("events2.csv"));
  save_camera(scenario.stream1.camera, path("camera1.json"));
  save_camera(scenario.stream2.camera, path("camera2.json"));

  nlohmann::json gt;
  gt["offset_us"] = scenario.truth.injected_offset_us;
  gt["R"] = matrix_to_json(scenario.truth.relative.rotation);
  gt["t"] = vector_to_json(scenario.truth.relative.translation);
  gt["visible_fraction1"] = scenario.truth.visible_fraction1;
  gt["visible_fraction2"] = scenario.truth.visible_fraction2;
  save_json_file(gt, path("ground_truth.json"));

  write_centers_csv(scenario.truth.centers1, path("centers1.csv"));
  write_centers_csv(scenario.truth.centers2, path("centers2.csv"));

  {
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "t_us,x,y,z\n");
    for (std::size_t i = 0; i < scenario.truth.times_us.size(); ++i) {
      const auto& p = scenario.truth.positions_world[i];
      fmt::format_to(std::back_inserter(buf), "{},{},{},{}\n", scenario.truth.times_us[i], p.x(),
                     p.y(), p.z());
    }
    std::ofstream out(path("trajectory3d.csv"), std::ios::binary);
    if (!out) throw IoError("cannot write trajectory3d.csv");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed to write trajectory3d.csv");
  }

  nlohmann::json manifest;
  manifest["config"] = scenario_config_to_json(scenario.config);
  manifest["n_events1"] = scenario.stream1.events.size();
  manifest["n_events2"] = scenario.stream2.events.size();
  manifest["visible_fraction1"] = scenario.truth.visible_fraction1;
  manifest["visible_fraction2"] = scenario.truth.visible_fraction2;
  manifest["files"] = nlohmann::json{{"events1", "events1.csv"},
                                     {"events2", "events2.csv"},
                                     {"camera1", "camera1.json"},
                                     {"camera2", "camera2.json"},
                                     {"ground_truth", "ground_truth.json"},
                                     {"centers1", "centers1.csv"},
                                     {"centers2", "centers2.csv"},
                                     {"trajectory3d", "trajectory3d.csv"}};
  save_json_file(manifest, path("manifest.json"));
}

std::pair<Trajectory2D, Trajectory2D> oracle_trajectories(const Scenario& s) {
  auto build = [](const CameraModel& cam, const std::vector<TimedCenter>& centers) {
    Trajectory2D traj;
    traj.camera = cam;
    traj.window_us = kTickUs;
    traj.points.reserve(centers.size());
    for (const auto& c : centers)
      traj.points.push_back({c.t_us, c.undistorted_px, c.visible ? 1 : 0, c.visible});
    return traj;
  };
  return {build(s.stream1.camera, s.truth.centers1), build(s.stream2.camera, s.truth.centers2)};
}

GroundTruthSummary load_ground_truth(const std::string& path) {
  const nlohmann::json j = load_json_file(path);
  GroundTruthSummary gt;
  try {
    gt.injected_offset_us = j.at("offset_us").get<std::int64_t>();
    gt.relative.rotation = matrix_from_json(j.at("R"));
    gt.relative.translation = vector_from_json(j.at("t"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("ground-truth file " + path + ": " + e.what());
  }
  gt.relative.validate(false);
  return gt;
}

Path3D load_path3d(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open path file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "t_us,x,y,z")
    throw ValidationError("path file " + path + ": expected header t_us,x,y,z");
  Path3D out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::int64_t t = 0;
    Eigen::Vector3d p;
    const char* ptr = line.data();
    const char* end = line.data() + line.size();
    auto fail = [&]() {
      throw ValidationError(fmt::format("path file {}: parse error at line {}", path, line_no));
    };
    auto res = std::from_chars(ptr, end, t);
    if (res.ec != std::errc{} || res.ptr == end || *res.ptr != ',') fail();
    ptr = res.ptr + 1;
    for (int a = 0; a < 3; ++a) {
      auto r = std::from_chars(ptr, end, p(a));
      if (r.ec != std::errc{}) fail();
      ptr = r.ptr;
      if (a < 2) {
        if (ptr == end || *ptr != ',') fail();
        ++ptr;
      }
    }
    if (ptr != end) fail();
    if (!out.times_us.empty() && t <= out.times_us.back())
      throw ValidationError(
          fmt::format("path file {}: non-increasing timestamp at line {}", path, line_no));
    out.times_us.push_back(t);
    out.positions.push_back(p);
  }
  if (out.times_us.empty()) throw ValidationError("path file " + path + ": no samples");
  return out;
}

}  // namespace evsync
