#include <doctest.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <filesystem>

#include "evsync/errors.hpp"
#include "evsync/jsonio.hpp"
#include "evsync/simulator.hpp"
#include "evsync/util.hpp"
#include "oracles.hpp"

using namespace evsync;

namespace {

ScenarioConfig short_config(std::uint64_t seed = 1, double duration = 2.0) {
  ScenarioConfig cfg;
  cfg.seed = seed;
  cfg.duration_s = duration;
  return cfg;
}

}  // namespace

TEST_CASE("scenario configuration validates and round-trips through JSON") {
  ScenarioConfig cfg = short_config();
  CHECK_NOTHROW(cfg.validate());

  ScenarioConfig bad = cfg;
  bad.duration_s = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.view_angle_deg = 180;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.baseline_m = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.event_rate_gain = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  cfg.injected_offset_us = 4321;
  cfg.workspace_half_extents = {1.0, 2.0, 0.5};
  const ScenarioConfig back = scenario_config_from_json(scenario_config_to_json(cfg));
  CHECK(back.seed == cfg.seed);
  CHECK(back.duration_s == cfg.duration_s);
  CHECK(back.injected_offset_us == 4321);
  CHECK(back.workspace_half_extents == cfg.workspace_half_extents);
  CHECK_THROWS_AS(scenario_config_from_json(nlohmann::json{{"bogus", 1}}), ValidationError);
}

TEST_CASE("spline interpolates its control points at the stated knot times") {
  const Spline3D sp = generate_spline(42, 10.0, {1.5, 1.5, 0.8}, {0, 0, 5});
  REQUIRE(sp.control_points.size() == 11);  // one control point per second
  REQUIRE(sp.knot_times_us.size() == sp.control_points.size());
  CHECK(sp.knot_times_us.front() == 0.0);
  CHECK(sp.knot_times_us.back() == 10.0 * 1e6);

  for (std::size_t i = 0; i < sp.control_points.size(); ++i)
    CHECK((sp.eval(sp.knot_times_us[i]) - sp.control_points[i]).norm() < 1e-9);

  // Clamping beyond the ends.
  CHECK((sp.eval(-5e5) - sp.control_points.front()).norm() < 1e-9);
  CHECK((sp.eval(11e6) - sp.control_points.back()).norm() < 1e-9);
}

TEST_CASE("spline velocity is continuous across knots") {
  const Spline3D sp = generate_spline(7, 8.0, {1.5, 1.5, 0.8}, {0, 0, 5});
  const double h = 1.0;  // one microsecond
  for (std::size_t i = 1; i + 1 < sp.knot_times_us.size(); ++i) {
    const double tk = sp.knot_times_us[i];
    const Eigen::Vector3d v_before = (sp.eval(tk) - sp.eval(tk - h)) / h;
    const Eigen::Vector3d v_after = (sp.eval(tk + h) - sp.eval(tk)) / h;
    // Velocities are ~1e-6 m/us; a C1 break would differ at that scale.
    CHECK((v_after - v_before).norm() < 1e-9);
  }
}

TEST_CASE("a collapsed workspace yields a stationary path") {
  const Spline3D sp = generate_spline(1, 5.0, {0, 0, 0}, {0.5, -0.25, 4.0});
  for (double t : {0.0, 1.23e6, 2.5e6, 5e6})
    CHECK((sp.eval(t) - Eigen::Vector3d(0.5, -0.25, 4.0)).norm() < 1e-12);
}

TEST_CASE("camera placement honors the view angle, baseline and look-at") {
  for (double angle : {30.0, 60.0, 90.0, 120.0, 150.0}) {
    const Eigen::Vector3d center(0, 0, 0);
    const auto [pose1, pose2] = place_cameras(angle, 6.0, center);
    pose1.validate();
    pose2.validate();

    const Eigen::Vector3d c1 = -pose1.rotation.transpose() * pose1.translation;
    const Eigen::Vector3d c2 = -pose2.rotation.transpose() * pose2.translation;
    CHECK((c1 - c2).norm() == doctest::Approx(6.0).epsilon(1e-12));

    // Optical axes (camera z in world coordinates) meet at the view angle.
    const Eigen::Vector3d z1 = pose1.rotation.row(2);
    const Eigen::Vector3d z2 = pose2.rotation.row(2);
    const double got = std::acos(std::clamp(z1.dot(z2), -1.0, 1.0)) * 180.0 / M_PI;
    CHECK(got == doctest::Approx(angle).epsilon(1e-9));

    // Both cameras look straight at the workspace center from equal range.
    const Eigen::Vector3d in1 = pose1.rotation * center + pose1.translation;
    const Eigen::Vector3d in2 = pose2.rotation * center + pose2.translation;
    CHECK(in1.head<2>().norm() < 1e-12);
    CHECK(in2.head<2>().norm() < 1e-12);
    CHECK(in1.z() > 0);
    CHECK(in1.z() == doctest::Approx(in2.z()).epsilon(1e-12));
    CHECK(in1.z() == doctest::Approx(6.0 / (2.0 * std::sin(angle * M_PI / 360.0))));
  }
  CHECK_THROWS_AS(place_cameras(0.0, 6.0, {0, 0, 0}), ValidationError);
  CHECK_THROWS_AS(place_cameras(180.0, 6.0, {0, 0, 0}), ValidationError);
}

TEST_CASE("rendering is deterministic in the seed") {
  const ScenarioConfig cfg = short_config(9);
  const Scenario a = make_scenario(cfg);
  const Scenario b = make_scenario(cfg);
  REQUIRE(a.stream1.events.size() == b.stream1.events.size());
  REQUIRE(a.stream2.events.size() == b.stream2.events.size());
  CHECK(std::equal(a.stream1.events.begin(), a.stream1.events.end(), b.stream1.events.begin()));
  CHECK(std::equal(a.stream2.events.begin(), a.stream2.events.end(), b.stream2.events.begin()));

  const Scenario c = make_scenario(short_config(10));
  CHECK(a.stream1.events.size() != c.stream1.events.size());
}

TEST_CASE("event volume follows the configured noise rate") {
  // With the motion gain off, the stream is pure background noise at
  // noise_rate * width * height events per second.
  ScenarioConfig cfg = short_config(3);
  cfg.event_rate_gain = 0.0;
  cfg.noise_rate_hz_per_px = 1.0;

  const Scenario one = make_scenario(cfg);
  const double expect1 = 1.0 * 346 * 260 * cfg.duration_s;
  CHECK(std::abs(one.stream1.events.size() - expect1) < 5.0 * std::sqrt(expect1));

  cfg.noise_rate_hz_per_px = 2.0;
  const Scenario two = make_scenario(cfg);
  const double ratio =
      static_cast<double>(two.stream1.events.size()) / static_cast<double>(one.stream1.events.size());
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("a stationary object with no noise emits no events") {
  ScenarioConfig cfg = short_config(4);
  cfg.noise_rate_hz_per_px = 0.0;
  cfg.workspace_half_extents = {1e-12, 1e-12, 1e-12};  // collapses the path
  const Scenario sc = make_scenario(cfg);
  CHECK(sc.stream1.events.empty());
  CHECK(sc.stream2.events.empty());
  CHECK(sc.truth.visible_fraction1 == doctest::Approx(1.0));
}

TEST_CASE("motion events scatter around the true projected center") {
  ScenarioConfig cfg = short_config(5);
  cfg.noise_rate_hz_per_px = 0.0;  // isolate motion events
  const Scenario sc = make_scenario(cfg);
  REQUIRE(sc.stream1.events.size() > 3000);

  // Events emitted during a tick scatter around that tick's true projected
  // center with zero mean, so the average residual over the whole stream
  // collapses as sigma / sqrt(n); with ~1 px scatter and thousands of events
  // anything above 0.15 px would flag a bias.
  const std::int64_t epoch = sc.truth.centers1.front().t_us;
  const auto pts = undistort_events(sc.stream1);
  Eigen::Vector2d mean_residual = Eigen::Vector2d::Zero();
  for (const auto& p : pts) {
    const auto tick = static_cast<std::size_t>((p.t - epoch) / 100);
    REQUIRE(tick < sc.truth.centers1.size());
    mean_residual += p.point - sc.truth.centers1[tick].undistorted_px;
  }
  mean_residual /= static_cast<double>(pts.size());
  CHECK(mean_residual.norm() < 0.15);

  // Every event lands within the sensor bounds, timestamps never decrease.
  bool in_bounds = true;
  bool monotonic = true;
  for (std::size_t i = 0; i < sc.stream1.events.size(); ++i) {
    const Event& e = sc.stream1.events[i];
    in_bounds = in_bounds && e.x >= 0 && e.x < 346 && e.y >= 0 && e.y < 260;
    if (i > 0) monotonic = monotonic && e.t >= sc.stream1.events[i - 1].t;
  }
  CHECK(in_bounds);
  CHECK(monotonic);
  CHECK(sc.stream1.events.front().t >= epoch);
}

TEST_CASE("an object behind the camera never renders and fails loudly") {
  ScenarioConfig cfg = short_config(6);
  cfg.object_radius_m = 0.025;
  const Spline3D sp = generate_spline(1, cfg.duration_s, {0.4, 0.4, 0.2}, {0, 0, 5});
  RigidExtrinsics away;  // camera at z=+10 looking toward +z: path sits behind it
  away.translation = Eigen::Vector3d(0, 0, -10);
  CHECK_THROWS_WITH_AS(render_events(sp, default_camera(), away, cfg, 1, 0),
                       doctest::Contains("field of view"), ComputationError);
}

TEST_CASE("the injected offset shifts camera-2 data and ground truth agrees") {
  ScenarioConfig cfg = short_config(7);
  cfg.injected_offset_us = 123'000;
  const Scenario sc = make_scenario(cfg);

  ScenarioConfig base_cfg = cfg;
  base_cfg.injected_offset_us = 0;
  const Scenario base = make_scenario(base_cfg);

  REQUIRE(sc.stream2.events.size() == base.stream2.events.size());
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(sc.stream2.events[i].t == base.stream2.events[i].t + 123'000);
    CHECK(sc.stream2.events[i].x == base.stream2.events[i].x);
  }
  CHECK(sc.stream1.events.size() == base.stream1.events.size());
  CHECK(sc.truth.injected_offset_us == 123'000);
  CHECK(sc.truth.centers2.front().t_us == base.truth.centers2.front().t_us + 123'000);
}

TEST_CASE("ground-truth centers satisfy the true epipolar geometry") {
  const Scenario sc = make_scenario(short_config(8));
  const FundamentalMatrix f =
      compose_fundamental(sc.stream1.camera, sc.stream2.camera, sc.truth.relative);
  const auto [traj1, traj2] = oracle_trajectories(sc);
  REQUIRE(traj1.points.size() == traj2.points.size());

  double worst = 0;
  for (std::size_t i = 0; i < traj1.points.size(); ++i) {
    if (!traj1.points[i].valid || !traj2.points[i].valid) continue;
    worst = std::max(worst, point_line_distance(traj2.points[i].point,
                                                epipolar_line_in_2(f, traj1.points[i].point)));
  }
  CHECK(worst < 1e-9);

  // The relative pose is consistent with the two world-to-camera poses.
  const Eigen::Matrix3d r_expected =
      sc.truth.pose2.rotation * sc.truth.pose1.rotation.transpose();
  CHECK((sc.truth.relative.rotation - r_expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scenario files round-trip through the on-disk format") {
  testor::TempDir tmp("scenario-io");
  const Scenario sc = make_scenario(short_config(11));
  write_scenario(sc, tmp.path.string());

  for (const char* name :
       {"events1.csv", "events2.csv", "camera1.json", "camera2.json", "ground_truth.json",
        "centers1.csv", "centers2.csv", "trajectory3d.csv", "manifest.json"})
    CHECK(std::filesystem::exists(tmp.path / name));

  const CameraModel cam = load_camera(tmp.file("camera1.json"));
  CHECK(cam == sc.stream1.camera);

  const EventStream back = load_events(tmp.file("events1.csv"), cam);
  REQUIRE(back.events.size() == sc.stream1.events.size());
  CHECK(std::equal(back.events.begin(), back.events.end(), sc.stream1.events.begin()));

  const GroundTruthSummary gt = load_ground_truth(tmp.file("ground_truth.json"));
  CHECK(gt.injected_offset_us == sc.truth.injected_offset_us);
  CHECK((gt.relative.rotation - sc.truth.relative.rotation).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((gt.relative.translation - sc.truth.relative.translation).norm() < 1e-15);

  const Path3D path = load_path3d(tmp.file("trajectory3d.csv"));
  REQUIRE(path.times_us.size() == sc.truth.times_us.size());
  CHECK(path.times_us.front() == sc.truth.times_us.front());
  CHECK((path.positions.back() - sc.truth.positions_world.back()).norm() < 1e-9);

  const nlohmann::json manifest = load_json_file(tmp.file("manifest.json"));
  CHECK(manifest.at("n_events1").get<std::size_t>() == sc.stream1.events.size());
  CHECK(manifest.at("n_events2").get<std::size_t>() == sc.stream2.events.size());
  // The echoed configuration carries the resolved auto-sized values.
  CHECK(manifest.at("config").at("object_radius_m").get<double>() ==
        doctest::Approx(sc.config.object_radius_m));
}

TEST_CASE("oracle trajectories mirror the visibility flags") {
  const Scenario sc = make_scenario(short_config(12));
  const auto [traj1, traj2] = oracle_trajectories(sc);
  REQUIRE(traj1.points.size() == sc.truth.centers1.size());
  for (std::size_t i = 0; i < traj1.points.size(); ++i) {
    CHECK(traj1.points[i].valid == sc.truth.centers1[i].visible);
    CHECK(traj1.points[i].t == sc.truth.centers1[i].t_us);
  }
  // Timestamps are strictly increasing, suitable for sampling.
  for (std::size_t i = 1; i < traj2.points.size(); ++i)
    CHECK(traj2.points[i].t > traj2.points[i - 1].t);
}
