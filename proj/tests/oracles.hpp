// Shared test fixtures: independent brute-force oracles and synthetic-scene
// builders kept deliberately separate from the library implementation.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "evsync/camera.hpp"
#include "evsync/events.hpp"
#include "evsync/geometry.hpp"
#include "evsync/trajectory.hpp"
#include "evsync/util.hpp"

namespace testor {

// O(n^2) reference for the radius denoiser: keep an event iff at least k_min
// OTHER events fall inside the Chebyshev space window and the time window.
inline evsync::EventStream denoise_brute_force(const evsync::EventStream& s, int r_xy_px,
                                               std::int64_t r_t_us, int k_min) {
  evsync::EventStream out;
  out.camera = s.camera;
  const auto& ev = s.events;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    int count = 0;
    for (std::size_t j = 0; j < ev.size(); ++j) {
      if (j == i) continue;
      if (std::abs(ev[i].x - ev[j].x) <= r_xy_px && std::abs(ev[i].y - ev[j].y) <= r_xy_px &&
          std::llabs(ev[i].t - ev[j].t) <= r_t_us)
        ++count;
    }
    if (count >= k_min) out.events.push_back(ev[i]);
  }
  return out;
}

inline evsync::CameraModel plain_camera(double fx = 300, double fy = 300, int w = 640,
                                        int h = 480) {
  evsync::CameraModel c;
  c.fx = fx;
  c.fy = fy;
  c.cx = w / 2.0;
  c.cy = h / 2.0;
  c.width = w;
  c.height = h;
  return c;
}

// Two-view scene with exact undistorted-pixel correspondences, built from
// independent projection math (Eigen only, no library calls).
struct TwoViewScene {
  evsync::CameraModel cam1;
  evsync::CameraModel cam2;
  evsync::RigidExtrinsics ext;  // camera-2 from camera-1, unit translation
  std::vector<Eigen::Vector3d> points;  // in camera-1 frame
  std::vector<evsync::Correspondence> pairs;
};

inline Eigen::Vector2d project(const evsync::CameraModel& cam, const Eigen::Vector3d& xc) {
  return {cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy};
}

inline TwoViewScene random_scene(std::uint64_t seed, int n_points = 60) {
  evsync::Rng rng(evsync::mix_seed(seed, 0xabcdef));
  TwoViewScene sc;
  sc.cam1 = plain_camera(280, 300);
  sc.cam2 = plain_camera(320, 310);

  const Eigen::Vector3d axis =
      Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized();
  const double angle = rng.uniform(0.1, 0.6);
  sc.ext.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  Eigen::Vector3d t(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.3, 0.3));
  if (t.norm() < 0.3) t = Eigen::Vector3d(1, 0.2, 0);
  sc.ext.translation = t.normalized();

  while (static_cast<int>(sc.points.size()) < n_points) {
    const Eigen::Vector3d p(rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(3, 9));
    const Eigen::Vector3d q = sc.ext.rotation * p + sc.ext.translation;
    if (q.z() < 0.5) continue;
    const Eigen::Vector2d u1 = project(sc.cam1, p);
    const Eigen::Vector2d u2 = project(sc.cam2, q);
    if (u1.x() < 0 || u1.x() > sc.cam1.width || u1.y() < 0 || u1.y() > sc.cam1.height) continue;
    if (u2.x() < 0 || u2.x() > sc.cam2.width || u2.y() < 0 || u2.y() > sc.cam2.height) continue;
    sc.points.push_back(p);
    sc.pairs.push_back({u1, u2});
  }
  return sc;
}

// Smooth closed 3-D path for synthetic trajectory tests; bounded, non-planar,
// non-degenerate image motion in both views.
inline Eigen::Vector3d lissajous(double t_s) {
  return {1.2 * std::sin(0.9 * t_s) + 0.5 * std::sin(2.3 * t_s + 0.4),
          0.9 * std::cos(1.3 * t_s) + 0.4 * std::sin(1.7 * t_s),
          6.0 + 1.1 * std::sin(0.7 * t_s + 1.0)};
}

// Exact centroid trajectories of the moving point seen by the two cameras of
// a TwoViewScene, with camera 2's clock leading camera 1's by t_d_true.
struct SyncScene {
  TwoViewScene view;
  evsync::Trajectory2D traj1;
  evsync::Trajectory2D traj2;
  std::int64_t t_d_true_us = 0;
};

inline SyncScene sync_scene(std::uint64_t seed, std::int64_t t_d_true_us,
                            double duration_s = 10.0, std::int64_t window_us = 5000) {
  SyncScene s;
  s.view = random_scene(seed, 20);
  s.t_d_true_us = t_d_true_us;

  s.traj1.camera = s.view.cam1;
  s.traj1.window_us = window_us;
  s.traj2.camera = s.view.cam2;
  s.traj2.window_us = window_us;

  const auto n = static_cast<std::int64_t>(duration_s * 1e6 / static_cast<double>(window_us));
  for (std::int64_t k = 0; k < n; ++k) {
    const std::int64_t t1 = k * window_us + window_us / 2;
    // Camera 2 stamps the same physical instant t_d later on its own clock.
    const std::int64_t t2 = t1 + t_d_true_us;
    const Eigen::Vector3d p = lissajous(static_cast<double>(t1) * 1e-6);
    const Eigen::Vector3d q = s.view.ext.rotation * p + s.view.ext.translation;
    evsync::TrajectoryPoint a;
    a.t = t1;
    a.point = project(s.view.cam1, p);
    a.n_events = 100;
    a.valid = true;
    evsync::TrajectoryPoint b = a;
    b.t = t2;
    b.point = project(s.view.cam2, q);
    s.traj1.points.push_back(a);
    s.traj2.points.push_back(b);
  }
  return s;
}

// Unique per-test scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("evsync-test-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testor
