#pragma once

#include <Eigen/Core>
#include <json.hpp>
#include <optional>
#include <string>

namespace evsync {

// Pinhole intrinsics with Brown-Conrady distortion (k1, k2, p1, p2, k3).
// Sensor files carry distorted integer pixels; all geometry downstream works
// in continuous undistorted pixel coordinates.
struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  double k1 = 0, k2 = 0, p1 = 0, p2 = 0, k3 = 0;
  int width = 0, height = 0;

  void validate() const;

  Eigen::Matrix3d k() const;
  Eigen::Matrix3d k_inv() const;

  Eigen::Vector2d normalized_to_pixel(const Eigen::Vector2d& n) const;
  Eigen::Vector2d pixel_to_normalized(const Eigen::Vector2d& px) const;

  Eigen::Vector2d distort_normalized(const Eigen::Vector2d& n) const;
  // Fixed-point inversion of distort_normalized, at most 10 iterations with
  // 1e-8 normalized-unit tolerance; empty when the iteration diverges.
  std::optional<Eigen::Vector2d> undistort_normalized(const Eigen::Vector2d& d) const;

  Eigen::Vector2d distort_pixel(const Eigen::Vector2d& undistorted_px) const;
  std::optional<Eigen::Vector2d> undistort_pixel(const Eigen::Vector2d& distorted_px) const;
};

bool operator==(const CameraModel& a, const CameraModel& b);

CameraModel load_camera(const std::string& path);
void save_camera(const CameraModel& cam, const std::string& path);

nlohmann::json camera_to_json(const CameraModel& cam);
// Requires exactly the keys written by camera_to_json; validates the result.
CameraModel camera_from_json(const nlohmann::json& j);

}  // namespace evsync
