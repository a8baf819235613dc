#include "evsync/camera.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "evsync/errors.hpp"

namespace evsync {

void CameraModel::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw ValidationError("camera: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ValidationError("camera: resolution must be positive");
  if (!(cx > 0) || !(cx < width) || !(cy > 0) || !(cy < height))
    throw ValidationError("camera: principal point must lie inside the sensor");
  for (double v : {fx, fy, cx, cy, k1, k2, p1, p2, k3})
    if (!std::isfinite(v)) throw ValidationError("camera: non-finite parameter");
}

Eigen::Matrix3d CameraModel::k() const {
  Eigen::Matrix3d m;
  m << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return m;
}

Eigen::Matrix3d CameraModel::k_inv() const {
  Eigen::Matrix3d m;
  m << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
  return m;
}

Eigen::Vector2d CameraModel::normalized_to_pixel(const Eigen::Vector2d& n) const {
  return {fx * n.x() + cx, fy * n.y() + cy};
}

Eigen::Vector2d CameraModel::pixel_to_normalized(const Eigen::Vector2d& px) const {
  return {(px.x() - cx) / fx, (px.y() - cy) / fy};
}

Eigen::Vector2d CameraModel::distort_normalized(const Eigen::Vector2d& n) const {
  const double x = n.x(), y = n.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  const double xt = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
  const double yt = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
  return {x * radial + xt, y * radial + yt};
}

std::optional<Eigen::Vector2d> CameraModel::undistort_normalized(const Eigen::Vector2d& d) const {
  constexpr int kMaxIterations = 10;
  constexpr double kTolerance = 1e-8;
  Eigen::Vector2d u = d;
  for (int i = 0; i < kMaxIterations; ++i) {
    const double x = u.x(), y = u.y();
    const double r2 = x * x + y * y;
    if (!std::isfinite(r2)) return std::nullopt;
    const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
    if (radial <= 1e-8) return std::nullopt;
    const double xt = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
    const double yt = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
    const Eigen::Vector2d next{(d.x() - xt) / radial, (d.y() - yt) / radial};
    const double step = (next - u).norm();
    u = next;
    if (step < kTolerance) break;
  }
  if ((distort_normalized(u) - d).norm() > kTolerance) return std::nullopt;
  return u;
}

Eigen::Vector2d CameraModel::distort_pixel(const Eigen::Vector2d& undistorted_px) const {
  return normalized_to_pixel(distort_normalized(pixel_to_normalized(undistorted_px)));
}

std::optional<Eigen::Vector2d> CameraModel::undistort_pixel(const Eigen::Vector2d& distorted_px) const {
  auto n = undistort_normalized(pixel_to_normalized(distorted_px));
  if (!n) return std::nullopt;
  return normalized_to_pixel(*n);
}

bool operator==(const CameraModel& a, const CameraModel& b) {
  return a.fx == b.fx && a.fy == b.fy && a.cx == b.cx && a.cy == b.cy && a.k1 == b.k1 &&
         a.k2 == b.k2 && a.p1 == b.p1 && a.p2 == b.p2 && a.k3 == b.k3 && a.width == b.width &&
         a.height == b.height;
}

nlohmann::json camera_to_json(const CameraModel& cam) {
  return nlohmann::json{{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx},       {"cy", cam.cy},
                        {"k1", cam.k1}, {"k2", cam.k2}, {"p1", cam.p1},       {"p2", cam.p2},
                        {"k3", cam.k3}, {"width", cam.width}, {"height", cam.height}};
}

CameraModel camera_from_json(const nlohmann::json& j) {
  CameraModel cam;
  try {
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.k1 = j.at("k1").get<double>();
    cam.k2 = j.at("k2").get<double>();
    cam.p1 = j.at("p1").get<double>();
    cam.p2 = j.at("p2").get<double>();
    cam.k3 = j.at("k3").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("camera block has a missing or mistyped key: ") + e.what());
  }
  cam.validate();
  return cam;
}

CameraModel load_camera(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open camera file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("camera file " + path + " is not valid JSON");
  try {
    return camera_from_json(j);
  } catch (const ValidationError& e) {
    throw ValidationError("camera file " + path + ": " + e.what());
  }
}

void save_camera(const CameraModel& cam, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write camera file: " + path);
  out << camera_to_json(cam).dump(2) << "\n";
}

}  // namespace evsync
