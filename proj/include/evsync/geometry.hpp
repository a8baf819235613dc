#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "evsync/camera.hpp"

namespace evsync {

using PixelPoint = Eigen::Vector2d;  // (u, v), continuous undistorted pixels

// Rigid map between two frames: x_b = rotation * x_a + translation. Serves
// both as camera-2-from-camera-1 extrinsics and as a world-to-camera pose.
struct RigidExtrinsics {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  void validate(bool require_unit_translation = false) const;
};

// Rank-2, unit Frobenius norm, sign-canonicalized (largest-magnitude entry
// positive) so equal geometry serializes to equal bytes.
struct FundamentalMatrix {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
};

struct EpipolarLine {
  double a = 0, b = 0, c = 0;  // a*u + b*v + c = 0 in pixel coordinates
};

struct Correspondence {
  PixelPoint p1{0, 0};  // image 1, undistorted
  PixelPoint p2{0, 0};  // image 2, undistorted
};

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// F = K2^-T [t]x R K1^-1, for the constraint p2' F p1 = 0.
FundamentalMatrix compose_fundamental(const CameraModel& k1, const CameraModel& k2,
                                      const RigidExtrinsics& ext);

// Epipolar lines under p2' F p1 = 0: l1 = F' p2, l2 = F p1.
EpipolarLine epipolar_line_in_1(const FundamentalMatrix& f, const PixelPoint& p2);
EpipolarLine epipolar_line_in_2(const FundamentalMatrix& f, const PixelPoint& p1);

double point_line_distance(const PixelPoint& p, const EpipolarLine& l);

// d(p1, F'p2)^2 + d(p2, Fp1)^2 in px^2; +inf when a point sits on an epipole.
double symmetric_epipolar_sq(const FundamentalMatrix& f, const Correspondence& c);

// Normalized (isotropic, mean distance sqrt(2)) eight-point fit over all
// pairs. Throws on < 8 pairs or a rank-deficient design.
FundamentalMatrix fit_fundamental(const std::vector<Correspondence>& pairs);

struct LmedsEstimate {
  FundamentalMatrix f;
  std::vector<std::uint8_t> inliers;  // parallel to the input pairs
  double median_residual = 0;         // squared symmetric distance of the final fit
};

// Least-median-of-squares around the eight-point solver: 500 fixed samples of
// size 8, inlier cut at 2.5 * 1.4826 * (1 + 5/(n-8)) * sqrt(median), refit on
// inliers. Results depend only on the pair set and seed, not on input order.
LmedsEstimate estimate_fundamental_lmeds(const std::vector<Correspondence>& pairs,
                                         std::uint64_t seed);

// E = K2' F K1 projected onto the essential manifold, four-way (R, +-t)
// disambiguation by triangulated-depth majority; unit translation.
RigidExtrinsics decompose_to_extrinsics(const FundamentalMatrix& f, const CameraModel& k1,
                                        const CameraModel& k2,
                                        const std::vector<Correspondence>& pairs);

// Linear two-view DLT; poses map world points into each camera frame.
Eigen::Vector3d triangulate(const CameraModel& k1, const RigidExtrinsics& pose1,
                            const CameraModel& k2, const RigidExtrinsics& pose2,
                            const Correspondence& c);

struct AlignmentEstimate {
  SimilarityTransform transform;  // maps source points onto target
  double rmse = 0;
};

AlignmentEstimate umeyama_align(const std::vector<Eigen::Vector3d>& source,
                                const std::vector<Eigen::Vector3d>& target);

double rotation_error_deg(const Eigen::Matrix3d& r_est, const Eigen::Matrix3d& r_true);
// Angle between lines (sign-invariant).
double direction_error_deg(const Eigen::Vector3d& t_est, const Eigen::Vector3d& t_true);

}  // namespace evsync
