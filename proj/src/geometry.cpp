#include "evsync/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "evsync/errors.hpp"
#include "evsync/util.hpp"

namespace evsync {

namespace {

constexpr double kPi = 3.14159265358979323846;

Eigen::Vector3d homogeneous(const PixelPoint& p) { return {p.x(), p.y(), 1.0}; }

// Unit Frobenius norm with the largest-magnitude entry positive, so that a
// given epipolar geometry has exactly one representation.
FundamentalMatrix canonicalize(Eigen::Matrix3d f) {
  const double norm = f.norm();
  if (!(norm > 0) || !std::isfinite(norm))
    throw ComputationError("degenerate geometry: fundamental matrix vanishes");
  f /= norm;
  double best = 0;
  double sign = 1;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (std::abs(f(r, c)) > best) {
        best = std::abs(f(r, c));
        sign = f(r, c) < 0 ? -1.0 : 1.0;
      }
  f *= sign;
  return FundamentalMatrix{f};
}

struct HartleyTransform {
  Eigen::Matrix3d t;
};

// Isotropic normalization: centroid to the origin, mean distance sqrt(2).
HartleyTransform hartley(const Eigen::Matrix2Xd& pts) {
  const Eigen::Vector2d centroid = pts.rowwise().mean();
  const double mean_dist = (pts.colwise() - centroid).colwise().norm().mean();
  if (!(mean_dist > 1e-12))
    throw ComputationError("degenerate configuration: coincident points");
  const double s = std::sqrt(2.0) / mean_dist;
  HartleyTransform h;
  h.t << s, 0, -s * centroid.x(), 0, s, -s * centroid.y(), 0, 0, 1;
  return h;
}

// Eight-point fit on the selected columns of (p1, p2). Throws
// ComputationError when the design matrix is rank-deficient.
Eigen::Matrix3d fit_fundamental_on(const Eigen::Matrix2Xd& p1, const Eigen::Matrix2Xd& p2,
                                   const int* idx, int count) {
  Eigen::Matrix2Xd s1(2, count), s2(2, count);
  for (int i = 0; i < count; ++i) {
    const int j = idx ? idx[i] : i;
    s1.col(i) = p1.col(j);
    s2.col(i) = p2.col(j);
  }
  const HartleyTransform t1 = hartley(s1);
  const HartleyTransform t2 = hartley(s2);

  Eigen::Matrix<double, 9, 9> ata = Eigen::Matrix<double, 9, 9>::Zero();
  for (int i = 0; i < count; ++i) {
    const Eigen::Vector3d q1 = t1.t * homogeneous(s1.col(i));
    const Eigen::Vector3d q2 = t2.t * homogeneous(s2.col(i));
    Eigen::Matrix<double, 9, 1> row;
    row << q2.x() * q1.x(), q2.x() * q1.y(), q2.x(),  //
        q2.y() * q1.x(), q2.y() * q1.y(), q2.y(),     //
        q1.x(), q1.y(), 1.0;
    ata.noalias() += row * row.transpose();
  }

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> es(ata);
  if (es.info() != Eigen::Success)
    throw ComputationError("degenerate configuration: eight-point solve failed");
  const auto& ev = es.eigenvalues();  // ascending
  if (ev(1) <= 1e-10 * std::max(ev(8), 1e-12))
    throw ComputationError(
        "degenerate configuration: epipolar geometry is not unique for these points");

  const Eigen::Matrix<double, 9, 1> v = es.eigenvectors().col(0);
  Eigen::Matrix3d fn;
  fn << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sing = svd.singularValues();
  if (sing(1) <= 1e-12 * std::max(sing(0), 1e-300))
    throw ComputationError("degenerate configuration: fitted matrix collapses to rank one");
  sing(2) = 0.0;
  fn = svd.matrixU() * sing.asDiagonal() * svd.matrixV().transpose();

  return t2.t.transpose() * fn * t1.t;
}

// Squared symmetric epipolar distances for all columns at once.
void symmetric_residuals(const Eigen::Matrix3d& f, const Eigen::Matrix3Xd& p1h,
                         const Eigen::Matrix3Xd& p2h, Eigen::ArrayXd& out) {
  const Eigen::Matrix3Xd l2 = f * p1h;
  const Eigen::Matrix3Xd l1 = f.transpose() * p2h;
  const Eigen::ArrayXd e = (p2h.array() * l2.array()).colwise().sum();
  const Eigen::ArrayXd n2 = l2.row(0).array().square() + l2.row(1).array().square();
  const Eigen::ArrayXd n1 = l1.row(0).array().square() + l1.row(1).array().square();
  out = e.square() * (n1.inverse() + n2.inverse());
}

std::optional<Eigen::Vector3d> triangulate_linear(const Eigen::Matrix<double, 3, 4>& pm1,
                                                  const Eigen::Matrix<double, 3, 4>& pm2,
                                                  const Eigen::Vector3d& c1,
                                                  const Eigen::Vector3d& c2,
                                                  const Correspondence& c,
                                                  const char** reason) {
  Eigen::Matrix4d a;
  a.row(0) = c.p1.x() * pm1.row(2) - pm1.row(0);
  a.row(1) = c.p1.y() * pm1.row(2) - pm1.row(1);
  a.row(2) = c.p2.x() * pm2.row(2) - pm2.row(0);
  a.row(3) = c.p2.y() * pm2.row(2) - pm2.row(1);

  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d xh = svd.matrixV().col(3);
  if (std::abs(xh(3)) <= 1e-12 * xh.head<3>().norm()) {
    *reason = "point at infinity";
    return std::nullopt;
  }
  const Eigen::Vector3d x = xh.head<3>() / xh(3);

  const Eigen::Vector3d r1 = x - c1;
  const Eigen::Vector3d r2 = x - c2;
  const double n1 = r1.norm(), n2 = r2.norm();
  if (!(n1 > 0) || !(n2 > 0)) {
    *reason = "point coincides with a camera center";
    return std::nullopt;
  }
  const double cosang = std::clamp(r1.dot(r2) / (n1 * n2), -1.0, 1.0);
  if (std::acos(cosang) < 0.1 * kPi / 180.0) {
    *reason = "rays nearly parallel";
    return std::nullopt;
  }
  return x;
}

}  // namespace

void RigidExtrinsics::validate(bool require_unit_translation) const {
  if (!rotation.allFinite() || !translation.allFinite())
    throw ValidationError("extrinsics: non-finite entries");
  if ((rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw ValidationError("extrinsics: rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-9)
    throw ValidationError("extrinsics: rotation is not proper");
  if (require_unit_translation && std::abs(translation.norm() - 1.0) > 1e-9)
    throw ValidationError("extrinsics: translation is not unit length");
}

FundamentalMatrix compose_fundamental(const CameraModel& k1, const CameraModel& k2,
                                      const RigidExtrinsics& ext) {
  const Eigen::Vector3d& t = ext.translation;
  if (t.norm() <= 1e-12)
    throw ComputationError(
        "degenerate geometry: zero translation leaves the fundamental matrix undefined");
  Eigen::Matrix3d tx;
  tx << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
  const Eigen::Matrix3d f = k2.k_inv().transpose() * tx * ext.rotation * k1.k_inv();
  return canonicalize(f);
}

EpipolarLine epipolar_line_in_1(const FundamentalMatrix& f, const PixelPoint& p2) {
  const Eigen::Vector3d l = f.m.transpose() * homogeneous(p2);
  if (std::hypot(l(0), l(1)) <= 1e-12 * std::max(1.0, std::abs(l(2))))
    throw ComputationError("epipole-degenerate: the point maps to no epipolar line");
  return {l(0), l(1), l(2)};
}

EpipolarLine epipolar_line_in_2(const FundamentalMatrix& f, const PixelPoint& p1) {
  const Eigen::Vector3d l = f.m * homogeneous(p1);
  if (std::hypot(l(0), l(1)) <= 1e-12 * std::max(1.0, std::abs(l(2))))
    throw ComputationError("epipole-degenerate: the point maps to no epipolar line");
  return {l(0), l(1), l(2)};
}

double point_line_distance(const PixelPoint& p, const EpipolarLine& l) {
  const double n = std::hypot(l.a, l.b);
  if (!(n > 0)) throw ValidationError("invalid line: zero normal");
  return std::abs(l.a * p.x() + l.b * p.y() + l.c) / n;
}

double symmetric_epipolar_sq(const FundamentalMatrix& f, const Correspondence& c) {
  const Eigen::Vector3d p1 = homogeneous(c.p1);
  const Eigen::Vector3d p2 = homogeneous(c.p2);
  const Eigen::Vector3d l2 = f.m * p1;
  const Eigen::Vector3d l1 = f.m.transpose() * p2;
  const double e = p2.dot(l2);
  const double n2 = l2(0) * l2(0) + l2(1) * l2(1);
  const double n1 = l1(0) * l1(0) + l1(1) * l1(1);
  if (!(n1 > 0) || !(n2 > 0)) return std::numeric_limits<double>::infinity();
  return e * e * (1.0 / n1 + 1.0 / n2);
}

FundamentalMatrix fit_fundamental(const std::vector<Correspondence>& pairs) {
  if (pairs.size() < 8)
    throw ValidationError("insufficient data: fundamental estimation needs at least 8 pairs");
  Eigen::Matrix2Xd p1(2, pairs.size()), p2(2, pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    p1.col(i) = pairs[i].p1;
    p2.col(i) = pairs[i].p2;
  }
  return canonicalize(fit_fundamental_on(p1, p2, nullptr, static_cast<int>(pairs.size())));
}

LmedsEstimate estimate_fundamental_lmeds(const std::vector<Correspondence>& pairs,
                                         std::uint64_t seed) {
  const int n = static_cast<int>(pairs.size());
  if (n < 8)
    throw ValidationError("insufficient data: fundamental estimation needs at least 8 pairs");

  // Process in a canonical coordinate order so the estimate and inlier set
  // are invariant under permutation of the input for a fixed seed.
  std::vector<int> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Correspondence& ca = pairs[a];
    const Correspondence& cb = pairs[b];
    return std::tie(ca.p1.x(), ca.p1.y(), ca.p2.x(), ca.p2.y()) <
           std::tie(cb.p1.x(), cb.p1.y(), cb.p2.x(), cb.p2.y());
  });

  Eigen::Matrix2Xd p1(2, n), p2(2, n);
  Eigen::Matrix3Xd p1h(3, n), p2h(3, n);
  for (int i = 0; i < n; ++i) {
    const Correspondence& c = pairs[order[i]];
    p1.col(i) = c.p1;
    p2.col(i) = c.p2;
    p1h.col(i) = homogeneous(c.p1);
    p2h.col(i) = homogeneous(c.p2);
  }

  constexpr int kIterations = 500;
  constexpr int kSample = 8;

  Rng rng(seed);
  Eigen::ArrayXd residuals(n);
  std::vector<double> scratch(n);
  Eigen::Matrix3d best_f;
  double best_median = std::numeric_limits<double>::infinity();
  bool found = false;

  auto median_of = [&](const Eigen::ArrayXd& r) {
    std::copy(r.data(), r.data() + n, scratch.begin());
    auto mid = scratch.begin() + n / 2;
    std::nth_element(scratch.begin(), mid, scratch.end());
    return *mid;
  };

  if (n == kSample) {
    best_f = fit_fundamental_on(p1, p2, nullptr, n);
    found = true;
    symmetric_residuals(best_f, p1h, p2h, residuals);
    best_median = median_of(residuals);
  } else {
    int idx[kSample];
    for (int iter = 0; iter < kIterations; ++iter) {
      for (int k = 0; k < kSample; ++k) {
        bool fresh;
        do {
          idx[k] = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
          fresh = true;
          for (int j = 0; j < k; ++j) fresh = fresh && idx[j] != idx[k];
        } while (!fresh);
      }
      Eigen::Matrix3d f;
      try {
        f = fit_fundamental_on(p1, p2, idx, kSample);
      } catch (const ComputationError&) {
        continue;
      }
      symmetric_residuals(f, p1h, p2h, residuals);
      const double med = median_of(residuals);
      if (med < best_median) {
        best_median = med;
        best_f = f;
        found = true;
      }
    }
  }

  if (!found)
    throw ComputationError("degenerate configuration: every sampled minimal set was degenerate");

  // Robust scale from the best median; the floor keeps exact data (median
  // ~1e-20 px^2) from rejecting its own inliers through rounding noise.
  symmetric_residuals(best_f, p1h, p2h, residuals);
  double threshold_sq = std::numeric_limits<double>::infinity();
  if (n > kSample) {
    const double sigma = 1.4826 * (1.0 + 5.0 / (n - kSample)) * std::sqrt(best_median);
    threshold_sq = std::max(2.5 * sigma * 2.5 * sigma, 1e-12);
  }

  std::vector<int> inlier_idx;
  inlier_idx.reserve(n);
  for (int i = 0; i < n; ++i)
    if (residuals(i) <= threshold_sq) inlier_idx.push_back(i);

  Eigen::Matrix3d final_f = best_f;
  if (static_cast<int>(inlier_idx.size()) >= kSample) {
    try {
      final_f = fit_fundamental_on(p1, p2, inlier_idx.data(),
                                   static_cast<int>(inlier_idx.size()));
    } catch (const ComputationError&) {
      final_f = best_f;  // refit can degenerate even when a sample did not
    }
  }

  LmedsEstimate est;
  est.f = canonicalize(final_f);
  est.inliers.assign(pairs.size(), 0);
  for (int i : inlier_idx) est.inliers[order[i]] = 1;

  symmetric_residuals(est.f.m, p1h, p2h, residuals);
  est.median_residual = median_of(residuals);
  return est;
}

RigidExtrinsics decompose_to_extrinsics(const FundamentalMatrix& f, const CameraModel& k1,
                                        const CameraModel& k2,
                                        const std::vector<Correspondence>& pairs) {
  if (pairs.empty())
    throw ValidationError("insufficient data: cheirality needs at least one correspondence");

  const Eigen::Matrix3d e = k2.k().transpose() * f.m * k1.k();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()(1) <= 1e-12 * std::max(svd.singularValues()(0), 1e-300))
    throw ComputationError("degenerate geometry: essential matrix has rank below two");

  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if (u.determinant() < 0) u = -u;
  if (v.determinant() < 0) v = -v;

  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d r_a = u * w * v.transpose();
  const Eigen::Matrix3d r_b = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2);  // unit by construction

  const RigidExtrinsics candidates[4] = {
      {r_a, t}, {r_a, -t}, {r_b, t}, {r_b, -t}};

  const Eigen::Matrix3d km1 = k1.k();
  const Eigen::Matrix3d km2 = k2.k();
  Eigen::Matrix<double, 3, 4> pm1;
  pm1 << km1, Eigen::Vector3d::Zero();

  int best = -1;
  std::size_t best_count = 0;
  for (int i = 0; i < 4; ++i) {
    const RigidExtrinsics& cand = candidates[i];
    Eigen::Matrix<double, 3, 4> pm2;
    pm2.block<3, 3>(0, 0) = km2 * cand.rotation;
    pm2.col(3) = km2 * cand.translation;
    const Eigen::Vector3d c2 = -cand.rotation.transpose() * cand.translation;

    std::size_t in_front = 0;
    for (const Correspondence& c : pairs) {
      const char* reason = nullptr;
      const auto x = triangulate_linear(pm1, pm2, Eigen::Vector3d::Zero(), c2, c, &reason);
      if (!x) continue;
      const double z1 = x->z();
      const double z2 = (cand.rotation * *x + cand.translation).z();
      if (z1 > 0 && z2 > 0) ++in_front;
    }
    if (in_front > best_count) {
      best_count = in_front;
      best = i;
    }
  }

  if (best < 0 || 2 * best_count <= pairs.size())
    throw ComputationError(
        "cheirality failure: no pose candidate places a majority of points in front of both "
        "cameras");
  return candidates[best];
}

Eigen::Vector3d triangulate(const CameraModel& k1, const RigidExtrinsics& pose1,
                            const CameraModel& k2, const RigidExtrinsics& pose2,
                            const Correspondence& c) {
  const Eigen::Vector3d c1 = -pose1.rotation.transpose() * pose1.translation;
  const Eigen::Vector3d c2 = -pose2.rotation.transpose() * pose2.translation;
  if ((c1 - c2).norm() < 1e-12)
    throw ComputationError("ill-conditioned triangulation: coincident camera centers");

  Eigen::Matrix<double, 3, 4> pm1, pm2;
  pm1.block<3, 3>(0, 0) = k1.k() * pose1.rotation;
  pm1.col(3) = k1.k() * pose1.translation;
  pm2.block<3, 3>(0, 0) = k2.k() * pose2.rotation;
  pm2.col(3) = k2.k() * pose2.translation;

  const char* reason = "unknown";
  const auto x = triangulate_linear(pm1, pm2, c1, c2, c, &reason);
  if (!x) throw ComputationError(std::string("ill-conditioned triangulation: ") + reason);
  return *x;
}

AlignmentEstimate umeyama_align(const std::vector<Eigen::Vector3d>& source,
                                const std::vector<Eigen::Vector3d>& target) {
  if (source.size() != target.size())
    throw ValidationError("alignment inputs differ in length");
  const int n = static_cast<int>(source.size());
  if (n < 3) throw ValidationError("alignment needs at least 3 paired points");

  Eigen::Vector3d mean_x = Eigen::Vector3d::Zero(), mean_y = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    mean_x += source[i];
    mean_y += target[i];
  }
  mean_x /= n;
  mean_y /= n;

  double var_x = 0;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d dx = source[i] - mean_x;
    const Eigen::Vector3d dy = target[i] - mean_y;
    var_x += dx.squaredNorm();
    cov.noalias() += dy * dx.transpose();
  }
  var_x /= n;
  cov /= n;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();
  if (!(var_x > 1e-24) || d(1) <= 1e-9 * std::max(d(0), 1e-300))
    throw ComputationError("degenerate alignment: source points are collinear or coincident");

  Eigen::Vector3d s_diag(1, 1, 1);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s_diag(2) = -1;

  SimilarityTransform tf;
  tf.rotation = svd.matrixU() * s_diag.asDiagonal() * svd.matrixV().transpose();
  tf.scale = (d(0) + d(1) + s_diag(2) * d(2)) / var_x;
  if (!(tf.scale > 0))
    throw ComputationError("degenerate alignment: non-positive scale");
  tf.translation = mean_y - tf.scale * tf.rotation * mean_x;

  double sse = 0;
  for (int i = 0; i < n; ++i)
    sse += (tf.scale * tf.rotation * source[i] + tf.translation - target[i]).squaredNorm();
  return {tf, std::sqrt(sse / n)};
}

double rotation_error_deg(const Eigen::Matrix3d& r_est, const Eigen::Matrix3d& r_true) {
  // atan2 of the skew norm against the trace stays accurate for tiny angles,
  // where acos of a near-unit cosine loses half the mantissa.
  const Eigen::Matrix3d d = r_est.transpose() * r_true;
  const Eigen::Vector3d skew(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  const double sin_theta = 0.5 * skew.norm();
  const double cos_theta = 0.5 * (d.trace() - 1.0);
  return std::atan2(sin_theta, cos_theta) * 180.0 / kPi;
}

double direction_error_deg(const Eigen::Vector3d& t_est, const Eigen::Vector3d& t_true) {
  const double n1 = t_est.norm(), n2 = t_true.norm();
  if (n1 < 1e-12 || n2 < 1e-12)
    throw ValidationError("direction error undefined for a zero vector");
  return std::atan2(t_est.cross(t_true).norm(), std::abs(t_est.dot(t_true))) * 180.0 / kPi;
}

}  // namespace evsync
