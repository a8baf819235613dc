#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evsync/geometry.hpp"
#include "evsync/trajectory.hpp"

namespace evsync {

// Parameters of the coarse-to-fine offset search. The candidate offset t_d is
// camera-2 clock minus camera-1 clock: camera 2 is sampled at t + t_d.
struct SearchConfig {
  std::int64_t t_begin_us = -1'000'000;
  std::int64_t t_end_us = 1'000'000;
  std::int64_t coarse_step_us = 10'000;
  int refine_levels = 3;         // each level shrinks the step by refine_factor
  int refine_factor = 10;
  std::int64_t min_step_us = 50; // step never refines below this
  int min_samples = 20;          // matched pairs required per candidate
  bool symmetric_distance = false;
  std::uint64_t seed = 0;        // drives the robust estimator in unknown-pose mode
  std::int64_t max_gap_us = 20'000;  // interpolation gap limit when sampling

  void validate() const;
};

nlohmann::json search_config_to_json(const SearchConfig& cfg);
// Starts from defaults; unknown keys are rejected.
SearchConfig search_config_from_json(const nlohmann::json& j);

struct CurvePoint {
  std::int64_t t_d_us = 0;
  double d_avg_px = 0.0;
  int n = 0;  // matched pairs behind the average
};

struct SyncResult {
  std::int64_t t_d_star_us = 0;
  double d_avg_min = 0.0;
  int n_correspondences = 0;
  FundamentalMatrix fundamental;
  RigidExtrinsics extrinsics;   // unit-norm translation
  std::string mode;             // "known-extrinsics" or "estimated-extrinsics"
  std::vector<std::vector<CurvePoint>> curve;  // one list per search level
  SearchConfig config;
};

// Average distance between camera-2 samples and the epipolar lines induced by
// the matched camera-1 centroids under candidate offset t_d_us (optionally
// averaged with the mirrored camera-1 distance). Empty when fewer than
// cfg.min_samples pairs can be matched.
std::optional<std::pair<double, int>> average_epipolar_distance(const Trajectory2D& traj1,
                                                                const Trajectory2D& traj2,
                                                                const FundamentalMatrix& f,
                                                                std::int64_t t_d_us,
                                                                const SearchConfig& cfg);

// Offset search with the relative pose known up front.
SyncResult sync_known(const Trajectory2D& traj1, const Trajectory2D& traj2,
                      const RigidExtrinsics& extrinsics, const SearchConfig& cfg);

// Joint search: every candidate offset gets its own robust fundamental-matrix
// estimate; the final pose is recovered from the winning offset's inliers.
SyncResult sync_unknown(const Trajectory2D& traj1, const Trajectory2D& traj2,
                        const SearchConfig& cfg);

// JSON report (offset, score, pose when estimated, config echo) and the
// per-level search curve as CSV `level,t_d_us,d_avg_px,n`.
void write_report(const SyncResult& result, const std::string& path);
void write_curve(const SyncResult& result, const std::string& path);

}  // namespace evsync
