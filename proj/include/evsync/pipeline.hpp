#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "evsync/events.hpp"
#include "evsync/simulator.hpp"
#include "evsync/sync.hpp"
#include "evsync/trajectory.hpp"
#include "evsync/zncc.hpp"

namespace evsync {

// End-to-end knobs: denoising, centroid extraction, the offset search and the
// correlation baseline's bin width.
struct PipelineConfig {
  int denoise_r_xy_px = 3;
  std::int64_t denoise_r_t_us = 10'000;
  int denoise_k_min = 6;
  int denoise_passes = 2;
  std::int64_t window_us = 5'000;
  int n_min = 10;
  double border_margin_px = 5.0;
  std::int64_t zncc_bin_us = 20'000;
  SearchConfig search;

  void validate() const;
};

nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg);
// Starts from defaults; unknown keys are rejected. "search" nests a
// search-config object.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

// Denoise (repeated passes) + centroid extraction.
Trajectory2D preprocess(const EventStream& s, const PipelineConfig& cfg);

struct SyncOutputs {
  SyncResult result;
  Trajectory2D traj1;
  Trajectory2D traj2;
  double preprocess_seconds = 0.0;
  double search_seconds = 0.0;
};

// Full run over two raw streams; extrinsics select the known-pose algorithm.
SyncOutputs run_sync(const EventStream& s1, const EventStream& s2, const PipelineConfig& cfg,
                     const std::optional<RigidExtrinsics>& extrinsics);

// Writes report.json, curve.csv, trajectory1.csv, trajectory2.csv and a
// timing.json sidecar (wall-clock seconds; kept out of report.json so that
// scientific outputs stay byte-deterministic).
void write_sync_outputs(const SyncOutputs& outputs, const std::string& out_dir);

struct BaselineOutputs {
  ZnccOffset offset;
  std::int64_t bin_width_us = 0;
};

// Event-rate correlation baseline on the raw (un-denoised) streams.
BaselineOutputs run_baseline(const EventStream& s1, const EventStream& s2,
                             const PipelineConfig& cfg);
void write_baseline_report(const BaselineOutputs& b, const PipelineConfig& cfg,
                           const std::string& path);

struct EvaluationReport {
  double t_d_error_ms = 0.0;
  std::optional<double> rotation_error_deg;
  std::optional<double> translation_direction_error_deg;
  std::optional<double> trajectory_rmse;  // scene units, after similarity alignment
  std::optional<nlohmann::json> runtime;  // timing sidecar echo
};

// Scores a sync/baseline report against ground truth. Pose errors appear when
// the report carries an estimated pose; the trajectory RMSE appears when both
// extracted trajectories plus the true 3-D path are supplied.
EvaluationReport evaluate_report(const nlohmann::json& report, const GroundTruthSummary& truth,
                                 const std::optional<Trajectory2D>& traj1,
                                 const std::optional<Trajectory2D>& traj2,
                                 const std::optional<Path3D>& path3d,
                                 const std::optional<nlohmann::json>& timing);

nlohmann::json evaluation_to_json(const EvaluationReport& report);

// Scenario-matrix driver: durations x view angles x offsets, several
// repetitions each, both the epipolar method and the correlation baseline.
struct SweepProtocol {
  std::vector<double> durations_s{10.0, 20.0};
  std::vector<double> view_angles_deg{30, 60, 90, 120, 150};
  std::vector<double> offsets_ms{5, 50, 500};
  int repetitions = 10;
  std::uint64_t seed = 7;
  ScenarioConfig scenario;   // template; duration/angle/offset/seed overridden per run
  PipelineConfig pipeline;

  void validate() const;
};

nlohmann::json sweep_protocol_to_json(const SweepProtocol& protocol);
SweepProtocol sweep_protocol_from_json(const nlohmann::json& j);

// Executes the matrix with `workers` threads over whole cells, one JSON file
// per completed cell (already-completed cells are skipped on rerun), then
// rebuilds aggregate.csv deterministically from the cell files. Returns the
// aggregate path. Identical protocol + seed give byte-identical aggregates
// regardless of worker count.
std::string run_sweep(const SweepProtocol& protocol, const std::string& out_dir, int workers);

}  // namespace evsync
