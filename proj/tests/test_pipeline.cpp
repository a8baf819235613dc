#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "evsync/errors.hpp"
#include "evsync/jsonio.hpp"
#include "evsync/pipeline.hpp"
#include "evsync/util.hpp"
#include "oracles.hpp"

using namespace evsync;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Scenario noisy_scenario(std::uint64_t seed, double duration_s, std::int64_t offset_us) {
  ScenarioConfig cfg;
  cfg.seed = seed;
  cfg.duration_s = duration_s;
  cfg.injected_offset_us = offset_us;
  return make_scenario(cfg);
}

// Lerped true projected center of camera 1 at an arbitrary time.
std::optional<Eigen::Vector2d> true_center_at(const GroundTruth& truth, std::int64_t t_us) {
  const auto& c = truth.centers1;
  if (t_us < c.front().t_us || t_us > c.back().t_us) return std::nullopt;
  const auto k = static_cast<std::size_t>((t_us - c.front().t_us) / 100);
  if (c[k].t_us == t_us) return c[k].visible ? std::optional(c[k].undistorted_px) : std::nullopt;
  if (k + 1 >= c.size() || !c[k].visible || !c[k + 1].visible) return std::nullopt;
  const double w = static_cast<double>(t_us - c[k].t_us) / 100.0;
  return ((1.0 - w) * c[k].undistorted_px + w * c[k + 1].undistorted_px).eval();
}

}  // namespace

TEST_CASE("pipeline configuration validates and round-trips through JSON") {
  PipelineConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.window_us == 5'000);
  CHECK(cfg.denoise_r_xy_px == 3);
  CHECK(cfg.denoise_r_t_us == 10'000);

  PipelineConfig bad = cfg;
  bad.window_us = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.denoise_passes = 17;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.zncc_bin_us = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  cfg.n_min = 4;
  cfg.search.t_begin_us = -250'000;
  cfg.search.t_end_us = 250'000;
  const PipelineConfig back = pipeline_config_from_json(pipeline_config_to_json(cfg));
  CHECK(back.n_min == 4);
  CHECK(back.search.t_begin_us == -250'000);
  CHECK(back.search.t_end_us == 250'000);
  CHECK(back.denoise_r_xy_px == cfg.denoise_r_xy_px);
  CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json{{"no_such_knob", 1}}),
                  ValidationError);
  CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::array()), ValidationError);
}

TEST_CASE("preprocess tracks the true projected center through noise") {
  const Scenario sc = noisy_scenario(21, 3.0, 0);
  const PipelineConfig cfg;
  const Trajectory2D traj = preprocess(sc.stream1, cfg);
  REQUIRE(traj.points.size() > 0);

  std::size_t n_valid = 0, n_close = 0;
  double sum_err = 0;
  for (const auto& pt : traj.points) {
    if (!pt.valid) continue;
    const auto truth = true_center_at(sc.truth, pt.t);
    if (!truth) continue;
    ++n_valid;
    const double err = (pt.point - *truth).norm();
    sum_err += err;
    if (err < 3.0) ++n_close;
  }
  // A 3-second recording yields ~600 windows; the tracker should keep most
  // of them and sit within a pixel or two of the truth on average.
  CHECK(n_valid > 400);
  CHECK(sum_err / static_cast<double>(n_valid) < 2.0);
  CHECK(static_cast<double>(n_close) / static_cast<double>(n_valid) > 0.9);
}

TEST_CASE("preprocess without denoising keeps the noise floor in the centroids") {
  const Scenario sc = noisy_scenario(22, 2.0, 0);
  PipelineConfig raw;
  raw.denoise_passes = 0;
  const Trajectory2D traj_raw = preprocess(sc.stream1, raw);
  const Trajectory2D traj_clean = preprocess(sc.stream1, PipelineConfig{});

  const auto mean_error = [&](const Trajectory2D& traj) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& pt : traj.points) {
      if (!pt.valid) continue;
      const auto truth = true_center_at(sc.truth, pt.t);
      if (!truth) continue;
      sum += (pt.point - *truth).norm();
      ++n;
    }
    REQUIRE(n > 100);
    return sum / static_cast<double>(n);
  };
  // Without denoising the uniform background drags every centroid toward the
  // image middle; the filtered version is far closer to the truth.
  CHECK(mean_error(traj_clean) < mean_error(traj_raw) / 5.0);
}

TEST_CASE("full synchronization runs recover an injected offset end to end") {
  const std::int64_t truth_offset = 5'000;
  const Scenario sc = noisy_scenario(42, 8.0, truth_offset);
  const PipelineConfig cfg;

  SUBCASE("with the relative pose supplied") {
    const SyncOutputs out = run_sync(sc.stream1, sc.stream2, cfg, sc.truth.relative);
    CHECK(out.result.mode == "known-extrinsics");
    CHECK(std::abs(out.result.t_d_star_us - truth_offset) <= 1'500);
    CHECK(out.result.d_avg_min < 2.0);
    CHECK(out.result.n_correspondences >= 100);
    CHECK(out.preprocess_seconds > 0.0);
    CHECK(out.search_seconds > 0.0);
  }

  SUBCASE("with the pose estimated jointly") {
    const SyncOutputs out = run_sync(sc.stream1, sc.stream2, cfg, std::nullopt);
    CHECK(out.result.mode == "estimated-extrinsics");
    CHECK(std::abs(out.result.t_d_star_us - truth_offset) <= 1'500);
    CHECK(rotation_error_deg(out.result.extrinsics.rotation, sc.truth.relative.rotation) < 2.0);
    CHECK(direction_error_deg(out.result.extrinsics.translation,
                              sc.truth.relative.translation) < 2.0);

    testor::TempDir tmp("pipeline-outputs");
    write_sync_outputs(out, tmp.path.string());
    for (const char* name :
         {"report.json", "curve.csv", "trajectory1.csv", "trajectory2.csv", "timing.json"})
      CHECK(std::filesystem::exists(tmp.path / name));

    const nlohmann::json report = load_json_file(tmp.file("report.json"));
    CHECK(report.at("t_d_star_us").get<std::int64_t>() == out.result.t_d_star_us);
    CHECK(report.at("mode") == "estimated-extrinsics");
    REQUIRE(report.contains("R"));
    REQUIRE(report.contains("t"));

    const nlohmann::json timing = load_json_file(tmp.file("timing.json"));
    CHECK(timing.at("wall_seconds").at("total").get<double>() > 0.0);

    // Scoring the report against the truth reproduces the errors exactly and
    // the aligned 3-D reconstruction lands well inside the workspace scale.
    const GroundTruthSummary summary{sc.truth.injected_offset_us, sc.truth.relative};
    const Path3D path{sc.truth.times_us, sc.truth.positions_world};
    const EvaluationReport ev =
        evaluate_report(report, summary, out.traj1, out.traj2, path, timing);
    CHECK(ev.t_d_error_ms ==
          doctest::Approx(std::abs(out.result.t_d_star_us - truth_offset) / 1000.0));
    REQUIRE(ev.rotation_error_deg.has_value());
    CHECK(*ev.rotation_error_deg < 2.0);
    REQUIRE(ev.trajectory_rmse.has_value());
    const double diagonal = 2.0 * sc.config.workspace_half_extents.norm();
    CHECK(*ev.trajectory_rmse < 0.01 * diagonal);
    REQUIRE(ev.runtime.has_value());
  }
}

TEST_CASE("report scoring is exact on hand-built reports") {
  const Scenario sc = noisy_scenario(30, 2.0, 40'000);
  const GroundTruthSummary summary{sc.truth.injected_offset_us, sc.truth.relative};

  nlohmann::json report;
  report["t_d_star_us"] = sc.truth.injected_offset_us + 1'234;
  EvaluationReport ev =
      evaluate_report(report, summary, std::nullopt, std::nullopt, std::nullopt, std::nullopt);
  CHECK(ev.t_d_error_ms == doctest::Approx(1.234).epsilon(1e-12));
  CHECK_FALSE(ev.rotation_error_deg.has_value());
  CHECK_FALSE(ev.trajectory_rmse.has_value());
  CHECK_FALSE(ev.runtime.has_value());

  // A pose perturbed by known angles scores exactly those angles.
  const Eigen::Matrix3d r_err =
      Eigen::AngleAxisd(0.5 * M_PI / 180.0, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Vector3d axis =
      sc.truth.relative.translation.cross(Eigen::Vector3d::UnitY()).normalized();
  const Eigen::Vector3d t_rot =
      Eigen::AngleAxisd(1.5 * M_PI / 180.0, axis) * sc.truth.relative.translation;
  report["R"] = matrix_to_json(r_err * sc.truth.relative.rotation);
  report["t"] = vector_to_json(t_rot.normalized());
  ev = evaluate_report(report, summary, std::nullopt, std::nullopt, std::nullopt, std::nullopt);
  REQUIRE(ev.rotation_error_deg.has_value());
  CHECK(*ev.rotation_error_deg == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(*ev.translation_direction_error_deg == doctest::Approx(1.5).epsilon(1e-6));

  // Quantization-free trajectories triangulated at the true offset align with
  // the true path almost perfectly.
  const auto [traj1, traj2] = oracle_trajectories(sc);
  nlohmann::json exact;
  exact["t_d_star_us"] = sc.truth.injected_offset_us;
  const Path3D path{sc.truth.times_us, sc.truth.positions_world};
  ev = evaluate_report(exact, summary, traj1, traj2, path, std::nullopt);
  REQUIRE(ev.trajectory_rmse.has_value());
  CHECK(*ev.trajectory_rmse < 1e-6);

  CHECK_THROWS_AS(evaluate_report(nlohmann::json{{"mode", "x"}}, summary, std::nullopt,
                                  std::nullopt, std::nullopt, std::nullopt),
                  ValidationError);

  // Trajectories that never overlap leave nothing to triangulate.
  nlohmann::json far;
  far["t_d_star_us"] = 100'000'000;
  CHECK_THROWS_AS(evaluate_report(far, summary, traj1, traj2, path, std::nullopt),
                  ComputationError);
}

TEST_CASE("correlation baseline produces a scored report file") {
  const Scenario sc = noisy_scenario(33, 2.0, 0);
  const PipelineConfig cfg;
  const BaselineOutputs b = run_baseline(sc.stream1, sc.stream2, cfg);
  CHECK(b.bin_width_us == 20'000);
  CHECK(b.offset.offset_us % 20'000 == 0);
  CHECK(std::abs(b.offset.offset_us) <= 1'000'000);

  testor::TempDir tmp("baseline-report");
  write_baseline_report(b, cfg, tmp.file("report.json"));
  const nlohmann::json j = load_json_file(tmp.file("report.json"));
  CHECK(j.at("mode") == "zncc-baseline");
  CHECK(j.at("t_d_star_us").get<std::int64_t>() == b.offset.offset_us);
  CHECK(j.at("bin_width_us").get<std::int64_t>() == 20'000);
  CHECK(j.contains("config"));
}

TEST_CASE("sweep protocol validates and round-trips through JSON") {
  SweepProtocol p;
  CHECK_NOTHROW(p.validate());
  CHECK(p.repetitions == 10);
  CHECK(p.seed == 7);
  CHECK(p.durations_s == std::vector<double>{10.0, 20.0});
  CHECK(p.view_angles_deg == std::vector<double>{30, 60, 90, 120, 150});
  CHECK(p.offsets_ms == std::vector<double>{5, 50, 500});

  SweepProtocol bad = p;
  bad.repetitions = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = p;
  bad.view_angles_deg = {190.0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = p;
  bad.durations_s.clear();
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  p.durations_s = {2.5};
  p.repetitions = 3;
  const SweepProtocol back = sweep_protocol_from_json(sweep_protocol_to_json(p));
  CHECK(back.durations_s == std::vector<double>{2.5});
  CHECK(back.repetitions == 3);
  CHECK(back.seed == 7);
  CHECK_THROWS_AS(sweep_protocol_from_json(nlohmann::json{{"mystery", 1}}), ValidationError);
}

TEST_CASE("scenario sweeps resume, aggregate deterministically and reject mismatches") {
  SweepProtocol p;
  p.durations_s = {2.0};
  p.view_angles_deg = {60.0, 90.0};
  p.offsets_ms = {5.0};
  p.repetitions = 1;
  p.seed = 3;

  testor::TempDir tmp("sweep");
  const auto dir_a = (tmp.path / "a").string();
  const auto dir_b = (tmp.path / "b").string();

  CHECK_THROWS_AS(run_sweep(p, dir_a, 0), ValidationError);

  const std::string agg_a = run_sweep(p, dir_a, 1);
  CHECK(std::filesystem::exists(agg_a));
  CHECK(std::filesystem::exists(tmp.path / "a" / "protocol.json"));
  const auto cell0 = tmp.path / "a" / "cells" / "cell_000_d2s_a60deg_o5ms.json";
  const auto cell1 = tmp.path / "a" / "cells" / "cell_001_d2s_a90deg_o5ms.json";
  REQUIRE(std::filesystem::exists(cell0));
  REQUIRE(std::filesystem::exists(cell1));

  const std::string agg_text = slurp(agg_a);
  CHECK(agg_text.rfind("duration_s,angle_deg,offset_ms,method,n,", 0) == 0);
  // Header plus an epipolar and a correlation row per cell.
  CHECK(std::count(agg_text.begin(), agg_text.end(), '\n') == 5);
  CHECK(agg_text.find("epipolar") != std::string::npos);
  CHECK(agg_text.find("zncc-e") != std::string::npos);

  SUBCASE("parallel execution reproduces the serial bytes") {
    const std::string agg_b = run_sweep(p, dir_b, 2);
    CHECK(slurp(agg_b) == agg_text);
    CHECK(slurp(tmp.path / "b" / "cells" / "cell_000_d2s_a60deg_o5ms.json") == slurp(cell0));
    CHECK(slurp(tmp.path / "b" / "cells" / "cell_001_d2s_a90deg_o5ms.json") == slurp(cell1));
  }

  SUBCASE("valid cell files are trusted on rerun, corrupt ones are redone") {
    // Poison one number inside an otherwise valid cell file: the rerun must
    // skip the cell and carry the poison into the rebuilt aggregate.
    nlohmann::json cell = load_json_file(cell0.string());
    REQUIRE(cell.at("reps").at(0).contains("epipolar"));
    REQUIRE(cell.at("reps").at(0).at("epipolar").contains("t_d_error_ms"));
    cell["reps"][0]["epipolar"]["t_d_error_ms"] = 777.25;
    save_json_file(cell, cell0.string());
    std::filesystem::remove(agg_a);
    run_sweep(p, dir_a, 1);
    CHECK(slurp(agg_a).find("777.25") != std::string::npos);

    // A truncated cell file fails validation and is recomputed from scratch.
    std::ofstream(cell0, std::ios::binary) << "{ half a json";
    run_sweep(p, dir_a, 1);
    CHECK(slurp(agg_a) == agg_text);
  }

  SUBCASE("a different protocol cannot reuse the directory") {
    SweepProtocol other = p;
    other.offsets_ms = {50.0};
    CHECK_THROWS_WITH_AS(run_sweep(other, dir_a, 1), doctest::Contains("different protocol"),
                         ValidationError);
  }
}
