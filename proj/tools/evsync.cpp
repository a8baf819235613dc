#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "evsync/errors.hpp"
#include "evsync/jsonio.hpp"
#include "evsync/pipeline.hpp"

namespace {

evsync::RigidExtrinsics load_extrinsics_file(const std::string& path) {
  const nlohmann::json j = evsync::load_json_file(path);
  evsync::RigidExtrinsics ext;
  try {
    ext.rotation = evsync::matrix_from_json(j.at("R"));
    ext.translation = evsync::vector_from_json(j.at("t"));
  } catch (const nlohmann::json::exception& e) {
    throw evsync::ValidationError("extrinsics file " + path + ": " + e.what());
  }
  ext.validate(false);
  return ext;
}

std::string join_path(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal synchronization of two event-camera streams via epipolar consistency"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic two-camera event recording");
  std::string sim_config, sim_out;
  std::uint64_t sim_seed = 0;
  sim->add_option("--config", sim_config, "Scenario config JSON (defaults when omitted)");
  sim->add_option("--out", sim_out, "Output directory")->required();
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "Override the scenario seed");

  // sync
  auto* sync = app.add_subcommand("sync", "Estimate the inter-camera time offset (and pose)");
  std::string sy_events1, sy_events2, sy_camera1, sy_camera2, sy_config, sy_extrinsics, sy_out;
  std::uint64_t sy_seed = 0;
  sync->add_option("--events1", sy_events1, "Camera-1 event CSV")->required();
  sync->add_option("--events2", sy_events2, "Camera-2 event CSV")->required();
  sync->add_option("--camera1", sy_camera1, "Camera-1 intrinsics JSON")->required();
  sync->add_option("--camera2", sy_camera2, "Camera-2 intrinsics JSON")->required();
  sync->add_option("--config", sy_config, "Pipeline config JSON (defaults when omitted)");
  sync->add_option("--extrinsics", sy_extrinsics,
                   "Relative pose JSON {R, t}; enables the known-pose algorithm");
  sync->add_option("--out", sy_out, "Output directory")->required();
  auto* sy_seed_opt = sync->add_option("--seed", sy_seed, "Override the search seed");

  // baseline
  auto* base = app.add_subcommand("baseline", "Event-rate correlation baseline offset estimate");
  std::string ba_events1, ba_events2, ba_camera1, ba_camera2, ba_config, ba_out;
  base->add_option("--events1", ba_events1, "Camera-1 event CSV")->required();
  base->add_option("--events2", ba_events2, "Camera-2 event CSV")->required();
  base->add_option("--camera1", ba_camera1, "Camera-1 intrinsics JSON")->required();
  base->add_option("--camera2", ba_camera2, "Camera-2 intrinsics JSON")->required();
  base->add_option("--config", ba_config, "Pipeline config JSON (defaults when omitted)");
  base->add_option("--out", ba_out, "Output directory")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score a report against ground truth");
  std::string ev_report, ev_truth, ev_traj1, ev_traj2, ev_camera1, ev_camera2, ev_traj3d,
      ev_timing, ev_out;
  eval->add_option("--report", ev_report, "Sync or baseline report JSON")->required();
  eval->add_option("--ground-truth", ev_truth, "Ground-truth JSON")->required();
  eval->add_option("--traj1", ev_traj1, "Extracted camera-1 trajectory CSV");
  eval->add_option("--traj2", ev_traj2, "Extracted camera-2 trajectory CSV");
  eval->add_option("--camera1", ev_camera1, "Camera-1 intrinsics JSON (required with --traj1)");
  eval->add_option("--camera2", ev_camera2, "Camera-2 intrinsics JSON (required with --traj2)");
  eval->add_option("--traj3d", ev_traj3d, "True 3-D path CSV (t_us,x,y,z)");
  eval->add_option("--timing", ev_timing, "timing.json sidecar to echo into the report");
  eval->add_option("--out", ev_out, "Output directory")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run a scenario matrix and aggregate the errors");
  std::string sw_config, sw_out;
  std::uint64_t sw_seed = 0;
  int sw_workers = 1;
  sweep->add_option("--config", sw_config, "Sweep protocol JSON")->required();
  sweep->add_option("--out", sw_out, "Output directory")->required();
  auto* sw_seed_opt = sweep->add_option("--seed", sw_seed, "Override the protocol seed");
  sweep->add_option("--workers", sw_workers, "Worker threads for sweep cells")
      ->envname("EVSYNC_WORKERS")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) {
      evsync::ScenarioConfig cfg;
      if (!sim_config.empty())
        cfg = evsync::scenario_config_from_json(evsync::load_json_file(sim_config));
      if (sim_seed_opt->count() > 0) cfg.seed = sim_seed;
      const evsync::Scenario scenario = evsync::make_scenario(cfg);
      evsync::write_scenario(scenario, sim_out);
      fmt::print("{}\n", join_path(sim_out, "manifest.json"));
      return 0;
    }

    if (sync->parsed()) {
      const evsync::CameraModel cam1 = evsync::load_camera(sy_camera1);
      const evsync::CameraModel cam2 = evsync::load_camera(sy_camera2);
      const evsync::EventStream s1 = evsync::load_events(sy_events1, cam1);
      const evsync::EventStream s2 = evsync::load_events(sy_events2, cam2);
      evsync::PipelineConfig cfg;
      if (!sy_config.empty())
        cfg = evsync::pipeline_config_from_json(evsync::load_json_file(sy_config));
      if (sy_seed_opt->count() > 0) cfg.search.seed = sy_seed;
      std::optional<evsync::RigidExtrinsics> ext;
      if (!sy_extrinsics.empty()) ext = load_extrinsics_file(sy_extrinsics);
      const evsync::SyncOutputs out = evsync::run_sync(s1, s2, cfg, ext);
      evsync::write_sync_outputs(out, sy_out);
      fmt::print("t_d_star_us={} d_avg_px={} mode={}\n", out.result.t_d_star_us,
                 out.result.d_avg_min, out.result.mode);
      return 0;
    }

    if (base->parsed()) {
      const evsync::CameraModel cam1 = evsync::load_camera(ba_camera1);
      const evsync::CameraModel cam2 = evsync::load_camera(ba_camera2);
      const evsync::EventStream s1 = evsync::load_events(ba_events1, cam1);
      const evsync::EventStream s2 = evsync::load_events(ba_events2, cam2);
      evsync::PipelineConfig cfg;
      if (!ba_config.empty())
        cfg = evsync::pipeline_config_from_json(evsync::load_json_file(ba_config));
      const evsync::BaselineOutputs out = evsync::run_baseline(s1, s2, cfg);
      std::error_code ec;
      std::filesystem::create_directories(ba_out, ec);
      if (ec) throw evsync::IoError("cannot create output directory " + ba_out);
      evsync::write_baseline_report(out, cfg, join_path(ba_out, "report.json"));
      fmt::print("t_d_star_us={} peak_score={}\n", out.offset.offset_us, out.offset.peak_score);
      return 0;
    }

    if (eval->parsed()) {
      const bool any_traj = !ev_traj1.empty() || !ev_traj2.empty() || !ev_traj3d.empty();
      if (any_traj && (ev_traj1.empty() || ev_traj2.empty() || ev_traj3d.empty()))
        throw evsync::ValidationError(
            "trajectory evaluation needs --traj1, --traj2 and --traj3d together");
      if (!ev_traj1.empty() && (ev_camera1.empty() || ev_camera2.empty()))
        throw evsync::ValidationError(
            "trajectory evaluation needs --camera1 and --camera2 for the trajectory files");

      const nlohmann::json report = evsync::load_json_file(ev_report);
      const evsync::GroundTruthSummary truth = evsync::load_ground_truth(ev_truth);
      std::optional<evsync::Trajectory2D> traj1, traj2;
      std::optional<evsync::Path3D> path3d;
      if (!ev_traj1.empty()) {
        traj1 = evsync::load_trajectory(ev_traj1, evsync::load_camera(ev_camera1));
        traj2 = evsync::load_trajectory(ev_traj2, evsync::load_camera(ev_camera2));
        path3d = evsync::load_path3d(ev_traj3d);
      }
      std::optional<nlohmann::json> timing;
      if (!ev_timing.empty()) timing = evsync::load_json_file(ev_timing);

      const evsync::EvaluationReport result =
          evsync::evaluate_report(report, truth, traj1, traj2, path3d, timing);
      std::error_code ec;
      std::filesystem::create_directories(ev_out, ec);
      if (ec) throw evsync::IoError("cannot create output directory " + ev_out);
      evsync::save_json_file(evsync::evaluation_to_json(result),
                             join_path(ev_out, "evaluation.json"));
      fmt::print("t_d_error_ms={}\n", result.t_d_error_ms);
      return 0;
    }

    if (sweep->parsed()) {
      evsync::SweepProtocol protocol =
          evsync::sweep_protocol_from_json(evsync::load_json_file(sw_config));
      if (sw_seed_opt->count() > 0) protocol.seed = sw_seed;
      const std::string aggregate = evsync::run_sweep(protocol, sw_out, sw_workers);
      fmt::print("{}\n", aggregate);
      return 0;
    }
  } catch (const evsync::ValidationError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const evsync::ComputationError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const evsync::IoError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
