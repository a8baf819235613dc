#include "evsync/pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "evsync/errors.hpp"
#include "evsync/jsonio.hpp"
#include "evsync/util.hpp"

namespace evsync {

void PipelineConfig::validate() const {
  if (denoise_r_xy_px < 0) throw ValidationError("pipeline: denoise_r_xy_px must be >= 0");
  if (denoise_r_t_us < 0) throw ValidationError("pipeline: denoise_r_t_us must be >= 0");
  if (denoise_k_min < 0) throw ValidationError("pipeline: denoise_k_min must be >= 0");
  if (denoise_passes < 0 || denoise_passes > 16)
    throw ValidationError("pipeline: denoise_passes must lie in [0, 16]");
  if (window_us <= 0) throw ValidationError("pipeline: window_us must be positive");
  if (n_min < 1) throw ValidationError("pipeline: n_min must be at least 1");
  if (!(border_margin_px >= 0)) throw ValidationError("pipeline: border_margin_px must be >= 0");
  if (zncc_bin_us <= 0) throw ValidationError("pipeline: zncc_bin_us must be positive");
  search.validate();
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg) {
  nlohmann::json j;
  j["denoise_r_xy_px"] = cfg.denoise_r_xy_px;
  j["denoise_r_t_us"] = cfg.denoise_r_t_us;
  j["denoise_k_min"] = cfg.denoise_k_min;
  j["denoise_passes"] = cfg.denoise_passes;
  j["window_us"] = cfg.window_us;
  j["n_min"] = cfg.n_min;
  j["border_margin_px"] = cfg.border_margin_px;
  j["zncc_bin_us"] = cfg.zncc_bin_us;
  j["search"] = search_config_to_json(cfg.search);
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("pipeline config must be a JSON object");
  PipelineConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "denoise_r_xy_px") {
        cfg.denoise_r_xy_px = value.get<int>();
      } else if (key == "denoise_r_t_us") {
        cfg.denoise_r_t_us = value.get<std::int64_t>();
      } else if (key == "denoise_k_min") {
        cfg.denoise_k_min = value.get<int>();
      } else if (key == "denoise_passes") {
        cfg.denoise_passes = value.get<int>();
      } else if (key == "window_us") {
        cfg.window_us = value.get<std::int64_t>();
      } else if (key == "n_min") {
        cfg.n_min = value.get<int>();
      } else if (key == "border_margin_px") {
        cfg.border_margin_px = value.get<double>();
      } else if (key == "zncc_bin_us") {
        cfg.zncc_bin_us = value.get<std::int64_t>();
      } else if (key == "search") {
        cfg.search = search_config_from_json(value);
      } else {
        throw ValidationError("pipeline config: unknown key \"" + key + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("pipeline config key \"" + key + "\": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

Trajectory2D preprocess(const EventStream& s, const PipelineConfig& cfg) {
  cfg.validate();
  if (cfg.denoise_passes == 0)
    return extract_centroids(s, cfg.window_us, cfg.n_min, cfg.border_margin_px);
  EventStream cur = denoise_radius(s, cfg.denoise_r_xy_px, cfg.denoise_r_t_us, cfg.denoise_k_min);
  for (int i = 1; i < cfg.denoise_passes; ++i)
    cur = denoise_radius(cur, cfg.denoise_r_xy_px, cfg.denoise_r_t_us, cfg.denoise_k_min);
  return extract_centroids(cur, cfg.window_us, cfg.n_min, cfg.border_margin_px);
}

SyncOutputs run_sync(const EventStream& s1, const EventStream& s2, const PipelineConfig& cfg,
                     const std::optional<RigidExtrinsics>& extrinsics) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  SyncOutputs out;

  const auto t0 = clock::now();
  out.traj1 = preprocess(s1, cfg);
  out.traj2 = preprocess(s2, cfg);
  const auto t1 = clock::now();
  out.result = extrinsics ? sync_known(out.traj1, out.traj2, *extrinsics, cfg.search)
                          : sync_unknown(out.traj1, out.traj2, cfg.search);
  const auto t2 = clock::now();

  out.preprocess_seconds = std::chrono::duration<double>(t1 - t0).count();
  out.search_seconds = std::chrono::duration<double>(t2 - t1).count();
  return out;
}

void write_sync_outputs(const SyncOutputs& outputs, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  const auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

  write_report(outputs.result, path("report.json"));
  write_curve(outputs.result, path("curve.csv"));
  save_trajectory(outputs.traj1, path("trajectory1.csv"));
  save_trajectory(outputs.traj2, path("trajectory2.csv"));

  nlohmann::json timing;
  timing["wall_seconds"] = {{"preprocess", outputs.preprocess_seconds},
                            {"search", outputs.search_seconds},
                            {"total", outputs.preprocess_seconds + outputs.search_seconds}};
  save_json_file(timing, path("timing.json"));
}

BaselineOutputs run_baseline(const EventStream& s1, const EventStream& s2,
                             const PipelineConfig& cfg) {
  cfg.validate();
  const RateSignal r1 = event_rate(s1, cfg.zncc_bin_us);
  const RateSignal r2 = event_rate(s2, cfg.zncc_bin_us);
  BaselineOutputs out;
  out.offset = zncc_offset(r1, r2, cfg.search.t_begin_us, cfg.search.t_end_us);
  out.bin_width_us = cfg.zncc_bin_us;
  return out;
}

void write_baseline_report(const BaselineOutputs& b, const PipelineConfig& cfg,
                           const std::string& path) {
  nlohmann::json j;
  j["t_d_star_us"] = b.offset.offset_us;
  j["peak_score"] = b.offset.peak_score;
  j["bin_width_us"] = b.bin_width_us;
  j["mode"] = "zncc-baseline";
  j["config"] = pipeline_config_to_json(cfg);
  save_json_file(j, path);
}

namespace {

std::optional<Eigen::Vector3d> lerp_path(const Path3D& path, std::int64_t t_us) {
  if (path.times_us.empty() || t_us < path.times_us.front() || t_us > path.times_us.back())
    return std::nullopt;
  const auto it = std::lower_bound(path.times_us.begin(), path.times_us.end(), t_us);
  const std::size_t hi = static_cast<std::size_t>(it - path.times_us.begin());
  if (path.times_us[hi] == t_us) return path.positions[hi];
  const std::size_t lo = hi - 1;
  const double w = static_cast<double>(t_us - path.times_us[lo]) /
                   static_cast<double>(path.times_us[hi] - path.times_us[lo]);
  return (1.0 - w) * path.positions[lo] + w * path.positions[hi];
}

}  // namespace

EvaluationReport evaluate_report(const nlohmann::json& report, const GroundTruthSummary& truth,
                                 const std::optional<Trajectory2D>& traj1,
                                 const std::optional<Trajectory2D>& traj2,
                                 const std::optional<Path3D>& path3d,
                                 const std::optional<nlohmann::json>& timing) {
  if (!report.contains("t_d_star_us") || !report.at("t_d_star_us").is_number())
    throw ValidationError("report is missing a numeric t_d_star_us");
  const std::int64_t t_star = report.at("t_d_star_us").get<std::int64_t>();

  EvaluationReport out;
  out.t_d_error_ms =
      static_cast<double>(std::abs(t_star - truth.injected_offset_us)) / 1000.0;

  std::optional<RigidExtrinsics> est;
  if (report.contains("R") && report.contains("t")) {
    RigidExtrinsics e;
    e.rotation = matrix_from_json(report.at("R"));
    e.translation = vector_from_json(report.at("t"));
    e.validate(false);
    est = e;
    out.rotation_error_deg = rotation_error_deg(e.rotation, truth.relative.rotation);
    out.translation_direction_error_deg =
        direction_error_deg(e.translation, truth.relative.translation);
  }

  if (traj1 && traj2 && path3d) {
    std::int64_t max_gap_us = 20'000;
    if (report.contains("config") && report.at("config").contains("max_gap_us"))
      max_gap_us = report.at("config").at("max_gap_us").get<std::int64_t>();
    const RigidExtrinsics pose1;  // camera 1 anchors the reconstruction frame
    const RigidExtrinsics pose2 = est ? *est : truth.relative;

    std::vector<Eigen::Vector3d> estimated, target;
    if (const auto span = overlap_span(*traj1, *traj2, t_star)) {
      for (const auto& pt : traj1->points) {
        if (!pt.valid || pt.t < span->first || pt.t > span->second) continue;
        const auto p2 = sample(*traj2, pt.t + t_star, max_gap_us);
        if (!p2) continue;
        const auto tgt = lerp_path(*path3d, pt.t);
        if (!tgt) continue;
        try {
          estimated.push_back(
              triangulate(traj1->camera, pose1, traj2->camera, pose2, {pt.point, *p2}));
          target.push_back(*tgt);
        } catch (const ComputationError&) {
          // skip ill-conditioned points
        }
      }
    }
    if (estimated.size() < 3)
      throw ComputationError("too few triangulated points for trajectory alignment");
    out.trajectory_rmse = umeyama_align(estimated, target).rmse;
  }

  if (timing) out.runtime = *timing;
  return out;
}

nlohmann::json evaluation_to_json(const EvaluationReport& report) {
  nlohmann::json j;
  j["t_d_error_ms"] = report.t_d_error_ms;
  if (report.rotation_error_deg) j["rotation_error_deg"] = *report.rotation_error_deg;
  if (report.translation_direction_error_deg)
    j["translation_direction_error_deg"] = *report.translation_direction_error_deg;
  if (report.trajectory_rmse) j["trajectory_rmse"] = *report.trajectory_rmse;
  if (report.runtime) j["runtime"] = *report.runtime;
  return j;
}

void SweepProtocol::validate() const {
  if (durations_s.empty() || view_angles_deg.empty() || offsets_ms.empty())
    throw ValidationError("sweep: durations_s, view_angles_deg and offsets_ms must be non-empty");
  for (double d : durations_s)
    if (!(d > 0) || !std::isfinite(d))
      throw ValidationError("sweep: every duration must be positive");
  for (double a : view_angles_deg)
    if (!(a > 0) || !(a < 180))
      throw ValidationError("sweep: every view angle must lie in (0, 180)");
  for (double o : offsets_ms)
    if (!std::isfinite(o)) throw ValidationError("sweep: non-finite offset");
  if (repetitions < 1) throw ValidationError("sweep: repetitions must be at least 1");
  scenario.validate();
  pipeline.validate();
}

nlohmann::json sweep_protocol_to_json(const SweepProtocol& protocol) {
  nlohmann::json j;
  j["durations_s"] = protocol.durations_s;
  j["view_angles_deg"] = protocol.view_angles_deg;
  j["offsets_ms"] = protocol.offsets_ms;
  j["repetitions"] = protocol.repetitions;
  j["seed"] = protocol.seed;
  j["scenario"] = scenario_config_to_json(protocol.scenario);
  j["pipeline"] = pipeline_config_to_json(protocol.pipeline);
  return j;
}

SweepProtocol sweep_protocol_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("sweep protocol must be a JSON object");
  SweepProtocol p;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "durations_s") {
        p.durations_s = value.get<std::vector<double>>();
      } else if (key == "view_angles_deg") {
        p.view_angles_deg = value.get<std::vector<double>>();
      } else if (key == "offsets_ms") {
        p.offsets_ms = value.get<std::vector<double>>();
      } else if (key == "repetitions") {
        p.repetitions = value.get<int>();
      } else if (key == "seed") {
        p.seed = value.get<std::uint64_t>();
      } else if (key == "scenario") {
        p.scenario = scenario_config_from_json(value);
      } else if (key == "pipeline") {
        p.pipeline = pipeline_config_from_json(value);
      } else {
        throw ValidationError("sweep protocol: unknown key \"" + key + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("sweep protocol key \"" + key + "\": " + e.what());
    }
  }
  p.validate();
  return p;
}

namespace {

struct CellSpec {
  std::size_t index = 0;
  double duration_s = 0;
  double angle_deg = 0;
  double offset_ms = 0;
};

std::vector<CellSpec> enumerate_cells(const SweepProtocol& p) {
  std::vector<CellSpec> cells;
  std::size_t idx = 0;
  for (double d : p.durations_s)
    for (double a : p.view_angles_deg)
      for (double o : p.offsets_ms) cells.push_back({idx++, d, a, o});
  return cells;
}

std::string protocol_hash_hex(const SweepProtocol& p) {
  const std::string dump = sweep_protocol_to_json(p).dump();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return fmt::format("{:016x}", h);
}

std::string cell_file_name(const CellSpec& c) {
  return fmt::format("cell_{:03}_d{}s_a{}deg_o{}ms.json", c.index, c.duration_s, c.angle_deg,
                     c.offset_ms);
}

nlohmann::json run_cell(const SweepProtocol& protocol, const CellSpec& cell,
                        const std::string& hash) {
  nlohmann::json reps = nlohmann::json::array();
  for (int rep = 0; rep < protocol.repetitions; ++rep) {
    const std::uint64_t run_seed =
        mix_seed(mix_seed(protocol.seed, cell.index), static_cast<std::uint64_t>(rep));
    nlohmann::json r;
    r["seed"] = run_seed;
    ScenarioConfig sc = protocol.scenario;
    sc.seed = run_seed;
    sc.duration_s = cell.duration_s;
    sc.view_angle_deg = cell.angle_deg;
    sc.injected_offset_us = std::llround(cell.offset_ms * 1000.0);
    try {
      const Scenario scen = make_scenario(sc);
      try {
        PipelineConfig pc = protocol.pipeline;
        pc.search.seed = mix_seed(run_seed, 7);
        const SyncOutputs out = run_sync(scen.stream1, scen.stream2, pc, std::nullopt);
        nlohmann::json e;
        e["t_d_error_ms"] =
            static_cast<double>(
                std::abs(out.result.t_d_star_us - scen.truth.injected_offset_us)) /
            1000.0;
        e["rotation_error_deg"] =
            rotation_error_deg(out.result.extrinsics.rotation, scen.truth.relative.rotation);
        e["direction_error_deg"] = direction_error_deg(out.result.extrinsics.translation,
                                                        scen.truth.relative.translation);
        r["epipolar"] = e;
      } catch (const std::exception& ex) {
        r["epipolar"] = nlohmann::json{{"error", ex.what()}};
      }
      try {
        const BaselineOutputs b = run_baseline(scen.stream1, scen.stream2, protocol.pipeline);
        r["zncc"] = nlohmann::json{
            {"t_d_error_ms",
             static_cast<double>(std::abs(b.offset.offset_us - scen.truth.injected_offset_us)) /
                 1000.0}};
      } catch (const std::exception& ex) {
        r["zncc"] = nlohmann::json{{"error", ex.what()}};
      }
    } catch (const std::exception& ex) {
      r["error"] = ex.what();  // scenario generation failed; both methods unavailable
    }
    reps.push_back(std::move(r));
  }
  nlohmann::json cell_json;
  cell_json["protocol_hash"] = hash;
  cell_json["cell_index"] = cell.index;
  cell_json["duration_s"] = cell.duration_s;
  cell_json["angle_deg"] = cell.angle_deg;
  cell_json["offset_ms"] = cell.offset_ms;
  cell_json["reps"] = std::move(reps);
  return cell_json;
}

bool cell_file_valid(const std::string& path, const CellSpec& cell, const std::string& hash,
                     int repetitions) {
  if (!std::filesystem::exists(path)) return false;
  nlohmann::json j;
  try {
    j = load_json_file(path);
  } catch (const std::exception&) {
    return false;
  }
  return j.is_object() && j.value("protocol_hash", std::string()) == hash &&
         j.contains("cell_index") && j.at("cell_index") == cell.index &&
         j.contains("duration_s") && j.at("duration_s") == cell.duration_s &&
         j.contains("angle_deg") && j.at("angle_deg") == cell.angle_deg &&
         j.contains("offset_ms") && j.at("offset_ms") == cell.offset_ms &&
         j.contains("reps") && j.at("reps").is_array() &&
         j.at("reps").size() == static_cast<std::size_t>(repetitions);
}

struct MethodStats {
  int n = 0;
  double t_d_mean = 0, t_d_std = 0;
  double rot_mean = 0, rot_std = 0;
  double dir_mean = 0, dir_std = 0;
  bool complete = false;
  bool has_pose = false;
};

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() == 1) return {mean, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

MethodStats collect_stats(const nlohmann::json& cell_json, const char* method, int repetitions,
                          bool has_pose) {
  std::vector<double> t_d, rot, dir;
  for (const auto& rep : cell_json.at("reps")) {
    if (rep.contains("error")) continue;
    if (!rep.contains(method)) continue;
    const auto& m = rep.at(method);
    if (m.contains("error")) continue;
    t_d.push_back(m.at("t_d_error_ms").get<double>());
    if (has_pose) {
      rot.push_back(m.at("rotation_error_deg").get<double>());
      dir.push_back(m.at("direction_error_deg").get<double>());
    }
  }
  MethodStats s;
  s.n = static_cast<int>(t_d.size());
  s.complete = s.n == repetitions;
  s.has_pose = has_pose;
  // Incomplete cells poison the aggregate loudly rather than silently
  // averaging over fewer runs.
  const auto fill = [&](const std::vector<double>& v, double& mean, double& sd) {
    if (!s.complete) {
      mean = std::nan("");
      sd = std::nan("");
      return;
    }
    std::tie(mean, sd) = mean_std(v);
  };
  fill(t_d, s.t_d_mean, s.t_d_std);
  if (has_pose) {
    fill(rot, s.rot_mean, s.rot_std);
    fill(dir, s.dir_mean, s.dir_std);
  }
  return s;
}

}  // namespace

std::string run_sweep(const SweepProtocol& protocol, const std::string& out_dir, int workers) {
  namespace fs = std::filesystem;
  protocol.validate();
  if (workers < 1) throw ValidationError("sweep: workers must be at least 1");

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "cells", ec);
  if (ec) throw IoError("cannot create sweep directory " + out_dir + ": " + ec.message());

  const std::string hash = protocol_hash_hex(protocol);
  const std::string protocol_path = (fs::path(out_dir) / "protocol.json").string();
  if (fs::exists(protocol_path)) {
    const nlohmann::json existing = load_json_file(protocol_path);
    if (existing.value("hash", std::string()) != hash)
      throw ValidationError(
          "sweep output directory was produced with a different protocol; use a fresh "
          "directory or the original protocol");
  } else {
    nlohmann::json pj;
    pj["hash"] = hash;
    pj["protocol"] = sweep_protocol_to_json(protocol);
    save_json_file(pj, protocol_path);
  }

  const std::vector<CellSpec> cells = enumerate_cells(protocol);
  std::vector<std::string> cell_paths(cells.size());
  std::vector<const CellSpec*> todo;
  for (const auto& cell : cells) {
    cell_paths[cell.index] = (fs::path(out_dir) / "cells" / cell_file_name(cell)).string();
    if (!cell_file_valid(cell_paths[cell.index], cell, hash, protocol.repetitions))
      todo.push_back(&cell);
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  const auto worker = [&]() {
    for (;;) {
      if (failed.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      const CellSpec& cell = *todo[i];
      try {
        const nlohmann::json cell_json = run_cell(protocol, cell, hash);
        const std::string tmp = cell_paths[cell.index] + ".tmp";
        save_json_file(cell_json, tmp);
        fs::rename(tmp, cell_paths[cell.index]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  const int n_threads = std::min<int>(workers, static_cast<int>(std::max<std::size_t>(todo.size(), 1)));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n_threads));
  for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);

  // Deterministic aggregation in cell order, independent of execution order.
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf),
                 "duration_s,angle_deg,offset_ms,method,n,t_d_error_mean_ms,t_d_error_std_ms,"
                 "rotation_error_mean_deg,rotation_error_std_deg,direction_error_mean_deg,"
                 "direction_error_std_deg\n");
  for (const auto& cell : cells) {
    const nlohmann::json cell_json = load_json_file(cell_paths[cell.index]);
    const MethodStats epi = collect_stats(cell_json, "epipolar", protocol.repetitions, true);
    const MethodStats zncc = collect_stats(cell_json, "zncc", protocol.repetitions, false);
    fmt::format_to(std::back_inserter(buf), "{},{},{},epipolar,{},{},{},{},{},{},{}\n",
                   cell.duration_s, cell.angle_deg, cell.offset_ms, epi.n, epi.t_d_mean,
                   epi.t_d_std, epi.rot_mean, epi.rot_std, epi.dir_mean, epi.dir_std);
    fmt::format_to(std::back_inserter(buf), "{},{},{},zncc-e,{},{},{},,,,\n", cell.duration_s,
                   cell.angle_deg, cell.offset_ms, zncc.n, zncc.t_d_mean, zncc.t_d_std);
  }

  const std::string aggregate_path = (fs::path(out_dir) / "aggregate.csv").string();
  std::ofstream out(aggregate_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + aggregate_path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed to write " + aggregate_path);
  out.close();
  return aggregate_path;
}

}  // namespace evsync
