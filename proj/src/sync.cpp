#include "evsync/sync.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>

#include "evsync/errors.hpp"
#include "evsync/jsonio.hpp"
#include "evsync/util.hpp"

namespace evsync {

void SearchConfig::validate() const {
  if (t_begin_us >= t_end_us)
    throw ValidationError("search: t_begin_us must be smaller than t_end_us");
  if (coarse_step_us <= 0) throw ValidationError("search: coarse_step_us must be positive");
  if (refine_levels < 0 || refine_levels > 12)
    throw ValidationError("search: refine_levels must lie in [0, 12]");
  if (refine_factor < 2) throw ValidationError("search: refine_factor must be at least 2");
  if (min_step_us < 1) throw ValidationError("search: min_step_us must be at least 1");
  if (min_samples < 1) throw ValidationError("search: min_samples must be at least 1");
  if (max_gap_us <= 0) throw ValidationError("search: max_gap_us must be positive");
}

nlohmann::json search_config_to_json(const SearchConfig& cfg) {
  nlohmann::json j;
  j["t_begin_us"] = cfg.t_begin_us;
  j["t_end_us"] = cfg.t_end_us;
  j["coarse_step_us"] = cfg.coarse_step_us;
  j["refine_levels"] = cfg.refine_levels;
  j["refine_factor"] = cfg.refine_factor;
  j["min_step_us"] = cfg.min_step_us;
  j["min_samples"] = cfg.min_samples;
  j["symmetric_distance"] = cfg.symmetric_distance;
  j["seed"] = cfg.seed;
  j["max_gap_us"] = cfg.max_gap_us;
  return j;
}

SearchConfig search_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("search config must be a JSON object");
  SearchConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "t_begin_us") {
        cfg.t_begin_us = value.get<std::int64_t>();
      } else if (key == "t_end_us") {
        cfg.t_end_us = value.get<std::int64_t>();
      } else if (key == "coarse_step_us") {
        cfg.coarse_step_us = value.get<std::int64_t>();
      } else if (key == "refine_levels") {
        cfg.refine_levels = value.get<int>();
      } else if (key == "refine_factor") {
        cfg.refine_factor = value.get<int>();
      } else if (key == "min_step_us") {
        cfg.min_step_us = value.get<std::int64_t>();
      } else if (key == "min_samples") {
        cfg.min_samples = value.get<int>();
      } else if (key == "symmetric_distance") {
        cfg.symmetric_distance = value.get<bool>();
      } else if (key == "seed") {
        cfg.seed = value.get<std::uint64_t>();
      } else if (key == "max_gap_us") {
        cfg.max_gap_us = value.get<std::int64_t>();
      } else {
        throw ValidationError("search config: unknown key \"" + key + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("search config key \"" + key + "\": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

namespace {

constexpr double kTieTolerance = 1e-12;
constexpr std::size_t kFitCap = 512;  // pairs fed to the robust estimator per candidate

struct Sample {
  std::int64_t t_d = 0;
  double d = 0.0;
  int n = 0;
};

// Lexicographic (d, |t_d|, t_d): near-equal scores resolve to the offset
// closest to zero so plateaus pick a canonical winner.
bool better(const Sample& a, const Sample& b) {
  if (a.d < b.d - kTieTolerance) return true;
  if (a.d > b.d + kTieTolerance) return false;
  const std::int64_t aa = std::abs(a.t_d), ab = std::abs(b.t_d);
  if (aa != ab) return aa < ab;
  return a.t_d < b.t_d;
}

Sample best_of(const std::vector<Sample>& v) {
  const Sample* b = &v.front();
  for (const auto& s : v)
    if (better(s, *b)) b = &s;
  return *b;
}

std::vector<Correspondence> collect_pairs(const Trajectory2D& traj1, const Trajectory2D& traj2,
                                          std::int64_t t_d_us, std::int64_t max_gap_us) {
  std::vector<Correspondence> pairs;
  const auto span = overlap_span(traj1, traj2, t_d_us);
  if (!span) return pairs;
  for (const auto& pt : traj1.points) {
    if (!pt.valid || pt.t < span->first || pt.t > span->second) continue;
    const auto p2 = sample(traj2, pt.t + t_d_us, max_gap_us);
    if (!p2) continue;
    pairs.push_back({pt.point, *p2});
  }
  return pairs;
}

// Mean per-pair distance; samples sitting on an epipole are skipped.
std::optional<std::pair<double, int>> mean_distance(const FundamentalMatrix& f,
                                                    const std::vector<Correspondence>& pairs,
                                                    bool symmetric, int min_samples) {
  double sum = 0.0;
  int n = 0;
  for (const auto& c : pairs) {
    try {
      double d = point_line_distance(c.p2, epipolar_line_in_2(f, c.p1));
      if (symmetric) d = 0.5 * (d + point_line_distance(c.p1, epipolar_line_in_1(f, c.p2)));
      sum += d;
      ++n;
    } catch (const ComputationError&) {
      // epipole-degenerate sample
    }
  }
  if (n < min_samples) return std::nullopt;
  return std::make_pair(sum / n, n);
}

using Evaluator = std::function<std::optional<std::pair<double, int>>(std::int64_t)>;

struct SearchOutcome {
  Sample best;
  std::vector<std::vector<CurvePoint>> levels;
};

std::vector<CurvePoint> to_curve(std::vector<Sample> v) {
  std::sort(v.begin(), v.end(), [](const Sample& a, const Sample& b) { return a.t_d < b.t_d; });
  std::vector<CurvePoint> c;
  c.reserve(v.size());
  for (const auto& s : v) c.push_back({s.t_d, s.d, s.n});
  return c;
}

SearchOutcome run_search(const Evaluator& evaluate, const SearchConfig& cfg,
                         const std::function<std::string()>& no_valid_message) {
  auto eval_into = [&](std::int64_t t, std::vector<Sample>& dst) {
    const auto r = evaluate(t);
    if (r) dst.push_back({t, r->first, r->second});
    return r.has_value();
  };

  std::vector<Sample> coarse;
  for (std::int64_t t = cfg.t_begin_us; t <= cfg.t_end_us; t += cfg.coarse_step_us)
    eval_into(t, coarse);
  if (coarse.empty()) throw ComputationError(no_valid_message());
  Sample best = best_of(coarse);

  // A minimum on the first/last evaluated offset is not bracketed; widen once
  // per side by one coarse step before giving up.
  std::int64_t lo = cfg.t_begin_us;
  std::int64_t hi = cfg.t_begin_us +
                    (cfg.t_end_us - cfg.t_begin_us) / cfg.coarse_step_us * cfg.coarse_step_us;
  bool expanded_lo = false, expanded_hi = false;
  for (;;) {
    const auto boundary_error = [&](const char* side, std::int64_t at) {
      return ComputationError(
          fmt::format("search minimum stayed at the {} boundary ({} us) after widening once; "
                      "enlarge the search range",
                      side, at));
    };
    if (best.t_d <= lo) {
      if (expanded_lo) throw boundary_error("lower", best.t_d);
      expanded_lo = true;
      lo -= cfg.coarse_step_us;
      if (!eval_into(lo, coarse)) throw boundary_error("lower", best.t_d);
      best = best_of(coarse);
      continue;
    }
    if (best.t_d >= hi) {
      if (expanded_hi) throw boundary_error("upper", best.t_d);
      expanded_hi = true;
      hi += cfg.coarse_step_us;
      if (!eval_into(hi, coarse)) throw boundary_error("upper", best.t_d);
      best = best_of(coarse);
      continue;
    }
    break;
  }

  SearchOutcome out;
  out.levels.push_back(to_curve(coarse));

  std::int64_t step = cfg.coarse_step_us;
  for (int level = 0; level < cfg.refine_levels; ++level) {
    const std::int64_t next = std::max(step / cfg.refine_factor, cfg.min_step_us);
    if (next >= step) break;
    std::vector<Sample> fine;
    const std::int64_t half = step / next;
    for (std::int64_t k = -half; k <= half; ++k) eval_into(best.t_d + k * next, fine);
    if (!fine.empty()) {
      const Sample local = best_of(fine);  // k == 0 reproduces the incumbent
      if (better(local, best)) best = local;
      out.levels.push_back(to_curve(fine));
    }
    step = next;
  }
  out.best = best;
  return out;
}

}  // namespace

std::optional<std::pair<double, int>> average_epipolar_distance(const Trajectory2D& traj1,
                                                                const Trajectory2D& traj2,
                                                                const FundamentalMatrix& f,
                                                                std::int64_t t_d_us,
                                                                const SearchConfig& cfg) {
  const auto pairs = collect_pairs(traj1, traj2, t_d_us, cfg.max_gap_us);
  if (static_cast<int>(pairs.size()) < cfg.min_samples) return std::nullopt;
  return mean_distance(f, pairs, cfg.symmetric_distance, cfg.min_samples);
}

SyncResult sync_known(const Trajectory2D& traj1, const Trajectory2D& traj2,
                      const RigidExtrinsics& extrinsics, const SearchConfig& cfg) {
  cfg.validate();
  extrinsics.validate(false);
  if (traj1.points.empty() || traj2.points.empty())
    throw ValidationError("sync: both trajectories must be non-empty");

  const FundamentalMatrix f = compose_fundamental(traj1.camera, traj2.camera, extrinsics);
  const Evaluator ev = [&](std::int64_t t_d) {
    return average_epipolar_distance(traj1, traj2, f, t_d, cfg);
  };
  const auto out = run_search(ev, cfg, [] {
    return std::string(
        "no candidate offset matched enough trajectory samples inside the search range");
  });

  SyncResult res;
  res.t_d_star_us = out.best.t_d;
  res.d_avg_min = out.best.d;
  res.n_correspondences = out.best.n;
  res.fundamental = f;
  res.extrinsics = extrinsics;
  res.extrinsics.translation.normalize();
  res.mode = "known-extrinsics";
  res.curve = out.levels;
  res.config = cfg;
  return res;
}

SyncResult sync_unknown(const Trajectory2D& traj1, const Trajectory2D& traj2,
                        const SearchConfig& cfg) {
  cfg.validate();
  if (traj1.points.empty() || traj2.points.empty())
    throw ValidationError("sync: both trajectories must be non-empty");

  const int need = std::max(cfg.min_samples, 8);
  bool saw_degenerate = false;

  struct Fitted {
    LmedsEstimate est;
    std::vector<Correspondence> fit_pairs;
  };
  const auto fit_at = [&](const std::vector<Correspondence>& pairs, std::int64_t t_d) {
    Fitted out;
    const std::uint64_t seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(t_d));
    if (pairs.size() <= kFitCap) {
      out.fit_pairs = pairs;
    } else {
      out.fit_pairs.reserve(kFitCap);
      for (std::size_t i = 0; i < kFitCap; ++i)
        out.fit_pairs.push_back(pairs[i * pairs.size() / kFitCap]);
    }
    out.est = estimate_fundamental_lmeds(out.fit_pairs, seed);
    return out;
  };

  const Evaluator ev = [&](std::int64_t t_d) -> std::optional<std::pair<double, int>> {
    const auto pairs = collect_pairs(traj1, traj2, t_d, cfg.max_gap_us);
    if (static_cast<int>(pairs.size()) < need) return std::nullopt;
    FundamentalMatrix f;
    try {
      f = fit_at(pairs, t_d).est.f;
    } catch (const ComputationError&) {
      saw_degenerate = true;
      return std::nullopt;
    }
    return mean_distance(f, pairs, cfg.symmetric_distance, cfg.min_samples);
  };

  const auto out = run_search(ev, cfg, [&] {
    return std::string(saw_degenerate
                           ? "every candidate offset produced a degenerate pose estimate; the "
                             "image trajectories may be collinear"
                           : "no candidate offset matched enough trajectory samples inside the "
                             "search range");
  });

  // Re-derive the winning model (deterministic) and recover the pose from its
  // inlier correspondences.
  const auto pairs = collect_pairs(traj1, traj2, out.best.t_d, cfg.max_gap_us);
  const Fitted fitted = fit_at(pairs, out.best.t_d);
  std::vector<Correspondence> inliers;
  for (std::size_t i = 0; i < fitted.fit_pairs.size(); ++i)
    if (fitted.est.inliers[i]) inliers.push_back(fitted.fit_pairs[i]);

  SyncResult res;
  res.t_d_star_us = out.best.t_d;
  res.d_avg_min = out.best.d;
  res.n_correspondences = out.best.n;
  res.fundamental = fitted.est.f;
  res.extrinsics = decompose_to_extrinsics(fitted.est.f, traj1.camera, traj2.camera, inliers);
  res.mode = "estimated-extrinsics";
  res.curve = out.levels;
  res.config = cfg;
  return res;
}

void write_report(const SyncResult& result, const std::string& path) {
  nlohmann::json j;
  j["t_d_star_us"] = result.t_d_star_us;
  j["d_avg_min"] = result.d_avg_min;
  j["n_correspondences"] = result.n_correspondences;
  j["mode"] = result.mode;
  j["F"] = matrix_to_json(result.fundamental.m);
  if (result.mode == "estimated-extrinsics") {
    j["R"] = matrix_to_json(result.extrinsics.rotation);
    j["t"] = vector_to_json(result.extrinsics.translation);
  }
  j["config"] = search_config_to_json(result.config);
  save_json_file(j, path);
}

void write_curve(const SyncResult& result, const std::string& path) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "level,t_d_us,d_avg_px,n\n");
  for (std::size_t level = 0; level < result.curve.size(); ++level)
    for (const auto& p : result.curve[level])
      fmt::format_to(std::back_inserter(buf), "{},{},{},{}\n", level, p.t_d_us, p.d_avg_px, p.n);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed to write " + path);
}

}  // namespace evsync
