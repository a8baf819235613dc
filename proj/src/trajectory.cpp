#include "evsync/trajectory.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "evsync/errors.hpp"

namespace evsync {

Trajectory2D extract_centroids(const EventStream& s, std::int64_t window_us, int n_min,
                               double border_margin_px) {
  if (window_us <= 0) throw ValidationError("centroid extraction: window must be positive");
  if (n_min < 1) throw ValidationError("centroid extraction: n_min must be >= 1");
  if (border_margin_px < 0) throw ValidationError("centroid extraction: negative border margin");

  Trajectory2D traj;
  traj.camera = s.camera;
  traj.window_us = window_us;
  if (s.events.empty()) return traj;

  const auto undistorted = undistort_events(s);
  const std::int64_t t_start = s.events.front().t;
  const std::int64_t t_last = s.events.back().t;
  const std::size_t n_windows = static_cast<std::size_t>((t_last - t_start) / window_us) + 1;

  std::vector<double> sum_u(n_windows, 0.0), sum_v(n_windows, 0.0);
  std::vector<int> count(n_windows, 0);
  for (const UndistortedEvent& e : undistorted) {
    const std::size_t k = static_cast<std::size_t>((e.t - t_start) / window_us);
    sum_u[k] += e.point.x();
    sum_v[k] += e.point.y();
    count[k]++;
  }

  const double u_lo = border_margin_px, u_hi = s.camera.width - 1 - border_margin_px;
  const double v_lo = border_margin_px, v_hi = s.camera.height - 1 - border_margin_px;

  traj.points.reserve(n_windows);
  for (std::size_t k = 0; k < n_windows; ++k) {
    TrajectoryPoint p;
    p.t = t_start + static_cast<std::int64_t>(k) * window_us + window_us / 2;
    p.n_events = count[k];
    if (count[k] > 0) {
      p.point = {sum_u[k] / count[k], sum_v[k] / count[k]};
      p.valid = count[k] >= n_min && p.point.x() >= u_lo && p.point.x() <= u_hi &&
                p.point.y() >= v_lo && p.point.y() <= v_hi;
    }
    traj.points.push_back(p);
  }
  return traj;
}

std::optional<PixelPoint> sample(const Trajectory2D& traj, std::int64_t t_us,
                                 std::int64_t max_gap_us) {
  if (max_gap_us <= 0) throw ValidationError("sample: max_gap must be positive");
  const auto& pts = traj.points;
  if (pts.empty()) return std::nullopt;

  const auto it = std::lower_bound(pts.begin(), pts.end(), t_us,
                                   [](const TrajectoryPoint& p, std::int64_t t) { return p.t < t; });
  // Nearest valid bracket on each side; invalid points are skipped so short
  // dropouts are bridged, subject to the gap limit.
  std::ptrdiff_t hi = it - pts.begin();
  while (hi < static_cast<std::ptrdiff_t>(pts.size()) && !pts[hi].valid) ++hi;
  if (hi == static_cast<std::ptrdiff_t>(pts.size())) return std::nullopt;
  if (pts[hi].t == t_us) return pts[hi].point;

  std::ptrdiff_t lo = (it - pts.begin()) - 1;
  while (lo >= 0 && !pts[lo].valid) --lo;
  if (lo < 0) return std::nullopt;

  if (pts[hi].t - pts[lo].t > max_gap_us) return std::nullopt;
  const double a = static_cast<double>(t_us - pts[lo].t) / static_cast<double>(pts[hi].t - pts[lo].t);
  return PixelPoint((1.0 - a) * pts[lo].point + a * pts[hi].point);
}

std::optional<std::pair<std::int64_t, std::int64_t>> overlap_span(const Trajectory2D& traj1,
                                                                  const Trajectory2D& traj2,
                                                                  std::int64_t t_d_us) {
  if (traj1.points.empty() || traj2.points.empty()) return std::nullopt;
  const std::int64_t begin = std::max(traj1.points.front().t, traj2.points.front().t - t_d_us);
  const std::int64_t end = std::min(traj1.points.back().t, traj2.points.back().t - t_d_us);
  if (begin > end) return std::nullopt;
  return std::make_pair(begin, end);
}

void save_trajectory(const Trajectory2D& traj, const std::string& path) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "t_us,u,v,n_events,valid\n");
  for (const TrajectoryPoint& p : traj.points)
    fmt::format_to(std::back_inserter(buf), "{},{},{},{},{}\n", p.t, p.point.x(), p.point.y(),
                   p.n_events, p.valid ? 1 : 0);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write trajectory file: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Trajectory2D load_trajectory(const std::string& path, const CameraModel& camera) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trajectory file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  Trajectory2D traj;
  traj.camera = camera;

  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line(text.data() + pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = eol + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != "t_us,u,v,n_events,valid")
        throw ValidationError(
            fmt::format("parse error at line 1: unexpected trajectory header '{}'",
                        std::string(line)));
      continue;
    }
    if (line.empty()) continue;

    std::string_view fields[5];
    std::size_t start = 0;
    int nf = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        if (nf < 5) fields[nf] = line.substr(start, i - start);
        ++nf;
        start = i + 1;
      }
    }
    if (nf != 5)
      throw ValidationError(fmt::format("parse error at line {}: expected 5 fields", line_no));

    auto to_i64 = [&](std::string_view f) {
      std::int64_t v = 0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size())
        throw ValidationError(fmt::format("parse error at line {}: bad integer", line_no));
      return v;
    };
    auto to_f64 = [&](std::string_view f) {
      double v = 0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size())
        throw ValidationError(fmt::format("parse error at line {}: bad number", line_no));
      return v;
    };

    TrajectoryPoint p;
    p.t = to_i64(fields[0]);
    p.point = {to_f64(fields[1]), to_f64(fields[2])};
    p.n_events = static_cast<int>(to_i64(fields[3]));
    const std::int64_t valid = to_i64(fields[4]);
    if (valid != 0 && valid != 1)
      throw ValidationError(fmt::format("parse error at line {}: valid must be 0 or 1", line_no));
    p.valid = valid == 1;
    if (!traj.points.empty() && p.t <= traj.points.back().t)
      throw ValidationError(fmt::format("non-increasing timestamp at line {}", line_no));
    traj.points.push_back(p);
  }
  if (line_no == 0) throw ValidationError("parse error at line 1: missing header");

  std::int64_t min_gap = 0;
  for (std::size_t i = 1; i < traj.points.size(); ++i) {
    const std::int64_t gap = traj.points[i].t - traj.points[i - 1].t;
    if (min_gap == 0 || gap < min_gap) min_gap = gap;
  }
  traj.window_us = min_gap;
  return traj;
}

}  // namespace evsync
