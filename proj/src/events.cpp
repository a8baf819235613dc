#include "evsync/events.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <sstream>

#include "evsync/errors.hpp"

namespace evsync {

namespace {

constexpr const char* kHeader = "t_us,x,y,p";

std::int64_t parse_int(std::string_view field, std::size_t line_no, const char* what) {
  std::int64_t value = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw ValidationError(fmt::format("parse error at line {}: bad {} field '{}'", line_no, what,
                                      std::string(field)));
  return value;
}

}  // namespace

EventStream load_events(const std::string& path, const CameraModel& camera) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  EventStream stream;
  stream.camera = camera;

  std::size_t pos = 0;
  std::size_t line_no = 0;
  std::int64_t prev_t = -1;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line(text.data() + pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = eol + 1;
    ++line_no;

    if (line_no == 1) {
      if (line != kHeader)
        throw ValidationError(
            fmt::format("parse error at line 1: expected header '{}', got '{}'", kHeader,
                        std::string(line)));
      continue;
    }
    if (line.empty()) continue;

    std::string_view fields[4];
    std::size_t start = 0;
    int nf = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        if (nf < 4) fields[nf] = line.substr(start, i - start);
        ++nf;
        start = i + 1;
      }
    }
    if (nf != 4)
      throw ValidationError(fmt::format("parse error at line {}: expected 4 fields, got {}",
                                        line_no, nf));

    Event e;
    e.t = parse_int(fields[0], line_no, "t_us");
    e.x = static_cast<std::int32_t>(parse_int(fields[1], line_no, "x"));
    e.y = static_cast<std::int32_t>(parse_int(fields[2], line_no, "y"));
    const std::int64_t p = parse_int(fields[3], line_no, "p");

    if (e.t < 0) throw ValidationError(fmt::format("negative timestamp at line {}", line_no));
    if (e.t < prev_t)
      throw ValidationError(fmt::format("non-monotonic timestamp at line {}", line_no));
    if (e.x < 0 || e.x >= camera.width || e.y < 0 || e.y >= camera.height)
      throw ValidationError(fmt::format("out-of-bounds event at line {}: ({}, {}) on a {}x{} sensor",
                                        line_no, e.x, e.y, camera.width, camera.height));
    if (p != 0 && p != 1)
      throw ValidationError(fmt::format("invalid polarity at line {}: expected 0 or 1", line_no));
    e.polarity = p == 1 ? 1 : -1;

    prev_t = e.t;
    stream.events.push_back(e);
  }
  if (line_no == 0) throw ValidationError("parse error at line 1: missing header");
  return stream;
}

void save_events(const EventStream& s, const std::string& path) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "{}\n", kHeader);
  for (const Event& e : s.events)
    fmt::format_to(std::back_inserter(buf), "{},{},{},{}\n", e.t, e.x, e.y,
                   e.polarity > 0 ? 1 : 0);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write event file: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed while writing event file: " + path);
}

EventStream apply_offset(const EventStream& s, std::int64_t offset_us) {
  if (!s.events.empty() && s.events.front().t + offset_us < 0)
    throw ValidationError(
        fmt::format("offset {} us underflows the stream start {} us", offset_us,
                    s.events.front().t));
  EventStream out;
  out.camera = s.camera;
  out.events = s.events;
  for (Event& e : out.events) e.t += offset_us;
  return out;
}

EventStream denoise_radius(const EventStream& s, int r_xy_px, std::int64_t r_t_us, int k_min) {
  if (r_xy_px <= 0 || r_t_us <= 0 || k_min < 1)
    throw ValidationError("denoise: radii must be positive and k_min >= 1");
  const int w = s.camera.width, h = s.camera.height;
  if (w <= 0 || h <= 0) throw ValidationError("denoise: stream has no camera resolution");

  EventStream out;
  out.camera = s.camera;
  const auto& ev = s.events;
  const std::size_t n = ev.size();
  if (n == 0) return out;

  // Exact sliding window: the occupancy grid holds every event within r_t of
  // the query event, so the square sum counts the full space-time cylinder.
  std::vector<std::int32_t> grid(static_cast<std::size_t>(w) * h, 0);
  std::size_t lo = 0, hi = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (hi < n && ev[hi].t <= ev[i].t + r_t_us) {
      grid[static_cast<std::size_t>(ev[hi].y) * w + ev[hi].x]++;
      ++hi;
    }
    while (ev[lo].t < ev[i].t - r_t_us) {
      grid[static_cast<std::size_t>(ev[lo].y) * w + ev[lo].x]--;
      ++lo;
    }
    const int x0 = std::max(0, ev[i].x - r_xy_px), x1 = std::min(w - 1, ev[i].x + r_xy_px);
    const int y0 = std::max(0, ev[i].y - r_xy_px), y1 = std::min(h - 1, ev[i].y + r_xy_px);
    std::int64_t count = 0;
    for (int y = y0; y <= y1; ++y) {
      const std::int32_t* row = grid.data() + static_cast<std::size_t>(y) * w;
      for (int x = x0; x <= x1; ++x) count += row[x];
    }
    if (count - 1 >= k_min) out.events.push_back(ev[i]);
  }
  return out;
}

std::vector<UndistortedEvent> undistort_events(const EventStream& s, std::size_t* n_dropped) {
  const int w = s.camera.width, h = s.camera.height;
  if (w <= 0 || h <= 0) throw ValidationError("undistort: stream has no camera resolution");

  // Per-pixel memo: 0 unknown, 1 converged, 2 divergent.
  std::vector<std::uint8_t> state(static_cast<std::size_t>(w) * h, 0);
  std::vector<Eigen::Vector2d> lut(static_cast<std::size_t>(w) * h);

  std::vector<UndistortedEvent> out;
  out.reserve(s.events.size());
  std::size_t dropped = 0;
  for (const Event& e : s.events) {
    const std::size_t idx = static_cast<std::size_t>(e.y) * w + e.x;
    if (state[idx] == 0) {
      const auto u = s.camera.undistort_pixel(
          Eigen::Vector2d(static_cast<double>(e.x), static_cast<double>(e.y)));
      if (u) {
        lut[idx] = *u;
        state[idx] = 1;
      } else {
        state[idx] = 2;
      }
    }
    if (state[idx] == 1) {
      out.push_back({e.t, lut[idx]});
    } else {
      ++dropped;
    }
  }
  if (n_dropped) *n_dropped = dropped;
  return out;
}

}  // namespace evsync
