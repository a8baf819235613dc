#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "evsync/errors.hpp"
#include "evsync/events.hpp"
#include "evsync/util.hpp"
#include "oracles.hpp"

using namespace evsync;

namespace {

EventStream random_stream(std::uint64_t seed, int n, int w = 50, int h = 40,
                          std::int64_t span_us = 50'000) {
  EventStream s;
  s.camera = testor::plain_camera(100, 100, w, h);
  Rng rng(seed);
  std::vector<std::int64_t> times;
  for (int i = 0; i < n; ++i) times.push_back(static_cast<std::int64_t>(rng.below(span_us)));
  std::sort(times.begin(), times.end());
  for (std::int64_t t : times) {
    Event e;
    e.t = t;
    e.x = static_cast<std::int32_t>(rng.below(w));
    e.y = static_cast<std::int32_t>(rng.below(h));
    e.polarity = rng.below(2) == 0 ? -1 : 1;
    s.events.push_back(e);
  }
  return s;
}

}  // namespace

TEST_CASE("event CSV save/load round-trips exactly") {
  const EventStream s = random_stream(1, 500);
  testor::TempDir tmp("events-roundtrip");
  const std::string path = tmp.file("events.csv");
  save_events(s, path);
  const EventStream back = load_events(path, s.camera);
  REQUIRE(back.events.size() == s.events.size());
  for (std::size_t i = 0; i < s.events.size(); ++i) CHECK(back.events[i] == s.events[i]);
}

TEST_CASE("event loader rejects malformed files and names the line") {
  testor::TempDir tmp("events-bad");
  const CameraModel cam = testor::plain_camera(100, 100, 50, 40);

  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(tmp.file(name)) << body;
    return tmp.file(name);
  };

  CHECK_THROWS_AS(load_events(tmp.file("nope.csv"), cam), IoError);
  CHECK_THROWS_AS(load_events(write("empty.csv", ""), cam), ValidationError);
  CHECK_THROWS_AS(load_events(write("header.csv", "time,x,y,p\n"), cam), ValidationError);

  CHECK_THROWS_WITH_AS(load_events(write("fields.csv", "t_us,x,y,p\n10,1,2\n"), cam),
                       doctest::Contains("line 2"), ValidationError);
  CHECK_THROWS_WITH_AS(load_events(write("garbage.csv", "t_us,x,y,p\n10,1,2,1\nx,1,2,1\n"), cam),
                       doctest::Contains("line 3"), ValidationError);
  CHECK_THROWS_WITH_AS(load_events(write("bounds.csv", "t_us,x,y,p\n10,50,2,1\n"), cam),
                       doctest::Contains("out-of-bounds"), ValidationError);
  CHECK_THROWS_WITH_AS(
      load_events(write("mono.csv", "t_us,x,y,p\n10,1,2,1\n5,1,2,1\n"), cam),
      doctest::Contains("non-monotonic"), ValidationError);
  CHECK_THROWS_WITH_AS(load_events(write("neg.csv", "t_us,x,y,p\n-3,1,2,1\n"), cam),
                       doctest::Contains("negative"), ValidationError);
  CHECK_THROWS_WITH_AS(load_events(write("pol.csv", "t_us,x,y,p\n3,1,2,7\n"), cam),
                       doctest::Contains("polarity"), ValidationError);
}

TEST_CASE("offset application shifts timestamps and guards underflow") {
  const EventStream s = random_stream(2, 100);
  const EventStream shifted = apply_offset(s, 2500);
  REQUIRE(shifted.events.size() == s.events.size());
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    CHECK(shifted.events[i].t == s.events[i].t + 2500);
    CHECK(shifted.events[i].x == s.events[i].x);
    CHECK(shifted.events[i].y == s.events[i].y);
    CHECK(shifted.events[i].polarity == s.events[i].polarity);
  }
  const std::int64_t first = s.events.front().t;
  CHECK_NOTHROW(apply_offset(s, -first));  // lands exactly on zero
  CHECK_THROWS_AS(apply_offset(s, -first - 1), ValidationError);
}

TEST_CASE("radius denoiser agrees with the brute-force oracle on 100 random cases") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng pick(mix_seed(7777, seed));
    const int n = 50 + static_cast<int>(pick.below(250));
    const int r_xy = 1 + static_cast<int>(pick.below(4));
    const std::int64_t r_t = 500 + static_cast<std::int64_t>(pick.below(15'000));
    const int k_min = 1 + static_cast<int>(pick.below(6));

    const EventStream s = random_stream(seed, n);
    const EventStream got = denoise_radius(s, r_xy, r_t, k_min);
    const EventStream want = testor::denoise_brute_force(s, r_xy, r_t, k_min);

    REQUIRE(got.events.size() == want.events.size());
    for (std::size_t i = 0; i < got.events.size(); ++i) CHECK(got.events[i] == want.events[i]);
  }
}

TEST_CASE("denoiser counts neighbors inclusively at the window boundary") {
  EventStream s;
  s.camera = testor::plain_camera(100, 100, 50, 40);
  // Two events exactly r_xy apart in x and exactly r_t apart in time: each is
  // the other's neighbor, so both survive k_min = 1.
  s.events.push_back({1000, 10, 10, 1});
  s.events.push_back({1000 + 2000, 10 + 3, 10, 1});
  EventStream kept = denoise_radius(s, 3, 2000, 1);
  CHECK(kept.events.size() == 2);

  // One step beyond either bound breaks the pairing.
  s.events[1].x = 14;
  CHECK(denoise_radius(s, 3, 2000, 1).events.empty());
  s.events[1].x = 13;
  s.events[1].t = 3001;
  CHECK(denoise_radius(s, 3, 2000, 1).events.empty());
}

TEST_CASE("denoiser requires k_min OTHER events, not k_min including self") {
  EventStream s;
  s.camera = testor::plain_camera(100, 100, 50, 40);
  s.events.push_back({0, 5, 5, 1});
  CHECK(denoise_radius(s, 3, 1000, 1).events.empty());  // alone: zero neighbors
  s.events.push_back({10, 5, 6, -1});
  CHECK(denoise_radius(s, 3, 1000, 1).events.size() == 2);
  CHECK(denoise_radius(s, 3, 1000, 2).events.empty());
}

TEST_CASE("undistortion of an undistorted camera preserves pixel coordinates") {
  const EventStream s = random_stream(3, 200);
  std::size_t dropped = 123;
  const auto pts = undistort_events(s, &dropped);
  CHECK(dropped == 0);
  REQUIRE(pts.size() == s.events.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(pts[i].t == s.events[i].t);
    CHECK(pts[i].point.x() == doctest::Approx(s.events[i].x).epsilon(1e-12));
    CHECK(pts[i].point.y() == doctest::Approx(s.events[i].y).epsilon(1e-12));
  }
}

TEST_CASE("undistortion inverts the lens model for a distorted camera") {
  EventStream s = random_stream(4, 200, 346, 260);
  s.camera.fx = s.camera.fy = 250;
  s.camera.cx = 173;
  s.camera.cy = 130;
  s.camera.k1 = -0.1;
  s.camera.k2 = 0.02;
  s.camera.p1 = 1e-4;
  s.camera.p2 = -1e-4;
  const auto pts = undistort_events(s);
  REQUIRE(pts.size() == s.events.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::Vector2d back = s.camera.distort_pixel(pts[i].point);
    CHECK(back.x() == doctest::Approx(double(s.events[i].x)).epsilon(1e-6));
    CHECK(back.y() == doctest::Approx(double(s.events[i].y)).epsilon(1e-6));
  }
}
