#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "trajrec/dataset.hpp"
#include "trajrec/errors.hpp"
#include "trajrec/map_matching.hpp"
#include "trajrec/rng.hpp"
#include "trajrec/synthetic.hpp"
#include "trajrec/trajectory.hpp"

using namespace trajrec;

namespace {

RoadNetwork grid_network(int rows = 4, int cols = 4) {
  return RoadNetwork::from_segments(make_grid_segments(rows, cols));
}

RawTrajectory to_raw(const RoadNetwork& net, const MapTrajectory& traj,
                     double noise_m = 0.0, std::uint64_t seed = 0) {
  Rng rng(seed);
  RawTrajectory out;
  out.id = traj.id;
  for (const auto& p : traj.points) {
    LonLat c = net.point_at({p.segment, p.ratio});
    if (noise_m > 0) {
      // Roughly isotropic meter-scale jitter.
      double mlat = 111194.93;
      double mlon = mlat * std::cos(c.lat * 3.14159265358979 / 180.0);
      c.lon += rng.normal(0, noise_m) / mlon;
      c.lat += rng.normal(0, noise_m) / mlat;
    }
    out.points.push_back({c.lon, c.lat, p.t});
  }
  return out;
}

}  // namespace

TEST_CASE("jsonl io round-trips both trajectory kinds") {
  testutil::TempDir dir("traj_io");
  std::vector<RawTrajectory> raw(2);
  raw[0] = {11, {{116.30, 39.90, 1000.0}, {116.31, 39.91, 1010.5}}};
  raw[1] = {12, {{116.35, 39.95, 2000.0}, {116.36, 39.96, 2050.0}, {116.37, 39.96, 2100.0}}};
  save_raw_trajectories(raw, dir.file("raw.jsonl"));
  auto raw2 = load_raw_trajectories(dir.file("raw.jsonl"));
  REQUIRE(raw2.size() == 2);
  CHECK(raw2[0].id == 11);
  CHECK(raw2[1].points.size() == 3);
  CHECK(raw2[0].points[1].lon == raw[0].points[1].lon);
  CHECK(raw2[0].points[1].t == raw[0].points[1].t);

  std::vector<MapTrajectory> mt(1);
  mt[0] = {7, {{3, 0.25, 1000.0}, {4, 0.75, 1015.0}}};
  save_map_trajectories(mt, dir.file("map.jsonl"));
  auto mt2 = load_map_trajectories(dir.file("map.jsonl"));
  REQUIRE(mt2.size() == 1);
  CHECK(mt2[0].points[0].segment == 3);
  CHECK(mt2[0].points[0].ratio == 0.25);
}

TEST_CASE("jsonl loader names the bad line") {
  testutil::TempDir dir("traj_bad");
  {
    std::ofstream out(dir.file("bad.jsonl"));
    out << "{\"id\":1,\"points\":[[116.3,39.9,0],[116.31,39.9,10]]}\n";
    out << "{\"id\":2,\"points\":[[116.3,39.9]]}\n";
  }
  try {
    load_raw_trajectories(dir.file("bad.jsonl"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("validation rejects non-increasing timestamps and bad ratios") {
  RawTrajectory r{1, {{116.3, 39.9, 10.0}, {116.31, 39.9, 10.0}}};
  CHECK_THROWS_AS(validate(r), ValidationError);
  RawTrajectory single{1, {{116.3, 39.9, 10.0}}};
  CHECK_THROWS_AS(validate(single), ValidationError);

  auto net = grid_network();
  MapTrajectory m{1, {{0, 0.5, 0.0}, {0, 1.5, 10.0}}};
  CHECK_THROWS_AS(validate(m, net), ValidationError);
  MapTrajectory unknown{1, {{999, 0.5, 0.0}, {999, 0.6, 10.0}}};
  CHECK_THROWS_AS(validate(unknown, net), ValidationError);
}

TEST_CASE("map matching locks onto a noise-free single-segment trace") {
  auto net = grid_network();
  RawTrajectory raw;
  raw.id = 1;
  for (int i = 0; i <= 10; ++i) {
    LonLat c = net.point_at({0, i / 10.0});
    raw.points.push_back({c.lon, c.lat, 10.0 * i});
  }
  auto matched = hmm_map_match(net, raw);
  REQUIRE(matched.points.size() == raw.points.size());
  for (std::size_t i = 0; i < matched.points.size(); ++i) {
    CHECK(matched.points[i].segment == 0);
    if (i) CHECK(matched.points[i].ratio >= matched.points[i - 1].ratio);
  }
}

TEST_CASE("map matching recovers noisy synthetic walks") {
  // Arterial-scale grid; sigma matched to the known 5 m sensor noise.
  auto net = RoadNetwork::from_segments(make_grid_segments(5, 5, 2000.0));
  SyntheticParams sp;
  sp.eps_tau_s = 10.0;
  auto truth = generate_synthetic(net, 30, sp, 99);
  HmmParams hp;
  hp.sigma_m = 5.0;

  std::size_t correct = 0, total = 0;
  for (const auto& traj : truth) {
    auto raw = to_raw(net, traj, 5.0, Rng::derive(7, traj.id));
    auto matched = hmm_map_match(net, raw, hp);
    REQUIRE(matched.points.size() == traj.points.size());
    for (std::size_t i = 0; i < traj.points.size(); ++i) {
      total += 1;
      correct += matched.points[i].segment == traj.points[i].segment;
    }
  }
  CHECK(static_cast<double>(correct) / total >= 0.99);
}

TEST_CASE("map matching accuracy degrades as the sampling interval grows") {
  auto net = RoadNetwork::from_segments(make_grid_segments(6, 6, 400.0));
  SyntheticParams sp;
  sp.eps_tau_s = 10.0;
  sp.min_segments = 8;
  sp.max_segments = 14;
  auto truth = generate_synthetic(net, 30, sp, 2024);

  std::vector<int> strides{1, 4, 16};  // 10 s, 40 s, 160 s
  std::vector<double> acc;
  for (int stride : strides) {
    std::size_t correct = 0, total = 0;
    for (const auto& traj : truth) {
      MapTrajectory sampled;
      sampled.id = traj.id;
      for (std::size_t i = 0; i < traj.points.size(); i += stride) {
        sampled.points.push_back(traj.points[i]);
      }
      if (sampled.points.size() < 2) continue;
      auto raw = to_raw(net, sampled, 5.0, Rng::derive(8, traj.id));
      auto matched = hmm_map_match(net, raw);
      for (std::size_t i = 0; i < sampled.points.size(); ++i) {
        total += 1;
        correct += matched.points[i].segment == sampled.points[i].segment;
      }
    }
    acc.push_back(static_cast<double>(correct) / total);
  }
  CHECK(acc[0] >= acc[1]);
  CHECK(acc[1] >= acc[2]);
  CHECK(acc[0] >= 0.95);
}

TEST_CASE("map matching reports the point without candidates") {
  auto net = grid_network();
  RawTrajectory raw{1, {{116.30, 39.90, 0.0}, {120.0, 45.0, 10.0}}};
  try {
    hmm_map_match(net, raw);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("point 1") != std::string::npos);
  }
}

TEST_CASE("interpolation inserts the midpoint of uniform motion") {
  // Single 100 m straight segment; endpoints at t=0 and t=10.
  std::vector<RoadSegment> segs(1);
  RoadSegment s;
  s.id = 0;
  s.from_node = 0;
  s.to_node = 1;
  s.geometry = {{116.30, 39.90}, {116.30117245, 39.90}};
  s.length_m = haversine_m(s.geometry[0], s.geometry[1]);
  segs[0] = s;
  auto net = RoadNetwork::from_segments(segs);

  MapTrajectory traj{1, {{0, 0.0, 0.0}, {0, 1.0, 10.0}}};
  auto dense = interpolate_to_interval(net, traj, 5.0);
  REQUIRE(dense.points.size() == 3);
  CHECK(dense.points[1].segment == 0);
  CHECK(dense.points[1].ratio == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(dense.points[1].t == 5.0);
  CHECK(dense.points[2].ratio == 1.0);
}

TEST_CASE("interpolation is the identity for on-grid trajectories") {
  auto net = grid_network();
  SyntheticParams sp;
  auto truth = generate_synthetic(net, 3, sp, 5);
  for (const auto& traj : truth) {
    auto again = interpolate_to_interval(net, traj, sp.eps_tau_s);
    REQUIRE(again.points.size() == traj.points.size());
    for (std::size_t i = 0; i < traj.points.size(); ++i) {
      CHECK(again.points[i].segment == traj.points[i].segment);
      CHECK(again.points[i].ratio == doctest::Approx(traj.points[i].ratio).epsilon(1e-12));
      CHECK(again.points[i].t == traj.points[i].t);
    }
  }
}

TEST_CASE("interpolated points lie on the bracketing shortest path") {
  auto net = grid_network();
  SyntheticParams sp;
  auto truth = generate_synthetic(net, 5, sp, 6);
  for (const auto& traj : truth) {
    // Keep every third point, then re-densify.
    MapTrajectory sparse;
    sparse.id = traj.id;
    for (std::size_t i = 0; i < traj.points.size(); i += 3) {
      sparse.points.push_back(traj.points[i]);
    }
    if (sparse.points.back().t != traj.points.back().t) {
      sparse.points.push_back(traj.points.back());
    }
    if (sparse.points.size() < 2) continue;

    auto dense = interpolate_to_interval(net, sparse, sp.eps_tau_s);
    CHECK(dense.points.size() >= sparse.points.size());
    for (std::size_t i = 1; i < dense.points.size(); ++i) {
      CHECK(dense.points[i].t - dense.points[i - 1].t ==
            doctest::Approx(sp.eps_tau_s).epsilon(1e-9));
    }

    // Path-membership oracle: distance from each interpolated point to
    // its bracketing pair obeys d(a,x) + d(x,b) == d(a,b).
    for (std::size_t i = 0; i < dense.points.size(); ++i) {
      double t = dense.points[i].t;
      std::size_t j = 0;
      while (j + 2 < sparse.points.size() && sparse.points[j + 1].t <= t) ++j;
      NetworkPoint a{sparse.points[j].segment, sparse.points[j].ratio};
      NetworkPoint b{sparse.points[j + 1].segment, sparse.points[j + 1].ratio};
      NetworkPoint x{dense.points[i].segment, dense.points[i].ratio};
      double ax = net.network_distance(a, x).meters;
      double xb = net.network_distance(x, b).meters;
      double ab = net.network_distance(a, b).meters;
      CHECK(ax + xb <= ab + 1e-3);
    }
  }
}

TEST_CASE("interpolation reports unreachable gaps") {
  std::vector<RoadSegment> segs(2);
  segs[0] = {0, 0, 1, haversine_m({116.30, 39.90}, {116.304, 39.90}),
             {{116.30, 39.90}, {116.304, 39.90}}, {}};
  segs[1] = {1, 2, 3, haversine_m({116.32, 39.92}, {116.324, 39.92}),
             {{116.32, 39.92}, {116.324, 39.92}}, {}};
  auto net = RoadNetwork::from_segments(segs);
  MapTrajectory traj{1, {{0, 0.0, 0.0}, {1, 1.0, 30.0}}};
  CHECK_THROWS_AS(interpolate_to_interval(net, traj, 10.0), DataError);
}

TEST_CASE("downsample keeps endpoints and is deterministic") {
  RawTrajectory traj;
  traj.id = 5;
  for (int i = 0; i < 50; ++i) traj.points.push_back({116.3 + i * 1e-4, 39.9, 10.0 * i});

  auto a = downsample(traj, 0.3, 123);
  auto b = downsample(traj, 0.3, 123);
  REQUIRE(a.points.size() == b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    CHECK(a.points[i].t == b.points[i].t);
  }
  CHECK(a.points.front().t == traj.points.front().t);
  CHECK(a.points.back().t == traj.points.back().t);

  auto all = downsample(traj, 1.0, 7);
  CHECK(all.points.size() == traj.points.size());

  CHECK_THROWS_AS(downsample(traj, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(downsample(traj, 1.5, 1), ValidationError);

  // Relative order preserved.
  for (std::size_t i = 1; i < a.points.size(); ++i) {
    CHECK(a.points[i].t > a.points[i - 1].t);
  }
}

TEST_CASE("downsample keep fraction concentrates around keep_prob") {
  RawTrajectory traj;
  traj.id = 1;
  for (int i = 0; i < 10002; ++i) traj.points.push_back({116.3, 39.9, 1.0 * i});
  auto kept = downsample(traj, 0.125, 99);
  double frac = static_cast<double>(kept.points.size() - 2) / 10000.0;
  CHECK(std::abs(frac - 0.125) <= 0.01);
}

TEST_CASE("map-constrained downsample reconstructs coordinates from geometry") {
  auto net = grid_network();
  MapTrajectory traj{3, {{0, 0.0, 0.0}, {0, 0.5, 10.0}, {0, 1.0, 20.0}}};
  auto raw = downsample(net, traj, 1.0, 0);
  REQUIRE(raw.points.size() == 3);
  LonLat mid = net.point_at({0, 0.5});
  CHECK(raw.points[1].lon == doctest::Approx(mid.lon).epsilon(1e-12));
  CHECK(raw.points[1].lat == doctest::Approx(mid.lat).epsilon(1e-12));
}

TEST_CASE("synthetic walks respect the network and the clock") {
  auto net = grid_network();
  SyntheticParams sp;
  auto trajs = generate_synthetic(net, 20, sp, 31);
  REQUIRE(trajs.size() == 20);
  CHECK(generate_synthetic(net, 0, sp, 31).empty());

  for (const auto& traj : trajs) {
    validate(traj, net);
    for (std::size_t i = 1; i < traj.points.size(); ++i) {
      CHECK(traj.points[i].t - traj.points[i - 1].t ==
            doctest::Approx(sp.eps_tau_s).epsilon(1e-9));
      if (traj.points[i].segment != traj.points[i - 1].segment) {
        auto nb = net.junction_neighbors(traj.points[i - 1].segment);
        CHECK(std::find(nb.begin(), nb.end(), traj.points[i].segment) != nb.end());
      }
    }
  }

  // Same seed, same output.
  auto again = generate_synthetic(net, 20, sp, 31);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    REQUIRE(again[i].points.size() == trajs[i].points.size());
    for (std::size_t j = 0; j < trajs[i].points.size(); ++j) {
      CHECK(again[i].points[j].segment == trajs[i].points[j].segment);
      CHECK(again[i].points[j].ratio == trajs[i].points[j].ratio);
    }
  }
}

TEST_CASE("synthetic peak-hour traversal is slower by the configured factor") {
  auto net = grid_network();
  SyntheticParams peak;
  double day0 = 1700006400.0;  // midnight
  peak.start_unix_lo = peak.start_unix_hi = day0 + 8.0 * 3600;
  SyntheticParams off = peak;
  off.start_unix_lo = off.start_unix_hi = day0 + 3.0 * 3600;

  auto at_peak = generate_synthetic(net, 40, peak, 77);
  auto off_peak = generate_synthetic(net, 40, off, 77);

  auto mean_duration = [](const std::vector<MapTrajectory>& ts) {
    double sum = 0;
    for (const auto& t : ts) sum += t.points.back().t - t.points.front().t;
    return sum / ts.size();
  };
  double ratio = mean_duration(at_peak) / mean_duration(off_peak);
  CHECK(ratio == doctest::Approx(peak.peak_factor).epsilon(0.05));
}

TEST_CASE("splits are 7:2:1, disjoint and seed-stable") {
  auto net = grid_network();
  SyntheticParams sp;
  auto truth = generate_synthetic(net, 10, sp, 1);
  std::vector<TrajectoryPair> pairs;
  for (const auto& t : truth) {
    pairs.emplace_back(downsample(net, t, 0.25, Rng::derive(2, t.id)), t);
  }
  auto split = build_splits(pairs, 42);
  CHECK(split.train.size() == 7);
  CHECK(split.valid.size() == 2);
  CHECK(split.test.size() == 1);

  std::set<std::int64_t> ids;
  for (const auto& p : split.train) ids.insert(p.second.id);
  for (const auto& p : split.valid) ids.insert(p.second.id);
  for (const auto& p : split.test) ids.insert(p.second.id);
  CHECK(ids.size() == 10);

  auto split2 = build_splits(pairs, 42);
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    CHECK(split.train[i].second.id == split2.train[i].second.id);
  }

  std::vector<TrajectoryPair> few(pairs.begin(), pairs.begin() + 9);
  CHECK_THROWS_AS(build_splits(few, 1), ValidationError);

  // 100 pairs -> 70/20/10.
  std::vector<TrajectoryPair> many;
  for (int i = 0; i < 10; ++i)
    for (const auto& p : pairs) many.push_back(p);
  auto big = build_splits(many, 7);
  CHECK(big.train.size() == 70);
  CHECK(big.valid.size() == 20);
  CHECK(big.test.size() == 10);
}
