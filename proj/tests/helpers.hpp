#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "trajrec/dataset.hpp"
#include "trajrec/geo.hpp"
#include "trajrec/rng.hpp"
#include "trajrec/road_network.hpp"
#include "trajrec/synthetic.hpp"

namespace testutil {

// Rows x cols junction grid. Junction (r, c) has node id r*cols + c.
// Horizontal segments come first (id r*(cols-1) + c), then vertical
// (id n_h + r*cols + c). Direction alternates with (r + c) parity so
// directed adjacency is exercised.
inline std::vector<trajrec::RoadSegment> grid_segments(
    int rows, int cols, double origin_lon = 116.30, double origin_lat = 39.90,
    double dlon = 0.004, double dlat = 0.003) {
  auto coord = [&](int r, int c) {
    return trajrec::LonLat{origin_lon + c * dlon, origin_lat + r * dlat};
  };
  auto node = [&](int r, int c) {
    return static_cast<std::int64_t>(r) * cols + c;
  };

  std::vector<trajrec::RoadSegment> segs;
  std::int64_t next_id = 0;
  auto add = [&](int r1, int c1, int r2, int c2, bool forward) {
    trajrec::RoadSegment s;
    s.id = next_id++;
    if (!forward) {
      std::swap(r1, r2);
      std::swap(c1, c2);
    }
    s.from_node = node(r1, c1);
    s.to_node = node(r2, c2);
    s.geometry = {coord(r1, c1), coord(r2, c2)};
    s.length_m = trajrec::haversine_m(s.geometry[0], s.geometry[1]);
    segs.push_back(std::move(s));
  };

  for (int r = 0; r < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) add(r, c, r, c + 1, (r + c) % 2 == 0);
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c < cols; ++c) add(r, c, r + 1, c, (r + c) % 2 == 0);
  return segs;
}

// Chain of n collinear segments: node i sits at lon0 + i*dlon, and
// segment i runs node i -> node i+1 (in-neighbor of i is i-1).
inline std::vector<trajrec::RoadSegment> chain_segments(int n,
                                                        double lon0 = 116.30,
                                                        double lat = 39.90,
                                                        double dlon = 0.004) {
  std::vector<trajrec::RoadSegment> segs;
  for (int i = 0; i < n; ++i) {
    trajrec::RoadSegment s;
    s.id = i;
    s.from_node = i;
    s.to_node = i + 1;
    s.geometry = {trajrec::LonLat{lon0 + i * dlon, lat},
                  trajrec::LonLat{lon0 + (i + 1) * dlon, lat}};
    s.length_m = trajrec::haversine_m(s.geometry[0], s.geometry[1]);
    segs.push_back(std::move(s));
  }
  return segs;
}

inline std::string write_segments_csv(const std::vector<trajrec::RoadSegment>& segs,
                                      const std::string& path) {
  std::ofstream out(path);
  out << "id,u,v,length_m,geometry\n";
  out.precision(12);
  for (const auto& s : segs) {
    out << s.id << ',' << s.from_node << ',' << s.to_node << ',' << s.length_m
        << ',';
    for (std::size_t i = 0; i < s.geometry.size(); ++i) {
      if (i) out << ';';
      out << s.geometry[i].lon << ' ' << s.geometry[i].lat;
    }
    out << '\n';
  }
  return path;
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) {
    path = std::string("/tmp/trajrec_test_") + name;
    std::remove(path.c_str());
    std::filesystem::create_directories(path);
  }
  std::string file(const std::string& name) const { return path + "/" + name; }
};

// Synthetic ground truth walks paired with downsampled raw inputs; the
// model's training food. Endpoints of the downsample are kept, so the
// teacher length always matches the decode grid.
inline std::vector<trajrec::TrajectoryPair> synthetic_pairs(
    const trajrec::RoadNetwork& net, std::size_t count, double keep_prob,
    std::uint64_t seed, int min_segments = 3, int max_segments = 5,
    double eps_tau_s = 15.0) {
  trajrec::SyntheticParams sp;
  sp.min_segments = min_segments;
  sp.max_segments = max_segments;
  sp.eps_tau_s = eps_tau_s;
  const auto truths = trajrec::generate_synthetic(net, count, sp, seed);
  std::vector<trajrec::TrajectoryPair> pairs;
  pairs.reserve(truths.size());
  for (const auto& mt : truths) {
    trajrec::RawTrajectory raw = trajrec::downsample(
        net, mt, keep_prob,
        trajrec::Rng::derive(seed, 0x646f776eULL, static_cast<std::uint64_t>(mt.id)));
    pairs.emplace_back(std::move(raw), mt);
  }
  return pairs;
}

}  // namespace testutil
