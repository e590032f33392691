#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajrec/geo.hpp"
#include "trajrec/road_network.hpp"

namespace trajrec {

struct RawPoint {
  double lon = 0.0;
  double lat = 0.0;
  double t = 0.0;  // unix seconds
};

struct RawTrajectory {
  std::int64_t id = 0;
  std::vector<RawPoint> points;
};

struct MapPoint {
  std::int64_t segment = -1;
  double ratio = 0.0;
  double t = 0.0;
};

struct MapTrajectory {
  std::int64_t id = 0;
  std::vector<MapPoint> points;
};

// Invariant checks; throw ValidationError naming the trajectory id.
void validate(const RawTrajectory& traj);
void validate(const MapTrajectory& traj, const RoadNetwork& net);

// JSON-lines IO. Raw: {"id":..., "points":[[lon,lat,t],...]};
// map-constrained: {"id":..., "points":[[seg,ratio,t],...]}.
std::vector<RawTrajectory> load_raw_trajectories(const std::string& path);
std::vector<MapTrajectory> load_map_trajectories(const std::string& path);
void save_raw_trajectories(const std::vector<RawTrajectory>& trajs,
                           const std::string& path);
void save_map_trajectories(const std::vector<MapTrajectory>& trajs,
                           const std::string& path);

}  // namespace trajrec
