#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "trajrec/road_network.hpp"
#include "trajrec/trajectory.hpp"

namespace trajrec {

// Resamples a map-constrained trajectory onto the uniform grid
// t1, t1+eps, ..., t1+(n-1)*eps with n = floor((t_last-t1)/eps)+1.
// Grid points between inputs are placed on the network shortest path
// between the bracketing points by linear travel fraction.
MapTrajectory interpolate_to_interval(const RoadNetwork& net,
                                      const MapTrajectory& traj,
                                      double eps_tau_s);

// Random downsampling: endpoints always kept, each interior point kept
// independently with probability keep_prob under the seeded generator.
RawTrajectory downsample(const RawTrajectory& traj, double keep_prob,
                         std::uint64_t seed);
// Map-constrained variant: raw coordinates are reconstructed from the
// segment geometry at the stored ratio.
RawTrajectory downsample(const RoadNetwork& net, const MapTrajectory& traj,
                         double keep_prob, std::uint64_t seed);

using TrajectoryPair = std::pair<RawTrajectory, MapTrajectory>;

struct DatasetSplit {
  std::vector<TrajectoryPair> train;
  std::vector<TrajectoryPair> valid;
  std::vector<TrajectoryPair> test;
  std::uint64_t seed = 0;
};

// Seeded shuffle, then 70/20/10 partition (floor sizes, remainder to test).
DatasetSplit build_splits(std::vector<TrajectoryPair> pairs, std::uint64_t seed);

// Prepared-dataset layout: <dir>/<name>_input.jsonl holds the sparse
// inputs, <dir>/<name>_target.jsonl the aligned dense targets.
void save_pairs(const std::vector<TrajectoryPair>& pairs,
                const std::string& dir, const std::string& name);
std::vector<TrajectoryPair> load_pairs(const std::string& dir,
                                       const std::string& name);

}  // namespace trajrec
