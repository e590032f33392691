#pragma once

#include <vector>

#include "trajrec/autodiff.hpp"
#include "trajrec/road_network.hpp"
#include "trajrec/road_state.hpp"
#include "trajrec/trajectory.hpp"

namespace trajrec {

// Convex aggregation weights over the subregion of one GPS point.
struct SubregionWeights {
  std::vector<std::size_t> segments;  // dense indices
  std::vector<double> weights;        // nonnegative, sum to 1
};

// exp(-dist^2/gamma^2) over all segments within eta_m of p, normalized
// in log space to survive dist >> gamma. An empty subregion falls back
// to the single nearest segment with weight 1.
SubregionWeights subregion_weights(const RoadNetwork& net, const LonLat& p,
                                   double eta_m, double gamma_m);

// Encoder inputs: row i is the distance-weighted mix of the road states
// of p_i's subregion, evaluated at p_i's minutes-of-day. The mixing
// weights are data (no gradient flows through distances).
ad::Var extract_features(ad::Tape& tape, const RoadField& field,
                         const RoadNetwork& net, const RawTrajectory& raw,
                         double eta_m, double gamma_m);

}  // namespace trajrec
