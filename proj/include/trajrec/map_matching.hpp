#pragma once

#include "trajrec/road_network.hpp"
#include "trajrec/trajectory.hpp"

namespace trajrec {

struct HmmParams {
  double sigma_m = 20.0;          // emission noise scale
  double beta = 5.0;              // transition scale
  double candidate_radius_m = 100.0;
};

// Viterbi map matching. Emission log-prob of a candidate is
// -d_perp^2 / (2 sigma^2); transition log-prob between consecutive
// candidates is -|d_greatcircle - d_route| / beta.
MapTrajectory hmm_map_match(const RoadNetwork& net, const RawTrajectory& raw,
                            const HmmParams& params = {});

}  // namespace trajrec
