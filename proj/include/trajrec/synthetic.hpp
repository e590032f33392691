#pragma once

#include <cstdint>
#include <vector>

#include "trajrec/road_network.hpp"
#include "trajrec/trajectory.hpp"

namespace trajrec {

struct SyntheticParams {
  int min_segments = 6;    // walk length bounds, in segments
  int max_segments = 12;
  double eps_tau_s = 15.0;      // ground-truth grid interval
  double base_speed_lo = 8.0;   // m/s, per-segment free-flow speed range
  double base_speed_hi = 15.0;
  double peak_factor = 2.0;     // slowdown at the rush-hour peaks
  double peak_hour_am = 8.0;
  double peak_hour_pm = 18.0;
  double peak_sigma_h = 1.0;
  double start_unix_lo = 1700006400.0;  // departure window (default: one day)
  double start_unix_hi = 1700006400.0 + 86400.0;
};

// Rush-hour congestion level in [0,1]: max of two Gaussian bumps over
// the hour-of-day, with wrap-around distance.
double time_of_day_factor(double unix_t, const SyntheticParams& params);

// Effective speed of a segment with the given free-flow speed at time t.
double segment_speed(double base_speed, double unix_t,
                     const SyntheticParams& params);

// Free-flow speed per dense segment index, drawn deterministically.
std::vector<double> draw_base_speeds(const RoadNetwork& net, std::uint64_t seed,
                                     const SyntheticParams& params);

// Seeded random walks over the junction graph with time-of-day dependent
// traversal speeds; ground truth emitted on the eps_tau grid. Trajectory
// ids are 0..count-1.
std::vector<MapTrajectory> generate_synthetic(const RoadNetwork& net,
                                              std::size_t count,
                                              const SyntheticParams& params,
                                              std::uint64_t seed);

// Rows x cols junction grid with alternating segment directions;
// spacing in meters. Useful as a desk-scale road network.
std::vector<RoadSegment> make_grid_segments(int rows, int cols,
                                            double spacing_m = 333.0,
                                            double origin_lon = 116.30,
                                            double origin_lat = 39.90);

}  // namespace trajrec
