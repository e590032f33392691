#pragma once

namespace trajrec {

inline constexpr double kEarthRadiusM = 6371000.0;

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
};

// Great-circle distance on a sphere of radius kEarthRadiusM, in meters.
double haversine_m(const LonLat& a, const LonLat& b);

// Result of projecting a point onto a straight edge a-b.
//   t       position parameter along the edge, clamped to [0, 1]
//   dist_m  distance from the point to the projected location
//   point   projected location in lon/lat
struct EdgeProjection {
  double t = 0.0;
  double dist_m = 0.0;
  LonLat point;
};

// Projects p onto the edge a-b using a local equirectangular frame
// anchored at p. Accurate to well under a meter at the sub-kilometer
// ranges where it is used (subregions, emission distances, masks).
EdgeProjection project_to_edge(const LonLat& p, const LonLat& a,
                               const LonLat& b);

}  // namespace trajrec
