#include "trajrec/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace trajrec {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

double haversine_m(const LonLat& a, const LonLat& b) {
  const double lat1 = a.lat * kDegToRad;
  const double lat2 = b.lat * kDegToRad;
  const double dlat = lat2 - lat1;
  const double dlon = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dlat * 0.5);
  const double s2 = std::sin(dlon * 0.5);
  const double h = s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

EdgeProjection project_to_edge(const LonLat& p, const LonLat& a,
                               const LonLat& b) {
  // Meters per degree in the frame anchored at p.
  const double kx = std::cos(p.lat * kDegToRad) * kDegToRad * kEarthRadiusM;
  const double ky = kDegToRad * kEarthRadiusM;

  const double ax = (a.lon - p.lon) * kx, ay = (a.lat - p.lat) * ky;
  const double bx = (b.lon - p.lon) * kx, by = (b.lat - p.lat) * ky;
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;

  EdgeProjection out;
  if (len2 <= 0.0) {
    out.t = 0.0;
    out.dist_m = std::hypot(ax, ay);
    out.point = a;
    return out;
  }
  const double t = std::clamp(-(ax * dx + ay * dy) / len2, 0.0, 1.0);
  const double qx = ax + t * dx, qy = ay + t * dy;
  out.t = t;
  out.dist_m = std::hypot(qx, qy);
  out.point = LonLat{a.lon + t * (b.lon - a.lon), a.lat + t * (b.lat - a.lat)};
  return out;
}

}  // namespace trajrec
