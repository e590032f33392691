#include "trajrec/features.hpp"

#include <algorithm>
#include <cmath>

#include "trajrec/errors.hpp"

namespace trajrec {

SubregionWeights subregion_weights(const RoadNetwork& net, const LonLat& p,
                                   double eta_m, double gamma_m) {
  if (net.empty()) throw DataError("feature extraction on an empty road network");
  if (eta_m <= 0 || gamma_m <= 0) {
    throw ValidationError("subregion weights need eta > 0 and gamma > 0");
  }

  SubregionWeights out;
  const std::vector<std::int64_t> ids = net.subregion(p, eta_m);
  if (ids.empty()) {
    out.segments.push_back(net.index_of(net.project_point(p).point.segment));
    out.weights.push_back(1.0);
    return out;
  }

  std::vector<double> log_w;
  log_w.reserve(ids.size());
  for (std::int64_t id : ids) {
    const double d = net.project_onto_segment(id, p).dist_m;
    log_w.push_back(-(d * d) / (gamma_m * gamma_m));
    out.segments.push_back(net.index_of(id));
  }
  const double mx = *std::max_element(log_w.begin(), log_w.end());
  double sum = 0;
  for (double lw : log_w) sum += std::exp(lw - mx);
  for (double lw : log_w) out.weights.push_back(std::exp(lw - mx) / sum);
  return out;
}

ad::Var extract_features(ad::Tape& tape, const RoadField& field,
                         const RoadNetwork& net, const RawTrajectory& raw,
                         double eta_m, double gamma_m) {
  if (raw.points.empty()) {
    throw ValidationError("feature extraction on an empty trajectory");
  }
  const std::size_t m = raw.points.size();

  std::vector<std::size_t> segs;
  std::vector<double> minutes;
  std::vector<std::size_t> offsets{0};
  std::vector<double> weights;
  for (const RawPoint& pt : raw.points) {
    SubregionWeights sw =
        subregion_weights(net, LonLat{pt.lon, pt.lat}, eta_m, gamma_m);
    const double t = minutes_of_day(pt.t);
    for (std::size_t k = 0; k < sw.segments.size(); ++k) {
      segs.push_back(sw.segments[k]);
      minutes.push_back(t);
      weights.push_back(sw.weights[k]);
    }
    offsets.push_back(segs.size());
  }

  ad::Var states = road_state_rows(tape, field, segs, minutes);

  // Block-diagonal combine matrix: row i holds point i's weights.
  ad::Mat combine(m, segs.size());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) {
      combine.at(i, k) = weights[k];
    }
  }
  return tape.matmul(tape.constant(std::move(combine)), states);
}

}  // namespace trajrec
