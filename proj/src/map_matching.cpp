#include "trajrec/map_matching.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "trajrec/errors.hpp"

namespace trajrec {

MapTrajectory hmm_map_match(const RoadNetwork& net, const RawTrajectory& raw,
                            const HmmParams& params) {
  validate(raw);
  if (net.empty()) throw ValidationError("hmm_map_match: empty network");

  struct Candidate {
    NetworkPoint point;
    double emission_logp;
  };

  const std::size_t m = raw.points.size();
  std::vector<std::vector<Candidate>> cands(m);
  for (std::size_t i = 0; i < m; ++i) {
    LonLat p{raw.points[i].lon, raw.points[i].lat};
    for (std::int64_t seg : net.subregion(p, params.candidate_radius_m)) {
      auto proj = net.project_onto_segment(seg, p);
      double d = proj.dist_m;
      cands[i].push_back(
          {proj.point, -(d * d) / (2.0 * params.sigma_m * params.sigma_m)});
    }
    if (cands[i].empty()) {
      throw DataError("hmm_map_match: trajectory " + std::to_string(raw.id) +
                      " point " + std::to_string(i) +
                      " has no candidate segment within " +
                      std::to_string(params.candidate_radius_m) + " m");
    }
  }

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> score(m);
  std::vector<std::vector<std::size_t>> back(m);
  score[0].resize(cands[0].size());
  back[0].assign(cands[0].size(), 0);
  for (std::size_t c = 0; c < cands[0].size(); ++c) {
    score[0][c] = cands[0][c].emission_logp;
  }

  for (std::size_t i = 1; i < m; ++i) {
    const LonLat prev{raw.points[i - 1].lon, raw.points[i - 1].lat};
    const LonLat cur{raw.points[i].lon, raw.points[i].lat};
    const double d_gc = haversine_m(prev, cur);

    score[i].assign(cands[i].size(), kNegInf);
    back[i].assign(cands[i].size(), 0);
    for (std::size_t c = 0; c < cands[i].size(); ++c) {
      double best = kNegInf;
      std::size_t best_prev = 0;
      for (std::size_t pc = 0; pc < cands[i - 1].size(); ++pc) {
        if (score[i - 1][pc] == kNegInf) continue;
        double d_route =
            net.network_distance(cands[i - 1][pc].point, cands[i][c].point).meters;
        double trans = -std::abs(d_gc - d_route) / params.beta;
        double s = score[i - 1][pc] + trans;
        if (s > best) {
          best = s;
          best_prev = pc;
        }
      }
      if (best == kNegInf) continue;
      score[i][c] = best + cands[i][c].emission_logp;
      back[i][c] = best_prev;
    }

    bool any = false;
    for (double s : score[i]) any = any || s != kNegInf;
    if (!any) {
      throw DataError("hmm_map_match: trajectory " + std::to_string(raw.id) +
                      " has no feasible transition into point " +
                      std::to_string(i));
    }
  }

  std::size_t best_c = 0;
  for (std::size_t c = 1; c < cands[m - 1].size(); ++c) {
    if (score[m - 1][c] > score[m - 1][best_c]) best_c = c;
  }

  MapTrajectory out;
  out.id = raw.id;
  out.points.resize(m);
  std::size_t c = best_c;
  for (std::size_t i = m; i-- > 0;) {
    out.points[i] = {cands[i][c].point.segment, cands[i][c].point.ratio,
                     raw.points[i].t};
    c = back[i][c];
  }
  return out;
}

}  // namespace trajrec
