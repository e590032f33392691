#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "trajrec/road_network.hpp"
#include "trajrec/trajectory.hpp"

namespace trajrec {

// Aggregate quality of a set of recovered trajectories against their
// ground truth. accuracy/recall/precision/f1 are macro-averaged per
// trajectory; mae/rmse pool every point pair.
struct EvalReport {
  double accuracy = 0.0;
  double mae_m = 0.0;
  double rmse_m = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;

  std::string to_json() const;
  std::string to_table() const;
};

// Fraction of steps whose predicted segment matches the target.
double accuracy(const MapTrajectory& target, const MapTrajectory& pred);

// Mean / root-mean-square network shortest-path distance between
// aligned points, in meters.
std::pair<double, double> mae_rmse(const RoadNetwork& net,
                                   const MapTrajectory& target,
                                   const MapTrajectory& pred);

struct Rpf {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};
// Multiset intersection of the two segment sequences: repeated segments
// must be produced the right number of times to count.
Rpf recall_precision_f1(const MapTrajectory& target, const MapTrajectory& pred);

using SegmentSeq = std::vector<std::int64_t>;

SegmentSeq segment_sequence(const MapTrajectory& traj);
// Baseline sequence for a sparse input: each point projected onto its
// nearest segment.
SegmentSeq raw_segment_sequence(const RoadNetwork& net,
                                const RawTrajectory& raw);

// 1 - LCSS(a,b) / min(|a|,|b|); equal ids match.
double lcss_distance(const SegmentSeq& a, const SegmentSeq& b);
// EDR(a,b) / max(|a|,|b|); unit insert/delete/substitute costs.
double edr_distance(const SegmentSeq& a, const SegmentSeq& b);

EvalReport evaluate(const RoadNetwork& net,
                    const std::vector<MapTrajectory>& targets,
                    const std::vector<MapTrajectory>& preds);

using SeqMetric = std::function<double(const SegmentSeq&, const SegmentSeq&)>;

// All-pairs distances under `metric`; parallel across pairs.
std::vector<std::vector<double>> pairwise_distances(
    const std::vector<SegmentSeq>& seqs, const SeqMetric& metric);

// Similarity retrieval check. For each trajectory the true most-similar
// neighbor is found on the ground-truth sequences; R@k is the fraction
// of trajectories whose true neighbor appears among the k nearest
// neighbors of the corresponding query sequence. Ties break toward the
// smaller index on both sides, so results are deterministic.
std::vector<double> rank_eval(const std::vector<SegmentSeq>& truth,
                              const std::vector<SegmentSeq>& queries,
                              const SeqMetric& metric,
                              const std::vector<std::size_t>& ks);

}  // namespace trajrec
