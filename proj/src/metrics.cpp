#include "trajrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "trajrec/errors.hpp"
#include "trajrec/parallel.hpp"

namespace trajrec {

namespace {

void check_aligned(const MapTrajectory& target, const MapTrajectory& pred,
                   const char* what) {
  if (target.points.empty())
    throw ValidationError(std::string(what) + ": empty target trajectory");
  if (target.points.size() != pred.points.size())
    throw ValidationError(std::string(what) + ": length mismatch (" +
                          std::to_string(target.points.size()) + " vs " +
                          std::to_string(pred.points.size()) + ")");
}

void check_nonempty(const SegmentSeq& s, const char* what) {
  if (s.empty()) throw ValidationError(std::string(what) + ": empty sequence");
}

}  // namespace

double accuracy(const MapTrajectory& target, const MapTrajectory& pred) {
  check_aligned(target, pred, "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < target.points.size(); ++i)
    hits += target.points[i].segment == pred.points[i].segment;
  return static_cast<double>(hits) / static_cast<double>(target.points.size());
}

std::pair<double, double> mae_rmse(const RoadNetwork& net,
                                   const MapTrajectory& target,
                                   const MapTrajectory& pred) {
  check_aligned(target, pred, "mae_rmse");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < target.points.size(); ++i) {
    const NetworkPoint a{target.points[i].segment, target.points[i].ratio};
    const NetworkPoint b{pred.points[i].segment, pred.points[i].ratio};
    const double d = net.network_distance(a, b).meters;
    abs_sum += d;
    sq_sum += d * d;
  }
  const double n = static_cast<double>(target.points.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

Rpf recall_precision_f1(const MapTrajectory& target, const MapTrajectory& pred) {
  if (target.points.empty() || pred.points.empty())
    throw ValidationError("recall_precision_f1: empty trajectory");
  std::map<std::int64_t, std::size_t> counts;
  for (const auto& p : target.points) ++counts[p.segment];
  std::size_t common = 0;
  for (const auto& p : pred.points) {
    auto it = counts.find(p.segment);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  Rpf out;
  out.recall = static_cast<double>(common) / target.points.size();
  out.precision = static_cast<double>(common) / pred.points.size();
  out.f1 = (out.recall + out.precision) > 0.0
               ? 2.0 * out.recall * out.precision / (out.recall + out.precision)
               : 0.0;
  return out;
}

SegmentSeq segment_sequence(const MapTrajectory& traj) {
  SegmentSeq out;
  out.reserve(traj.points.size());
  for (const auto& p : traj.points) out.push_back(p.segment);
  return out;
}

SegmentSeq raw_segment_sequence(const RoadNetwork& net,
                                const RawTrajectory& raw) {
  if (raw.points.empty())
    throw ValidationError("raw_segment_sequence: empty trajectory");
  SegmentSeq out;
  out.reserve(raw.points.size());
  for (const auto& p : raw.points)
    out.push_back(net.project_point({p.lon, p.lat}).point.segment);
  return out;
}

double lcss_distance(const SegmentSeq& a, const SegmentSeq& b) {
  check_nonempty(a, "lcss_distance");
  check_nonempty(b, "lcss_distance");
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcss = static_cast<double>(prev[m]);
  return 1.0 - lcss / static_cast<double>(std::min(n, m));
}

double edr_distance(const SegmentSeq& a, const SegmentSeq& b) {
  check_nonempty(a, "edr_distance");
  check_nonempty(b, "edr_distance");
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t subst = a[i - 1] == b[j - 1] ? 0 : 1;
      cur[j] = std::min({prev[j - 1] + subst, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m));
}

EvalReport evaluate(const RoadNetwork& net,
                    const std::vector<MapTrajectory>& targets,
                    const std::vector<MapTrajectory>& preds) {
  if (targets.size() != preds.size())
    throw ValidationError("evaluate: target/prediction count mismatch");
  if (targets.empty()) throw ValidationError("evaluate: empty split");

  EvalReport rep;
  rep.count = targets.size();
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t points = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    rep.accuracy += accuracy(targets[i], preds[i]);
    const Rpf rpf = recall_precision_f1(targets[i], preds[i]);
    rep.recall += rpf.recall;
    rep.precision += rpf.precision;
    rep.f1 += rpf.f1;
    for (std::size_t j = 0; j < targets[i].points.size(); ++j) {
      const NetworkPoint a{targets[i].points[j].segment,
                           targets[i].points[j].ratio};
      const NetworkPoint b{preds[i].points[j].segment, preds[i].points[j].ratio};
      const double d = net.network_distance(a, b).meters;
      abs_sum += d;
      sq_sum += d * d;
      ++points;
    }
  }
  const double n = static_cast<double>(targets.size());
  rep.accuracy /= n;
  rep.recall /= n;
  rep.precision /= n;
  rep.f1 /= n;
  rep.mae_m = abs_sum / static_cast<double>(points);
  rep.rmse_m = std::sqrt(sq_sum / static_cast<double>(points));
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["mae_m"] = mae_m;
  j["rmse_m"] = rmse_m;
  j["recall"] = recall;
  j["precision"] = precision;
  j["f1"] = f1;
  j["count"] = count;
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(4);
  ss << "metric      value\n"
     << "accuracy    " << accuracy << "\n"
     << "mae_m       " << mae_m << "\n"
     << "rmse_m      " << rmse_m << "\n"
     << "recall      " << recall << "\n"
     << "precision   " << precision << "\n"
     << "f1          " << f1 << "\n"
     << "count       " << count << "\n";
  return ss.str();
}

std::vector<std::vector<double>> pairwise_distances(
    const std::vector<SegmentSeq>& seqs, const SeqMetric& metric) {
  const std::size_t n = seqs.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  // Flatten the upper triangle so the parallel loop is balanced.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  par::parallel_for(pairs.size(), [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    const double v = metric(seqs[i], seqs[j]);
    d[i][j] = v;
    d[j][i] = v;
  });
  return d;
}

std::vector<double> rank_eval(const std::vector<SegmentSeq>& truth,
                              const std::vector<SegmentSeq>& queries,
                              const SeqMetric& metric,
                              const std::vector<std::size_t>& ks) {
  if (truth.size() != queries.size())
    throw ValidationError("rank_eval: truth/query count mismatch");
  if (ks.empty()) throw ValidationError("rank_eval: no k values");
  const std::size_t n = truth.size();
  const std::size_t k_max = *std::max_element(ks.begin(), ks.end());
  if (k_max == 0) throw ValidationError("rank_eval: k must be positive");
  if (n < k_max + 1)
    throw ValidationError("rank_eval: need at least " +
                          std::to_string(k_max + 1) + " trajectories, have " +
                          std::to_string(n));

  const auto d_truth = pairwise_distances(truth, metric);
  const auto d_query = pairwise_distances(queries, metric);

  // True most-similar neighbor on ground truth; smaller index wins ties.
  std::vector<std::size_t> ts(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && d_truth[i][j] < d_truth[i][best]) best = j;
    ts[i] = best;
  }

  // Rank of the true neighbor in each query's neighbor list: the number
  // of neighbors strictly closer, plus equal-distance ones with a
  // smaller index (the deterministic tie order).
  std::vector<double> out(ks.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double d_ts = d_query[i][ts[i]];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || j == ts[i]) continue;
      if (d_query[i][j] < d_ts || (d_query[i][j] == d_ts && j < ts[i])) ++rank;
    }
    for (std::size_t k = 0; k < ks.size(); ++k)
      if (rank < ks[k]) out[k] += 1.0;
  }
  for (double& v : out) v /= static_cast<double>(n);
  return out;
}

}  // namespace trajrec
