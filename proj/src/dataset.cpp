#include "trajrec/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "trajrec/errors.hpp"
#include "trajrec/rng.hpp"

namespace trajrec {

namespace {

// Position after moving `target_m` along the spans of a path.
MapPoint point_along_spans(const RoadNetwork& net,
                           const std::vector<PathSpan>& spans, double target_m,
                           double t) {
  double walked = 0;
  for (const auto& span : spans) {
    double len = std::abs(span.r_to - span.r_from) * net.segment(span.segment).length_m;
    if (target_m <= walked + len || &span == &spans.back()) {
      double f = len > 0 ? std::clamp((target_m - walked) / len, 0.0, 1.0) : 0.0;
      double r = span.r_from + f * (span.r_to - span.r_from);
      return {span.segment, std::clamp(r, 0.0, 1.0), t};
    }
    walked += len;
  }
  // Unreachable: the last span branch above always returns.
  return {spans.back().segment, spans.back().r_to, t};
}

}  // namespace

MapTrajectory interpolate_to_interval(const RoadNetwork& net,
                                      const MapTrajectory& traj,
                                      double eps_tau_s) {
  if (!(eps_tau_s > 0)) {
    throw ValidationError("interpolate_to_interval: eps_tau must be > 0");
  }
  validate(traj, net);
  if (traj.points.size() < 2) {
    throw ValidationError("trajectory " + std::to_string(traj.id) +
                          ": needs at least 2 points");
  }

  const double t1 = traj.points.front().t;
  const double t_last = traj.points.back().t;
  const std::size_t n =
      static_cast<std::size_t>(std::floor((t_last - t1) / eps_tau_s)) + 1;

  MapTrajectory out;
  out.id = traj.id;
  out.points.reserve(n);

  std::size_t seg_i = 0;  // bracketing input interval [seg_i, seg_i+1]
  NetworkPath cached_path;
  double cached_len = 0;
  bool have_path = false;

  for (std::size_t k = 0; k < n; ++k) {
    const double t = t1 + static_cast<double>(k) * eps_tau_s;
    while (seg_i + 2 < traj.points.size() && traj.points[seg_i + 1].t <= t) {
      ++seg_i;
      have_path = false;
    }
    const MapPoint& a = traj.points[seg_i];
    const MapPoint& b = traj.points[seg_i + 1];

    if (std::abs(t - a.t) < 1e-9) {
      out.points.push_back({a.segment, a.ratio, t});
      continue;
    }
    if (std::abs(t - b.t) < 1e-9) {
      out.points.push_back({b.segment, b.ratio, t});
      continue;
    }

    if (!have_path) {
      cached_path = net.shortest_path({a.segment, a.ratio}, {b.segment, b.ratio});
      if (!cached_path.dist.connected) {
        throw DataError("interpolate_to_interval: trajectory " +
                        std::to_string(traj.id) + " points " +
                        std::to_string(seg_i) + " and " +
                        std::to_string(seg_i + 1) + " are mutually unreachable");
      }
      cached_len = cached_path.dist.meters;
      have_path = true;
    }

    const double f = (t - a.t) / (b.t - a.t);
    out.points.push_back(
        point_along_spans(net, cached_path.spans, f * cached_len, t));
  }
  return out;
}

namespace {

template <typename Point, typename Convert>
RawTrajectory downsample_impl(std::int64_t id, const std::vector<Point>& pts,
                              double keep_prob, std::uint64_t seed,
                              Convert&& convert) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ValidationError("downsample: keep_prob must be in (0,1]");
  }
  if (pts.size() < 2) {
    throw ValidationError("downsample: trajectory " + std::to_string(id) +
                          " needs at least 2 points");
  }
  Rng rng(seed);
  RawTrajectory out;
  out.id = id;
  out.points.push_back(convert(pts.front()));
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    if (rng.bernoulli(keep_prob)) out.points.push_back(convert(pts[i]));
  }
  out.points.push_back(convert(pts.back()));
  return out;
}

}  // namespace

RawTrajectory downsample(const RawTrajectory& traj, double keep_prob,
                         std::uint64_t seed) {
  return downsample_impl(traj.id, traj.points, keep_prob, seed,
                         [](const RawPoint& p) { return p; });
}

RawTrajectory downsample(const RoadNetwork& net, const MapTrajectory& traj,
                         double keep_prob, std::uint64_t seed) {
  return downsample_impl(traj.id, traj.points, keep_prob, seed,
                         [&](const MapPoint& p) {
                           LonLat c = net.point_at({p.segment, p.ratio});
                           return RawPoint{c.lon, c.lat, p.t};
                         });
}

DatasetSplit build_splits(std::vector<TrajectoryPair> pairs, std::uint64_t seed) {
  if (pairs.size() < 10) {
    throw ValidationError("build_splits: need at least 10 pairs, got " +
                          std::to_string(pairs.size()));
  }
  Rng rng(seed);
  // Fisher-Yates with our own generator so the permutation is stable
  // across standard library implementations.
  for (std::size_t i = pairs.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.integer(i));
    std::swap(pairs[i - 1], pairs[j]);
  }

  const std::size_t n = pairs.size();
  const std::size_t n_train = static_cast<std::size_t>(std::floor(0.7 * n));
  const std::size_t n_valid = static_cast<std::size_t>(std::floor(0.2 * n));

  DatasetSplit split;
  split.seed = seed;
  split.train.assign(pairs.begin(), pairs.begin() + n_train);
  split.valid.assign(pairs.begin() + n_train, pairs.begin() + n_train + n_valid);
  split.test.assign(pairs.begin() + n_train + n_valid, pairs.end());
  return split;
}

void save_pairs(const std::vector<TrajectoryPair>& pairs,
                const std::string& dir, const std::string& name) {
  std::vector<RawTrajectory> inputs;
  std::vector<MapTrajectory> targets;
  inputs.reserve(pairs.size());
  targets.reserve(pairs.size());
  for (const auto& [raw, truth] : pairs) {
    inputs.push_back(raw);
    targets.push_back(truth);
  }
  save_raw_trajectories(inputs, dir + "/" + name + "_input.jsonl");
  save_map_trajectories(targets, dir + "/" + name + "_target.jsonl");
}

std::vector<TrajectoryPair> load_pairs(const std::string& dir,
                                       const std::string& name) {
  auto inputs = load_raw_trajectories(dir + "/" + name + "_input.jsonl");
  auto targets = load_map_trajectories(dir + "/" + name + "_target.jsonl");
  if (inputs.size() != targets.size())
    throw DataError("split '" + name + "': " + std::to_string(inputs.size()) +
                    " inputs but " + std::to_string(targets.size()) +
                    " targets");
  std::vector<TrajectoryPair> pairs;
  pairs.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].id != targets[i].id)
      throw DataError("split '" + name + "' row " + std::to_string(i) +
                      ": input id " + std::to_string(inputs[i].id) +
                      " does not match target id " +
                      std::to_string(targets[i].id));
    pairs.emplace_back(std::move(inputs[i]), std::move(targets[i]));
  }
  return pairs;
}

}  // namespace trajrec
