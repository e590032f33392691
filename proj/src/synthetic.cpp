#include "trajrec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "trajrec/errors.hpp"
#include "trajrec/rng.hpp"

namespace trajrec {

double time_of_day_factor(double unix_t, const SyntheticParams& params) {
  double hour = std::fmod(unix_t, 86400.0) / 3600.0;
  if (hour < 0) hour += 24.0;
  auto bump = [&](double peak) {
    double d = std::abs(hour - peak);
    d = std::min(d, 24.0 - d);
    return std::exp(-(d * d) / (2.0 * params.peak_sigma_h * params.peak_sigma_h));
  };
  return std::max(bump(params.peak_hour_am), bump(params.peak_hour_pm));
}

double segment_speed(double base_speed, double unix_t,
                     const SyntheticParams& params) {
  double g = time_of_day_factor(unix_t, params);
  return base_speed / (1.0 + (params.peak_factor - 1.0) * g);
}

std::vector<double> draw_base_speeds(const RoadNetwork& net, std::uint64_t seed,
                                     const SyntheticParams& params) {
  Rng rng(Rng::derive(seed, 0xba5e));
  std::vector<double> speeds(net.size());
  for (auto& s : speeds) {
    s = rng.uniform(params.base_speed_lo, params.base_speed_hi);
  }
  return speeds;
}

namespace {

struct Traversal {
  std::size_t seg_index;
  bool forward;  // ratio 0 -> 1
  double t_entry;
  double t_exit;
};

}  // namespace

std::vector<MapTrajectory> generate_synthetic(const RoadNetwork& net,
                                              std::size_t count,
                                              const SyntheticParams& params,
                                              std::uint64_t seed) {
  if (count == 0) return {};
  if (net.empty()) {
    throw DataError("generate_synthetic: cannot walk an empty network");
  }
  if (params.min_segments < 1 || params.max_segments < params.min_segments) {
    throw ValidationError("generate_synthetic: bad walk length bounds");
  }
  if (!(params.eps_tau_s > 0)) {
    throw ValidationError("generate_synthetic: eps_tau must be > 0");
  }

  const std::vector<double> base_speeds = draw_base_speeds(net, seed, params);

  // Star of each junction, by dense segment index.
  std::vector<std::vector<std::size_t>> star;
  std::vector<std::size_t> seg_from(net.size()), seg_to(net.size());
  {
    std::unordered_map<std::int64_t, std::size_t> jid;
    for (std::size_t i = 0; i < net.size(); ++i) {
      const RoadSegment& s = net.segment(net.id_at(i));
      auto j_of = [&](std::int64_t node) {
        auto [it, inserted] = jid.emplace(node, jid.size());
        if (inserted) star.emplace_back();
        return it->second;
      };
      seg_from[i] = j_of(s.from_node);
      seg_to[i] = j_of(s.to_node);
      star[seg_from[i]].push_back(i);
      if (seg_to[i] != seg_from[i]) star[seg_to[i]].push_back(i);
    }
  }

  std::vector<MapTrajectory> out;
  out.reserve(count);
  for (std::size_t traj_i = 0; traj_i < count; ++traj_i) {
    Rng rng(Rng::derive(seed, traj_i + 1));
    const int walk_len =
        params.min_segments +
        static_cast<int>(rng.integer(
            static_cast<std::uint64_t>(params.max_segments - params.min_segments + 1)));

    std::size_t cur = static_cast<std::size_t>(rng.integer(net.size()));
    bool forward = rng.bernoulli(0.5);
    double t = rng.uniform(params.start_unix_lo, params.start_unix_hi);

    std::vector<Traversal> schedule;
    schedule.reserve(walk_len);
    for (int step = 0; step < walk_len; ++step) {
      const RoadSegment& seg = net.segment(net.id_at(cur));
      double speed = segment_speed(base_speeds[cur], t, params);
      Traversal tr{cur, forward, t, t + seg.length_m / speed};
      schedule.push_back(tr);
      t = tr.t_exit;

      std::size_t exit_j = forward ? seg_to[cur] : seg_from[cur];
      std::vector<std::size_t> options;
      for (std::size_t nb : star[exit_j]) {
        if (nb != cur) options.push_back(nb);
      }
      std::size_t next;
      if (options.empty()) {
        next = cur;  // dead end: turn around
      } else {
        next = options[rng.integer(options.size())];
      }
      forward = seg_from[next] == exit_j;
      cur = next;
    }

    const double t0 = schedule.front().t_entry;
    const double t_end = schedule.back().t_exit;
    const std::size_t n =
        static_cast<std::size_t>(std::floor((t_end - t0) / params.eps_tau_s)) + 1;
    if (n < 2) {
      throw DataError("generate_synthetic: walk shorter than one grid step; "
                      "increase min_segments or decrease eps_tau");
    }

    MapTrajectory traj;
    traj.id = static_cast<std::int64_t>(traj_i);
    traj.points.reserve(n);
    std::size_t sched_i = 0;
    for (std::size_t k = 0; k < n; ++k) {
      double tk = t0 + static_cast<double>(k) * params.eps_tau_s;
      while (sched_i + 1 < schedule.size() && schedule[sched_i].t_exit < tk) {
        ++sched_i;
      }
      const Traversal& tr = schedule[sched_i];
      double span = tr.t_exit - tr.t_entry;
      double f = span > 0 ? std::clamp((tk - tr.t_entry) / span, 0.0, 1.0) : 0.0;
      double ratio = tr.forward ? f : 1.0 - f;
      traj.points.push_back({net.id_at(tr.seg_index), ratio, tk});
    }
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<RoadSegment> make_grid_segments(int rows, int cols, double spacing_m,
                                            double origin_lon, double origin_lat) {
  if (rows < 2 || cols < 2) {
    throw ValidationError("make_grid_segments: need at least a 2x2 grid");
  }
  constexpr double kMetersPerLatDeg = kEarthRadiusM * std::numbers::pi / 180.0;
  const double dlat = spacing_m / kMetersPerLatDeg;
  const double dlon =
      spacing_m /
      (kMetersPerLatDeg * std::cos(origin_lat * std::numbers::pi / 180.0));

  auto coord = [&](int r, int c) {
    return LonLat{origin_lon + c * dlon, origin_lat + r * dlat};
  };
  auto node = [&](int r, int c) { return static_cast<std::int64_t>(r) * cols + c; };

  std::vector<RoadSegment> segs;
  std::int64_t next_id = 0;
  auto add = [&](int r1, int c1, int r2, int c2, bool fwd) {
    RoadSegment s;
    s.id = next_id++;
    if (!fwd) {
      std::swap(r1, r2);
      std::swap(c1, c2);
    }
    s.from_node = node(r1, c1);
    s.to_node = node(r2, c2);
    s.geometry = {coord(r1, c1), coord(r2, c2)};
    s.length_m = haversine_m(s.geometry[0], s.geometry[1]);
    segs.push_back(std::move(s));
  };

  for (int r = 0; r < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) add(r, c, r, c + 1, (r + c) % 2 == 0);
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c < cols; ++c) add(r, c, r + 1, c, (r + c) % 2 == 0);
  return segs;
}

}  // namespace trajrec
