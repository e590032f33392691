#include "trajrec/trajectory.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "trajrec/errors.hpp"

namespace trajrec {

namespace {

using nlohmann::json;

void check_increasing(const std::vector<double>& ts, std::int64_t id) {
  for (std::size_t i = 1; i < ts.size(); ++i) {
    if (!(ts[i] > ts[i - 1])) {
      throw ValidationError("trajectory " + std::to_string(id) +
                            ": timestamps not strictly increasing at point " +
                            std::to_string(i));
    }
  }
}

json parse_line(const std::string& line, const std::string& path,
                std::size_t line_no) {
  json obj = json::parse(line, nullptr, false);
  if (obj.is_discarded() || !obj.is_object() || !obj.contains("id") ||
      !obj.contains("points") || !obj["points"].is_array()) {
    throw ParseError(path + " line " + std::to_string(line_no) +
                     ": expected {\"id\":..., \"points\":[[...],...]}");
  }
  return obj;
}

template <typename Traj, typename PointFn>
std::vector<Traj> load_jsonl(const std::string& path, PointFn&& make_point) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open trajectory file: " + path);
  std::vector<Traj> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj = parse_line(line, path, line_no);
    Traj traj;
    traj.id = obj["id"].template get<std::int64_t>();
    for (const auto& p : obj["points"]) {
      if (!p.is_array() || p.size() != 3 || !p[0].is_number() ||
          !p[1].is_number() || !p[2].is_number()) {
        throw ParseError(path + " line " + std::to_string(line_no) +
                         ": each point must be a 3-number array");
      }
      traj.points.push_back(make_point(p[0].template get<double>(),
                                       p[1].template get<double>(),
                                       p[2].template get<double>()));
    }
    out.push_back(std::move(traj));
  }
  return out;
}

}  // namespace

void validate(const RawTrajectory& traj) {
  if (traj.points.size() < 2) {
    throw ValidationError("trajectory " + std::to_string(traj.id) +
                          ": needs at least 2 points");
  }
  std::vector<double> ts;
  for (const auto& p : traj.points) ts.push_back(p.t);
  check_increasing(ts, traj.id);
}

void validate(const MapTrajectory& traj, const RoadNetwork& net) {
  std::vector<double> ts;
  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    const auto& p = traj.points[i];
    if (!net.has_segment(p.segment)) {
      throw ValidationError("trajectory " + std::to_string(traj.id) +
                            ": unknown segment " + std::to_string(p.segment) +
                            " at point " + std::to_string(i));
    }
    if (!(p.ratio >= 0.0 && p.ratio <= 1.0)) {
      throw ValidationError("trajectory " + std::to_string(traj.id) +
                            ": ratio outside [0,1] at point " + std::to_string(i));
    }
    ts.push_back(p.t);
  }
  check_increasing(ts, traj.id);
}

std::vector<RawTrajectory> load_raw_trajectories(const std::string& path) {
  return load_jsonl<RawTrajectory>(path, [](double a, double b, double c) {
    return RawPoint{a, b, c};
  });
}

std::vector<MapTrajectory> load_map_trajectories(const std::string& path) {
  return load_jsonl<MapTrajectory>(path, [](double a, double b, double c) {
    double seg_int = 0;
    if (std::modf(a, &seg_int) != 0.0) {
      throw ParseError("map trajectory point has non-integer segment id");
    }
    return MapPoint{static_cast<std::int64_t>(a), b, c};
  });
}

namespace {

void write_number(std::ofstream& out, double v) {
  json j = v;
  out << j.dump();
}

}  // namespace

void save_raw_trajectories(const std::vector<RawTrajectory>& trajs,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write trajectory file: " + path);
  for (const auto& traj : trajs) {
    out << "{\"id\":" << traj.id << ",\"points\":[";
    for (std::size_t i = 0; i < traj.points.size(); ++i) {
      if (i) out << ',';
      out << '[';
      write_number(out, traj.points[i].lon);
      out << ',';
      write_number(out, traj.points[i].lat);
      out << ',';
      write_number(out, traj.points[i].t);
      out << ']';
    }
    out << "]}\n";
  }
}

void save_map_trajectories(const std::vector<MapTrajectory>& trajs,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write trajectory file: " + path);
  for (const auto& traj : trajs) {
    out << "{\"id\":" << traj.id << ",\"points\":[";
    for (std::size_t i = 0; i < traj.points.size(); ++i) {
      if (i) out << ',';
      out << '[' << traj.points[i].segment << ',';
      write_number(out, traj.points[i].ratio);
      out << ',';
      write_number(out, traj.points[i].t);
      out << ']';
    }
    out << "]}\n";
  }
}

}  // namespace trajrec
