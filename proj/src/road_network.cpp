#include "trajrec/road_network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <queue>

#include "trajrec/errors.hpp"

namespace trajrec {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kMetersPerLatDeg = kEarthRadiusM * kDegToRad;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::int64_t parse_int(const std::string& s, std::size_t line, const char* field) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("segments CSV line " + std::to_string(line) + ": bad " +
                     field + " value '" + s + "'");
  }
  return v;
}

double parse_double(const std::string& s, std::size_t line, const char* field) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("segments CSV line " + std::to_string(line) + ": bad " +
                     field + " value '" + s + "'");
  }
  return v;
}

}  // namespace

RoadNetwork RoadNetwork::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open segments CSV: " + path);

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) {
    throw ParseError("segments CSV " + path + ": empty file");
  }
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,u,v,length_m,geometry") {
    throw ParseError("segments CSV line 1: expected header "
                     "'id,u,v,length_m,geometry', got '" + line + "'");
  }

  std::vector<RoadSegment> segs;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    auto fields = split(line, ',');
    if (fields.size() != 5) {
      throw ParseError("segments CSV line " + std::to_string(line_no) +
                       ": expected 5 fields, got " + std::to_string(fields.size()));
    }
    RoadSegment seg;
    seg.id = parse_int(fields[0], line_no, "id");
    seg.from_node = parse_int(fields[1], line_no, "u");
    seg.to_node = parse_int(fields[2], line_no, "v");
    seg.length_m = parse_double(fields[3], line_no, "length_m");

    for (const auto& vertex : split(fields[4], ';')) {
      auto coords = split(vertex, ' ');
      if (coords.size() != 2) {
        throw ParseError("segments CSV line " + std::to_string(line_no) +
                         ": bad geometry vertex '" + vertex + "'");
      }
      seg.geometry.push_back({parse_double(coords[0], line_no, "lon"),
                              parse_double(coords[1], line_no, "lat")});
    }
    segs.push_back(std::move(seg));
  }
  return from_segments(std::move(segs));
}

void save_segments_csv(const std::vector<RoadSegment>& segments,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write segments CSV: " + path);
  out << "id,u,v,length_m,geometry\n";
  out.precision(17);
  for (const auto& s : segments) {
    out << s.id << ',' << s.from_node << ',' << s.to_node << ',' << s.length_m
        << ',';
    for (std::size_t i = 0; i < s.geometry.size(); ++i) {
      if (i) out << ';';
      out << s.geometry[i].lon << ' ' << s.geometry[i].lat;
    }
    out << '\n';
  }
}

RoadNetwork RoadNetwork::from_segments(std::vector<RoadSegment> segments) {
  RoadNetwork net;
  net.segments_ = std::move(segments);
  std::sort(net.segments_.begin(), net.segments_.end(),
            [](const RoadSegment& a, const RoadSegment& b) { return a.id < b.id; });

  for (std::size_t i = 0; i < net.segments_.size(); ++i) {
    RoadSegment& seg = net.segments_[i];
    if (seg.id < 0) {
      throw ValidationError("segment id must be >= 0, got " + std::to_string(seg.id));
    }
    if (!net.index_of_.emplace(seg.id, i).second) {
      throw ValidationError("duplicate segment id " + std::to_string(seg.id));
    }
    if (seg.geometry.size() < 2) {
      throw ValidationError("segment " + std::to_string(seg.id) +
                            ": geometry needs at least 2 vertices");
    }
    if (!(seg.length_m > 0)) {
      throw ValidationError("segment " + std::to_string(seg.id) +
                            ": length must be positive");
    }
    seg.vertex_arc_m.assign(seg.geometry.size(), 0.0);
    for (std::size_t v = 1; v < seg.geometry.size(); ++v) {
      seg.vertex_arc_m[v] = seg.vertex_arc_m[v - 1] +
                            haversine_m(seg.geometry[v - 1], seg.geometry[v]);
    }
    double geom_len = seg.vertex_arc_m.back();
    if (std::abs(geom_len - seg.length_m) > 0.001 * seg.length_m + 1e-9) {
      throw ValidationError("segment " + std::to_string(seg.id) +
                            ": declared length " + std::to_string(seg.length_m) +
                            " differs from geometry length " +
                            std::to_string(geom_len) + " by more than 0.1%");
    }
    net.ids_.push_back(seg.id);
  }

  net.build_graph();
  net.build_spatial_index(200.0);
  return net;
}

void RoadNetwork::build_graph() {
  const std::size_t n = segments_.size();
  out_adj_.assign(n, {});
  in_adj_.assign(n, {});
  seg_from_junction_.assign(n, 0);
  seg_to_junction_.assign(n, 0);

  auto junction_id = [&](std::int64_t node) {
    auto [it, inserted] = junction_index_.emplace(node, junction_index_.size());
    if (inserted) junction_adj_.emplace_back();
    return it->second;
  };

  std::unordered_map<std::int64_t, std::vector<std::size_t>> starts_at;
  for (std::size_t i = 0; i < n; ++i) {
    const RoadSegment& seg = segments_[i];
    starts_at[seg.from_node].push_back(i);
    seg_from_junction_[i] = junction_id(seg.from_node);
    seg_to_junction_[i] = junction_id(seg.to_node);
    junction_adj_[seg_from_junction_[i]].push_back({seg_to_junction_[i], i, seg.length_m});
    junction_adj_[seg_to_junction_[i]].push_back({seg_from_junction_[i], i, seg.length_m});
  }

  for (std::size_t i = 0; i < n; ++i) {
    auto it = starts_at.find(segments_[i].to_node);
    if (it == starts_at.end()) continue;
    for (std::size_t j : it->second) {
      if (j == i) continue;
      edges_.emplace_back(segments_[i].id, segments_[j].id);
      out_adj_[i].push_back(segments_[j].id);
      in_adj_[j].push_back(segments_[i].id);
    }
  }
  std::sort(edges_.begin(), edges_.end());
  for (auto& v : out_adj_) std::sort(v.begin(), v.end());
  for (auto& v : in_adj_) std::sort(v.begin(), v.end());
}

void RoadNetwork::build_spatial_index(double cell_m) {
  if (segments_.empty()) return;

  double min_lon = kInf, max_lon = -kInf, min_lat = kInf, max_lat = -kInf;
  for (const auto& seg : segments_) {
    for (const auto& v : seg.geometry) {
      min_lon = std::min(min_lon, v.lon);
      max_lon = std::max(max_lon, v.lon);
      min_lat = std::min(min_lat, v.lat);
      max_lat = std::max(max_lat, v.lat);
    }
  }
  min_lon_ = min_lon;
  min_lat_ = min_lat;
  meters_per_lat_deg_ = kMetersPerLatDeg;
  // Use the most compressed longitude scale over the box so that
  // meter->degree conversions in queries stay conservative.
  double worst_lat = std::max(std::abs(min_lat), std::abs(max_lat));
  meters_per_lon_deg_ =
      std::max(kMetersPerLatDeg * std::cos(worst_lat * kDegToRad), 1.0);

  cell_lon_deg_ = cell_m / meters_per_lon_deg_;
  cell_lat_deg_ = cell_m / meters_per_lat_deg_;
  grid_nx_ = std::max(1, static_cast<int>((max_lon - min_lon) / cell_lon_deg_) + 1);
  grid_ny_ = std::max(1, static_cast<int>((max_lat - min_lat) / cell_lat_deg_) + 1);
  grid_cells_.assign(static_cast<std::size_t>(grid_nx_) * grid_ny_, {});

  auto cell_x = [&](double lon) {
    return std::clamp(static_cast<int>((lon - min_lon_) / cell_lon_deg_), 0, grid_nx_ - 1);
  };
  auto cell_y = [&](double lat) {
    return std::clamp(static_cast<int>((lat - min_lat_) / cell_lat_deg_), 0, grid_ny_ - 1);
  };

  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& g = segments_[i].geometry;
    for (std::size_t v = 1; v < g.size(); ++v) {
      int x0 = cell_x(std::min(g[v - 1].lon, g[v].lon));
      int x1 = cell_x(std::max(g[v - 1].lon, g[v].lon));
      int y0 = cell_y(std::min(g[v - 1].lat, g[v].lat));
      int y1 = cell_y(std::max(g[v - 1].lat, g[v].lat));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          auto& cell = grid_cells_[static_cast<std::size_t>(y) * grid_nx_ + x];
          if (cell.empty() || cell.back() != i) cell.push_back(static_cast<std::uint32_t>(i));
        }
      }
    }
  }
  for (auto& cell : grid_cells_) {
    std::sort(cell.begin(), cell.end());
    cell.erase(std::unique(cell.begin(), cell.end()), cell.end());
  }
}

std::vector<std::size_t> RoadNetwork::grid_candidates(const LonLat& p,
                                                      double radius_m) const {
  // Pad by one cell so polyline interiors crossing cell borders are safe.
  double dlon = radius_m / meters_per_lon_deg_ + cell_lon_deg_;
  double dlat = radius_m / meters_per_lat_deg_ + cell_lat_deg_;
  int x0 = std::clamp(static_cast<int>(std::floor((p.lon - dlon - min_lon_) / cell_lon_deg_)), 0, grid_nx_ - 1);
  int x1 = std::clamp(static_cast<int>(std::floor((p.lon + dlon - min_lon_) / cell_lon_deg_)), 0, grid_nx_ - 1);
  int y0 = std::clamp(static_cast<int>(std::floor((p.lat - dlat - min_lat_) / cell_lat_deg_)), 0, grid_ny_ - 1);
  int y1 = std::clamp(static_cast<int>(std::floor((p.lat + dlat - min_lat_) / cell_lat_deg_)), 0, grid_ny_ - 1);

  std::vector<std::size_t> out;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      for (std::uint32_t idx : grid_cells_[static_cast<std::size_t>(y) * grid_nx_ + x]) {
        out.push_back(idx);
      }
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

const RoadSegment& RoadNetwork::segment(std::int64_t id) const {
  auto it = index_of_.find(id);
  if (it == index_of_.end()) {
    throw ValidationError("unknown segment id " + std::to_string(id));
  }
  return segments_[it->second];
}

std::size_t RoadNetwork::index_of(std::int64_t id) const {
  auto it = index_of_.find(id);
  if (it == index_of_.end()) {
    throw ValidationError("unknown segment id " + std::to_string(id));
  }
  return it->second;
}

const std::vector<std::int64_t>& RoadNetwork::out_neighbors(std::int64_t id) const {
  return out_adj_[index_of(id)];
}

const std::vector<std::int64_t>& RoadNetwork::in_neighbors(std::int64_t id) const {
  return in_adj_[index_of(id)];
}

std::vector<std::int64_t> RoadNetwork::junction_neighbors(std::int64_t id) const {
  std::size_t i = index_of(id);
  std::vector<std::int64_t> out;
  for (std::size_t j : {seg_from_junction_[i], seg_to_junction_[i]}) {
    for (const auto& arc : junction_adj_[j]) {
      if (arc.segment_index != i) out.push_back(segments_[arc.segment_index].id);
    }
    if (seg_from_junction_[i] == seg_to_junction_[i]) break;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void RoadNetwork::validate_point(const NetworkPoint& np, const char* what) const {
  if (!has_segment(np.segment)) {
    throw ValidationError(std::string(what) + ": unknown segment id " +
                          std::to_string(np.segment));
  }
  if (!(np.ratio >= -1e-9 && np.ratio <= 1 + 1e-9)) {
    throw ValidationError(std::string(what) + ": ratio " +
                          std::to_string(np.ratio) + " outside [0,1]");
  }
}

LonLat RoadNetwork::point_at(const NetworkPoint& np) const {
  validate_point(np, "point_at");
  const RoadSegment& seg = segments_[index_of_.at(np.segment)];
  double r = std::clamp(np.ratio, 0.0, 1.0);
  double target = r * seg.vertex_arc_m.back();
  auto it = std::upper_bound(seg.vertex_arc_m.begin(), seg.vertex_arc_m.end(), target);
  std::size_t hi = std::min<std::size_t>(it - seg.vertex_arc_m.begin(),
                                         seg.geometry.size() - 1);
  if (hi == 0) hi = 1;
  std::size_t lo = hi - 1;
  double span = seg.vertex_arc_m[hi] - seg.vertex_arc_m[lo];
  double t = span > 0 ? (target - seg.vertex_arc_m[lo]) / span : 0.0;
  const LonLat& a = seg.geometry[lo];
  const LonLat& b = seg.geometry[hi];
  return {a.lon + t * (b.lon - a.lon), a.lat + t * (b.lat - a.lat)};
}

PointProjection RoadNetwork::project_onto_segment(std::int64_t id,
                                                  const LonLat& p) const {
  const RoadSegment& seg = segment(id);
  PointProjection best;
  best.dist_m = kInf;
  for (std::size_t v = 1; v < seg.geometry.size(); ++v) {
    EdgeProjection proj = project_to_edge(p, seg.geometry[v - 1], seg.geometry[v]);
    if (proj.dist_m < best.dist_m) {
      double arc = seg.vertex_arc_m[v - 1] +
                   proj.t * (seg.vertex_arc_m[v] - seg.vertex_arc_m[v - 1]);
      double total = seg.vertex_arc_m.back();
      best.dist_m = proj.dist_m;
      best.point = {id, total > 0 ? std::clamp(arc / total, 0.0, 1.0) : 0.0};
      best.coord = proj.point;
    }
  }
  return best;
}

PointProjection RoadNetwork::project_point(const LonLat& p) const {
  if (segments_.empty()) throw ValidationError("project_point: empty network");

  double radius = 2.0 * std::max(cell_lon_deg_ * meters_per_lon_deg_,
                                 cell_lat_deg_ * meters_per_lat_deg_);
  std::vector<std::size_t> cand;
  for (int attempt = 0; attempt < 64; ++attempt) {
    cand = grid_candidates(p, radius);
    if (!cand.empty()) break;
    radius *= 2;
  }
  if (cand.empty()) {  // pathological; fall back to all segments
    cand.resize(segments_.size());
    for (std::size_t i = 0; i < cand.size(); ++i) cand[i] = i;
  }

  auto best_of = [&](const std::vector<std::size_t>& idxs) {
    PointProjection best;
    best.dist_m = kInf;
    for (std::size_t i : idxs) {
      PointProjection pr = project_onto_segment(segments_[i].id, p);
      if (pr.dist_m < best.dist_m) best = pr;  // ascending id order breaks ties
    }
    return best;
  };

  PointProjection best = best_of(cand);
  // The nearest segment may sit in a cell outside the first non-empty
  // shell; re-query with the realized distance to make the scan exact.
  if (best.dist_m > 0) {
    std::vector<std::size_t> full = grid_candidates(p, best.dist_m + 1e-9);
    if (full.size() > cand.size()) {
      PointProjection wider = best_of(full);
      if (wider.dist_m < best.dist_m) best = wider;
    }
  }
  return best;
}

std::vector<std::int64_t> RoadNetwork::subregion(const LonLat& p, double eta_m) const {
  if (!(eta_m > 0)) throw ValidationError("subregion: eta must be > 0");
  std::vector<std::int64_t> out;
  for (std::size_t i : grid_candidates(p, eta_m)) {
    if (project_onto_segment(segments_[i].id, p).dist_m <= eta_m) {
      out.push_back(segments_[i].id);
    }
  }
  return out;  // candidate indices ascending == ids ascending
}

PointProjection RoadNetwork::project_point_bruteforce(const LonLat& p) const {
  if (segments_.empty()) throw ValidationError("project_point: empty network");
  PointProjection best;
  best.dist_m = kInf;
  for (const auto& seg : segments_) {
    PointProjection pr = project_onto_segment(seg.id, p);
    if (pr.dist_m < best.dist_m) best = pr;
  }
  return best;
}

std::vector<std::int64_t> RoadNetwork::subregion_bruteforce(const LonLat& p,
                                                            double eta_m) const {
  if (!(eta_m > 0)) throw ValidationError("subregion: eta must be > 0");
  std::vector<std::int64_t> out;
  for (const auto& seg : segments_) {
    if (project_onto_segment(seg.id, p).dist_m <= eta_m) out.push_back(seg.id);
  }
  return out;
}

namespace {

struct DijkstraEntry {
  double dist;
  std::size_t junction;
  bool operator>(const DijkstraEntry& o) const { return dist > o.dist; }
};

}  // namespace

NetworkPath RoadNetwork::shortest_path(const NetworkPoint& a,
                                       const NetworkPoint& b) const {
  validate_point(a, "network_distance");
  validate_point(b, "network_distance");
  const double ra = std::clamp(a.ratio, 0.0, 1.0);
  const double rb = std::clamp(b.ratio, 0.0, 1.0);

  NetworkPath path;
  if (a.segment == b.segment) {
    path.dist = {std::abs(ra - rb) * segment(a.segment).length_m, true};
    path.spans = {{a.segment, ra, rb}};
    return path;
  }

  const std::size_t ia = index_of(a.segment);
  const std::size_t ib = index_of(b.segment);
  const double len_a = segments_[ia].length_m;
  const double len_b = segments_[ib].length_m;

  constexpr std::size_t kNoPred = static_cast<std::size_t>(-1);
  std::vector<double> dist(junction_adj_.size(), kInf);
  std::vector<std::size_t> pred_junction(junction_adj_.size(), kNoPred);
  std::vector<std::size_t> pred_segment(junction_adj_.size(), kNoPred);

  std::priority_queue<DijkstraEntry, std::vector<DijkstraEntry>,
                      std::greater<DijkstraEntry>> pq;
  auto seed = [&](std::size_t j, double d) {
    if (d < dist[j]) {
      dist[j] = d;
      pq.push({d, j});
    }
  };
  seed(seg_from_junction_[ia], ra * len_a);
  seed(seg_to_junction_[ia], (1 - ra) * len_a);

  while (!pq.empty()) {
    auto [d, j] = pq.top();
    pq.pop();
    if (d > dist[j]) continue;
    for (const auto& arc : junction_adj_[j]) {
      double nd = d + arc.length_m;
      if (nd < dist[arc.to_junction]) {
        dist[arc.to_junction] = nd;
        pred_junction[arc.to_junction] = j;
        pred_segment[arc.to_junction] = arc.segment_index;
        pq.push({nd, arc.to_junction});
      }
    }
  }

  const std::size_t jb_from = seg_from_junction_[ib];
  const std::size_t jb_to = seg_to_junction_[ib];
  const double via_from = dist[jb_from] + rb * len_b;
  const double via_to = dist[jb_to] + (1 - rb) * len_b;

  if (!std::isfinite(via_from) && !std::isfinite(via_to)) {
    path.dist = {haversine_m(point_at(a), point_at(b)), false};
    return path;
  }

  std::size_t jb = via_from <= via_to ? jb_from : jb_to;
  path.dist = {std::min(via_from, via_to), true};

  // Reconstruct junction chain back to whichever end of segment a seeded it.
  std::vector<std::size_t> chain_junctions{jb};
  std::vector<std::size_t> chain_segments;
  std::size_t cur = jb;
  while (pred_junction[cur] != kNoPred) {
    chain_segments.push_back(pred_segment[cur]);
    cur = pred_junction[cur];
    chain_junctions.push_back(cur);
  }
  std::reverse(chain_junctions.begin(), chain_junctions.end());
  std::reverse(chain_segments.begin(), chain_segments.end());

  path.spans.push_back({a.segment, ra,
                        chain_junctions.front() == seg_from_junction_[ia] ? 0.0 : 1.0});
  for (std::size_t k = 0; k < chain_segments.size(); ++k) {
    std::size_t s = chain_segments[k];
    double r_from = chain_junctions[k] == seg_from_junction_[s] ? 0.0 : 1.0;
    path.spans.push_back({segments_[s].id, r_from, 1.0 - r_from});
  }
  path.spans.push_back({b.segment, jb == jb_from ? 0.0 : 1.0, rb});
  return path;
}

NetworkDistance RoadNetwork::network_distance(const NetworkPoint& a,
                                              const NetworkPoint& b) const {
  return shortest_path(a, b).dist;
}

}  // namespace trajrec
