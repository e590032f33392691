#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trajrec/geo.hpp"

namespace trajrec {

struct RoadSegment {
  std::int64_t id = -1;
  std::int64_t from_node = -1;
  std::int64_t to_node = -1;
  double length_m = 0.0;
  std::vector<LonLat> geometry;        // >= 2 vertices
  std::vector<double> vertex_arc_m;    // prefix arclength per vertex
};

// A point on the network: fractional arclength position along a segment.
struct NetworkPoint {
  std::int64_t segment = -1;
  double ratio = 0.0;
};

struct PointProjection {
  NetworkPoint point;
  double dist_m = 0.0;
  LonLat coord;
};

// One directed traversal of (part of) a segment along a network path.
struct PathSpan {
  std::int64_t segment = -1;
  double r_from = 0.0;
  double r_to = 0.0;
};

struct NetworkDistance {
  double meters = 0.0;
  bool connected = true;  // false when the haversine fallback was used
};

struct NetworkPath {
  NetworkDistance dist;
  std::vector<PathSpan> spans;  // empty when not connected
};

// Writes the same CSV format RoadNetwork::load reads.
void save_segments_csv(const std::vector<RoadSegment>& segments,
                       const std::string& path);

// Directed road-segment graph with a uniform-grid spatial index.
// Immutable after construction; concurrent readers are safe.
class RoadNetwork {
 public:
  // Loads a segments CSV: header `id,u,v,length_m,geometry`, geometry
  // formatted as `lon lat;lon lat;...`.
  static RoadNetwork load(const std::string& path);
  static RoadNetwork from_segments(std::vector<RoadSegment> segments);

  std::size_t size() const { return segments_.size(); }
  bool empty() const { return segments_.empty(); }

  bool has_segment(std::int64_t id) const { return index_of_.count(id) > 0; }
  const RoadSegment& segment(std::int64_t id) const;
  // Dense index in [0, size()) assigned in increasing id order; this is
  // the row index used by the model's per-segment matrices.
  std::size_t index_of(std::int64_t id) const;
  std::int64_t id_at(std::size_t index) const { return ids_[index]; }
  const std::vector<std::int64_t>& segment_ids() const { return ids_; }

  // Directed segment-to-segment edges (u.to_node == v.from_node).
  const std::vector<std::pair<std::int64_t, std::int64_t>>& edges() const {
    return edges_;
  }
  const std::vector<std::int64_t>& out_neighbors(std::int64_t id) const;
  const std::vector<std::int64_t>& in_neighbors(std::int64_t id) const;
  // Segments sharing a junction with `id` (undirected adjacency).
  std::vector<std::int64_t> junction_neighbors(std::int64_t id) const;

  // Coordinate of a network point, interpolated along the geometry.
  LonLat point_at(const NetworkPoint& np) const;

  // Closest network point to p over all segments. Ties by smaller id.
  PointProjection project_point(const LonLat& p) const;
  PointProjection project_onto_segment(std::int64_t id, const LonLat& p) const;

  // Ids of all segments with minimum distance to p <= eta_m, ascending.
  std::vector<std::int64_t> subregion(const LonLat& p, double eta_m) const;

  // Shortest-path distance between two network points, treating the
  // graph as undirected and accounting for partial offsets on the end
  // segments. Unreachable pairs fall back to the haversine distance
  // between the two coordinates, with connected=false.
  NetworkDistance network_distance(const NetworkPoint& a,
                                   const NetworkPoint& b) const;
  // Same, with the realized route as a sequence of segment spans.
  NetworkPath shortest_path(const NetworkPoint& a, const NetworkPoint& b) const;

  // Linear-scan references used to verify the spatial index.
  PointProjection project_point_bruteforce(const LonLat& p) const;
  std::vector<std::int64_t> subregion_bruteforce(const LonLat& p,
                                                 double eta_m) const;

 private:
  void build_graph();
  void build_spatial_index(double cell_m);
  void validate_point(const NetworkPoint& np, const char* what) const;
  std::vector<std::size_t> grid_candidates(const LonLat& p,
                                           double radius_m) const;

  std::vector<RoadSegment> segments_;               // sorted by id
  std::vector<std::int64_t> ids_;                   // ids_[i] == segments_[i].id
  std::unordered_map<std::int64_t, std::size_t> index_of_;

  std::vector<std::pair<std::int64_t, std::int64_t>> edges_;
  std::vector<std::vector<std::int64_t>> out_adj_;  // by dense index
  std::vector<std::vector<std::int64_t>> in_adj_;

  // Junction graph for shortest paths.
  struct JunctionArc {
    std::size_t to_junction;
    std::size_t segment_index;
    double length_m;
  };
  std::unordered_map<std::int64_t, std::size_t> junction_index_;
  std::vector<std::vector<JunctionArc>> junction_adj_;
  std::vector<std::size_t> seg_from_junction_;  // per dense segment index
  std::vector<std::size_t> seg_to_junction_;

  // Uniform grid over the bounding box.
  double cell_lon_deg_ = 0, cell_lat_deg_ = 0;
  double min_lon_ = 0, min_lat_ = 0;
  int grid_nx_ = 0, grid_ny_ = 0;
  double meters_per_lon_deg_ = 1, meters_per_lat_deg_ = 1;
  std::vector<std::vector<std::uint32_t>> grid_cells_;
};

}  // namespace trajrec
