#include "trajrec/road_network.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "trajrec/errors.hpp"
#include "trajrec/rng.hpp"

using namespace trajrec;

namespace {

// Independent all-pairs oracle: Floyd-Warshall over junction ids with
// undirected segment lengths, then endpoint-offset combination.
struct FloydOracle {
  std::map<std::int64_t, std::size_t> node_index;
  std::vector<std::vector<double>> dist;
  const std::vector<RoadSegment>* segs;

  explicit FloydOracle(const std::vector<RoadSegment>& segments) : segs(&segments) {
    for (const auto& s : segments) {
      node_index.emplace(s.from_node, node_index.size());
      node_index.emplace(s.to_node, node_index.size());
    }
    std::size_t n = node_index.size();
    const double inf = std::numeric_limits<double>::infinity();
    dist.assign(n, std::vector<double>(n, inf));
    for (std::size_t i = 0; i < n; ++i) dist[i][i] = 0;
    for (const auto& s : segments) {
      std::size_t u = node_index[s.from_node], v = node_index[s.to_node];
      dist[u][v] = std::min(dist[u][v], s.length_m);
      dist[v][u] = std::min(dist[v][u], s.length_m);
    }
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          dist[i][j] = std::min(dist[i][j], dist[i][k] + dist[k][j]);
  }

  const RoadSegment& seg(std::int64_t id) const {
    for (const auto& s : *segs)
      if (s.id == id) return s;
    throw std::runtime_error("oracle: unknown id");
  }

  double operator()(const NetworkPoint& a, const NetworkPoint& b) const {
    if (a.segment == b.segment)
      return std::abs(a.ratio - b.ratio) * seg(a.segment).length_m;
    const RoadSegment& sa = seg(a.segment);
    const RoadSegment& sb = seg(b.segment);
    double best = std::numeric_limits<double>::infinity();
    struct End { std::int64_t node; double offset; };
    End ea[2] = {{sa.from_node, a.ratio * sa.length_m},
                 {sa.to_node, (1 - a.ratio) * sa.length_m}};
    End eb[2] = {{sb.from_node, b.ratio * sb.length_m},
                 {sb.to_node, (1 - b.ratio) * sb.length_m}};
    for (const auto& x : ea)
      for (const auto& y : eb) {
        double d = x.offset + dist[node_index.at(x.node)][node_index.at(y.node)] +
                   y.offset;
        best = std::min(best, d);
      }
    return best;
  }
};

RoadNetwork grid_network(int rows = 4, int cols = 4) {
  return RoadNetwork::from_segments(testutil::grid_segments(rows, cols));
}

}  // namespace

TEST_CASE("two-segment chain produces exactly the shared-junction edge") {
  std::vector<RoadSegment> segs(2);
  segs[0] = {0, 1, 2, haversine_m({116.30, 39.90}, {116.304, 39.90}),
             {{116.30, 39.90}, {116.304, 39.90}}, {}};
  segs[1] = {1, 2, 3, haversine_m({116.304, 39.90}, {116.308, 39.90}),
             {{116.304, 39.90}, {116.308, 39.90}}, {}};
  auto net = RoadNetwork::from_segments(segs);
  REQUIRE(net.size() == 2);
  REQUIRE(net.edges().size() == 1);
  CHECK(net.edges()[0] == std::pair<std::int64_t, std::int64_t>{0, 1});
  CHECK(net.out_neighbors(0) == std::vector<std::int64_t>{1});
  CHECK(net.in_neighbors(1) == std::vector<std::int64_t>{0});
  CHECK(net.out_neighbors(1).empty());
}

TEST_CASE("loader round-trips a 4x4 grid and matches the brute-force join") {
  auto segs = testutil::grid_segments(4, 4);
  testutil::TempDir dir("roadnet");
  auto path = testutil::write_segments_csv(segs, dir.file("grid.csv"));
  auto net = RoadNetwork::load(path);

  CHECK(net.size() == 24);

  std::size_t expected_edges = 0;
  for (const auto& u : segs)
    for (const auto& v : segs)
      if (u.id != v.id && u.to_node == v.from_node) ++expected_edges;
  CHECK(net.edges().size() == expected_edges);

  for (const auto& [u, v] : net.edges()) {
    CHECK(net.segment(u).to_node == net.segment(v).from_node);
  }
}

TEST_CASE("loader rejects duplicate ids") {
  testutil::TempDir dir("roadnet_dup");
  std::ofstream out(dir.file("dup.csv"));
  out << "id,u,v,length_m,geometry\n";
  out << "7,0,1,341.95,116.30 39.90;116.304 39.90\n";
  out << "7,1,2,341.95,116.304 39.90;116.308 39.90\n";
  out.close();
  CHECK_THROWS_AS(RoadNetwork::load(dir.file("dup.csv")), ValidationError);
}

TEST_CASE("loader names the malformed line") {
  testutil::TempDir dir("roadnet_bad");
  std::ofstream out(dir.file("bad.csv"));
  out << "id,u,v,length_m,geometry\n";
  out << "0,0,1,341.95,116.30 39.90;116.304 39.90\n";
  out << "1,1,2,not_a_number,116.304 39.90;116.308 39.90\n";
  out.close();
  try {
    RoadNetwork::load(dir.file("bad.csv"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("loader rejects non-positive lengths and stubby geometry") {
  std::vector<RoadSegment> zero_len(1);
  zero_len[0] = {0, 0, 1, 0.0, {{116.30, 39.90}, {116.304, 39.90}}, {}};
  CHECK_THROWS_AS(RoadNetwork::from_segments(zero_len), ValidationError);

  std::vector<RoadSegment> one_vertex(1);
  one_vertex[0] = {0, 0, 1, 10.0, {{116.30, 39.90}}, {}};
  CHECK_THROWS_AS(RoadNetwork::from_segments(one_vertex), ValidationError);

  std::vector<RoadSegment> bad_len(1);
  bad_len[0] = {0, 0, 1, 1000.0, {{116.30, 39.90}, {116.304, 39.90}}, {}};
  CHECK_THROWS_AS(RoadNetwork::from_segments(bad_len), ValidationError);
}

TEST_CASE("missing file raises a data error") {
  CHECK_THROWS_AS(RoadNetwork::load("/nonexistent/net.csv"), DataError);
}

TEST_CASE("projection of an on-segment midpoint") {
  auto net = grid_network();
  const auto& seg = net.segment(0);
  LonLat mid{(seg.geometry[0].lon + seg.geometry[1].lon) / 2,
             (seg.geometry[0].lat + seg.geometry[1].lat) / 2};
  auto pr = net.project_point(mid);
  CHECK(pr.point.segment == 0);
  CHECK(pr.point.ratio == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(pr.dist_m < 1e-6);
}

TEST_CASE("projection ties break toward the smaller id") {
  // Two parallel horizontal segments offset +-2^-7 degrees from the
  // query latitude; binary-exact offsets make the distances identical.
  const double lat0 = 40.0, off = 0.0078125, lon0 = 116.25, half = 0.00390625;
  std::vector<RoadSegment> segs(2);
  segs[0] = {3, 0, 1,
             haversine_m({lon0 - half, lat0 - off}, {lon0 + half, lat0 - off}),
             {{lon0 - half, lat0 - off}, {lon0 + half, lat0 - off}}, {}};
  segs[1] = {8, 2, 3,
             haversine_m({lon0 - half, lat0 + off}, {lon0 + half, lat0 + off}),
             {{lon0 - half, lat0 + off}, {lon0 + half, lat0 + off}}, {}};
  auto net = RoadNetwork::from_segments(segs);
  auto pr = net.project_point({lon0, lat0});
  CHECK(pr.point.segment == 3);
}

TEST_CASE("projection matches brute force on random points") {
  auto net = grid_network();
  Rng rng(42);
  for (int i = 0; i < 50; ++i) {
    LonLat p{116.30 + rng.uniform(-0.002, 0.014), 39.90 + rng.uniform(-0.002, 0.011)};
    auto fast = net.project_point(p);
    auto slow = net.project_point_bruteforce(p);
    CHECK(fast.point.segment == slow.point.segment);
    CHECK(fast.point.ratio == doctest::Approx(slow.point.ratio).epsilon(1e-12));
    CHECK(fast.dist_m == doctest::Approx(slow.dist_m).epsilon(1e-12));
  }
}

TEST_CASE("projection distance never exceeds vertex distances") {
  auto net = grid_network();
  Rng rng(43);
  for (int i = 0; i < 20; ++i) {
    LonLat p{116.30 + rng.uniform(0, 0.012), 39.90 + rng.uniform(0, 0.009)};
    auto pr = net.project_point(p);
    for (std::size_t s = 0; s < net.size(); ++s) {
      for (const auto& v : net.segment(net.id_at(s)).geometry) {
        CHECK(pr.dist_m <= haversine_m(p, v) + 1e-9);
      }
    }
  }
}

TEST_CASE("subregion membership matches brute force at 400 m") {
  auto net = grid_network();
  Rng rng(44);
  for (int i = 0; i < 30; ++i) {
    LonLat p{116.30 + rng.uniform(0, 0.012), 39.90 + rng.uniform(0, 0.009)};
    CHECK(net.subregion(p, 400.0) == net.subregion_bruteforce(p, 400.0));
  }
}

TEST_CASE("subregion nests with radius and hits the extremes") {
  auto net = grid_network();
  LonLat p{116.3055, 39.9045};
  auto small = net.subregion(p, 150.0);
  auto medium = net.subregion(p, 400.0);
  auto large = net.subregion(p, 1e7);
  CHECK(std::includes(medium.begin(), medium.end(), small.begin(), small.end()));
  CHECK(large.size() == net.size());

  LonLat far{117.5, 41.0};
  CHECK(net.subregion(far, 50.0).empty());
  CHECK_THROWS_AS(net.subregion(p, 0.0), ValidationError);
  CHECK_THROWS_AS(net.subregion(p, -1.0), ValidationError);
}

TEST_CASE("network distance identities") {
  auto net = grid_network();
  NetworkPoint a{0, 0.37};
  CHECK(net.network_distance(a, a).meters == 0.0);

  // Same segment, ratios 0.2 / 0.7: distance is half the length.
  NetworkPoint p{0, 0.2}, q{0, 0.7};
  double len = net.segment(0).length_m;
  CHECK(net.network_distance(p, q).meters == doctest::Approx(0.5 * len).epsilon(1e-12));
}

TEST_CASE("network distance equals the Floyd-Warshall oracle") {
  auto segs = testutil::grid_segments(4, 4);
  auto net = RoadNetwork::from_segments(segs);
  FloydOracle oracle(segs);
  Rng rng(45);
  for (int i = 0; i < 30; ++i) {
    NetworkPoint a{static_cast<std::int64_t>(rng.integer(net.size())), rng.uniform()};
    NetworkPoint b{static_cast<std::int64_t>(rng.integer(net.size())), rng.uniform()};
    auto d = net.network_distance(a, b);
    CHECK(d.connected);
    CHECK(d.meters == doctest::Approx(oracle(a, b)).epsilon(1e-9));
    auto rev = net.network_distance(b, a);
    CHECK(d.meters == doctest::Approx(rev.meters).epsilon(1e-9));
  }
}

TEST_CASE("network distance satisfies the triangle inequality") {
  auto net = grid_network(3, 3);
  Rng rng(46);
  for (int i = 0; i < 40; ++i) {
    NetworkPoint a{static_cast<std::int64_t>(rng.integer(net.size())), rng.uniform()};
    NetworkPoint b{static_cast<std::int64_t>(rng.integer(net.size())), rng.uniform()};
    NetworkPoint c{static_cast<std::int64_t>(rng.integer(net.size())), rng.uniform()};
    double ab = net.network_distance(a, b).meters;
    double bc = net.network_distance(b, c).meters;
    double ac = net.network_distance(a, c).meters;
    CHECK(ac <= ab + bc + 1e-6);
  }
}

TEST_CASE("disconnected pairs fall back to haversine") {
  std::vector<RoadSegment> segs(2);
  segs[0] = {0, 0, 1, haversine_m({116.30, 39.90}, {116.304, 39.90}),
             {{116.30, 39.90}, {116.304, 39.90}}, {}};
  segs[1] = {1, 2, 3, haversine_m({116.32, 39.92}, {116.324, 39.92}),
             {{116.32, 39.92}, {116.324, 39.92}}, {}};
  auto net = RoadNetwork::from_segments(segs);
  NetworkPoint a{0, 0.5}, b{1, 0.5};
  auto d = net.network_distance(a, b);
  CHECK_FALSE(d.connected);
  CHECK(d.meters == doctest::Approx(haversine_m(net.point_at(a), net.point_at(b)))
                        .epsilon(1e-12));
}

TEST_CASE("shortest path spans stitch into the reported distance") {
  auto segs = testutil::grid_segments(4, 4);
  auto net = RoadNetwork::from_segments(segs);
  Rng rng(47);
  for (int i = 0; i < 25; ++i) {
    NetworkPoint a{static_cast<std::int64_t>(rng.integer(net.size())), rng.uniform()};
    NetworkPoint b{static_cast<std::int64_t>(rng.integer(net.size())), rng.uniform()};
    auto path = net.shortest_path(a, b);
    REQUIRE(!path.spans.empty());

    double total = 0;
    for (const auto& span : path.spans) {
      total += std::abs(span.r_to - span.r_from) * net.segment(span.segment).length_m;
    }
    CHECK(total == doctest::Approx(path.dist.meters).epsilon(1e-9));

    CHECK(path.spans.front().segment == a.segment);
    CHECK(path.spans.front().r_from == doctest::Approx(a.ratio));
    CHECK(path.spans.back().segment == b.segment);
    CHECK(path.spans.back().r_to == doctest::Approx(b.ratio));

    // Consecutive spans meet at the same physical location.
    for (std::size_t k = 1; k < path.spans.size(); ++k) {
      LonLat end = net.point_at({path.spans[k - 1].segment, path.spans[k - 1].r_to});
      LonLat start = net.point_at({path.spans[k].segment, path.spans[k].r_from});
      CHECK(haversine_m(end, start) < 1e-6);
    }
  }
}

TEST_CASE("point_at interpolates along multi-vertex geometry") {
  std::vector<RoadSegment> segs(1);
  RoadSegment s;
  s.id = 0;
  s.from_node = 0;
  s.to_node = 1;
  s.geometry = {{116.30, 39.90}, {116.302, 39.90}, {116.302, 39.902}};
  s.length_m = haversine_m(s.geometry[0], s.geometry[1]) +
               haversine_m(s.geometry[1], s.geometry[2]);
  segs[0] = s;
  auto net = RoadNetwork::from_segments(segs);

  CHECK(haversine_m(net.point_at({0, 0.0}), s.geometry[0]) < 1e-9);
  CHECK(haversine_m(net.point_at({0, 1.0}), s.geometry[2]) < 1e-9);

  // The corner vertex sits at its arclength fraction.
  double corner_r = haversine_m(s.geometry[0], s.geometry[1]) / s.length_m;
  CHECK(haversine_m(net.point_at({0, corner_r}), s.geometry[1]) < 1e-6);

  CHECK_THROWS_AS(net.point_at({99, 0.5}), ValidationError);
  CHECK_THROWS_AS(net.point_at({0, 1.5}), ValidationError);
}

TEST_CASE("junction neighbors are the undirected star") {
  auto net = grid_network(3, 3);
  // Segment ids: horizontal r*(cols-1)+c for 3 cols -> ids 0..5,
  // vertical 6 + r*cols + c -> ids 6..11. Center junction (1,1) = node 4.
  // Horizontal segment (r=1, c=0) has id 2 and touches nodes 3,4.
  auto nb = net.junction_neighbors(2);
  // Expect all segments incident to node 3 or node 4 except itself.
  std::set<std::int64_t> expect;
  for (const auto& s : testutil::grid_segments(3, 3)) {
    if (s.id == 2) continue;
    if (s.from_node == 3 || s.to_node == 3 || s.from_node == 4 || s.to_node == 4)
      expect.insert(s.id);
  }
  CHECK(std::vector<std::int64_t>(expect.begin(), expect.end()) == nb);
}
