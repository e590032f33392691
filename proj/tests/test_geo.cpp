#include "trajrec/geo.hpp"

#include <cmath>

#include "doctest.h"
#include "trajrec/rng.hpp"

using trajrec::haversine_m;
using trajrec::LonLat;

TEST_CASE("haversine of a point to itself is zero") {
  LonLat p{116.3, 39.9};
  CHECK(haversine_m(p, p) == 0.0);
}

TEST_CASE("haversine of one meridian degree is about 111195 m") {
  // Analytic arc: R * pi / 180 = 111194.93 m for R = 6371 km.
  double d = haversine_m({0, 0}, {0, 1});
  CHECK(std::abs(d - 111195.0) <= 10.0);
}

TEST_CASE("haversine is symmetric") {
  trajrec::Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    LonLat a{rng.uniform(-180, 180), rng.uniform(-85, 85)};
    LonLat b{rng.uniform(-180, 180), rng.uniform(-85, 85)};
    CHECK(haversine_m(a, b) == doctest::Approx(haversine_m(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("edge projection recovers points on the edge") {
  LonLat a{116.30, 39.90};
  LonLat b{116.31, 39.90};
  LonLat mid{116.305, 39.90};
  auto proj = trajrec::project_to_edge(mid, a, b);
  CHECK(proj.t == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(proj.dist_m < 1e-6);
}

TEST_CASE("edge projection clamps to endpoints") {
  LonLat a{116.30, 39.90};
  LonLat b{116.31, 39.90};
  LonLat beyond{116.32, 39.90};
  auto proj = trajrec::project_to_edge(beyond, a, b);
  CHECK(proj.t == 1.0);
  CHECK(proj.dist_m == doctest::Approx(haversine_m(beyond, b)).epsilon(1e-3));
}

TEST_CASE("edge projection distance matches haversine to the foot point") {
  trajrec::Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    LonLat a{116.30 + rng.uniform(0, 0.01), 39.90 + rng.uniform(0, 0.01)};
    LonLat b{116.30 + rng.uniform(0, 0.01), 39.90 + rng.uniform(0, 0.01)};
    LonLat p{116.30 + rng.uniform(0, 0.01), 39.90 + rng.uniform(0, 0.01)};
    auto proj = trajrec::project_to_edge(p, a, b);
    // Local-frame distance agrees with the spherical distance to the
    // projected point to well under a meter at this scale.
    CHECK(proj.dist_m == doctest::Approx(haversine_m(p, proj.point)).epsilon(2e-3));
  }
}
