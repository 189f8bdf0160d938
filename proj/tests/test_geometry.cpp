#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "doctest.h"
#include "otpet/geometry.hpp"
#include "otpet/rng.hpp"
#include "support/oracles.hpp"

using namespace otpet;

namespace {

// Independent segment/box overlap check: separating-axis test on the three
// box normals and the three cross products with the segment direction
// (Ericson, Real-Time Collision Detection, 5.3.3). Different algorithm from
// the parametric clipping used by the library.
bool sat_segment_box(const std::array<double, 3>& p0,
                     const std::array<double, 3>& p1, const VolumeBox& box) {
  double e[3], m[3], d[3];
  for (int i = 0; i < 3; ++i) {
    e[i] = 0.5 * box.size[i];
    m[i] = 0.5 * (p0[i] + p1[i]) - (box.origin[i] + e[i]);
    d[i] = 0.5 * (p1[i] - p0[i]);
  }
  double ad[3];
  for (int i = 0; i < 3; ++i) {
    ad[i] = std::abs(d[i]);
    if (std::abs(m[i]) > e[i] + ad[i]) return false;
  }
  const double eps = 1e-12;
  for (int i = 0; i < 3; ++i) ad[i] += eps;
  if (std::abs(m[1] * d[2] - m[2] * d[1]) > e[1] * ad[2] + e[2] * ad[1]) return false;
  if (std::abs(m[0] * d[2] - m[2] * d[0]) > e[0] * ad[2] + e[2] * ad[0]) return false;
  if (std::abs(m[0] * d[1] - m[1] * d[0]) > e[0] * ad[1] + e[1] * ad[0]) return false;
  return true;
}

double point_line_dist_search(const std::array<double, 3>& a,
                              const std::array<double, 3>& b,
                              const std::array<double, 3>& x) {
  auto dist_at = [&](double t) {
    double s = 0;
    for (int i = 0; i < 3; ++i) {
      double p = a[i] + t * (b[i] - a[i]) - x[i];
      s += p * p;
    }
    return std::sqrt(s);
  };
  // coarse scan over a wide parameter range, then golden-section refinement
  double best_t = 0, best = dist_at(0);
  const int n = 4001;
  for (int k = 0; k <= n; ++k) {
    double t = -2.0 + 5.0 * k / n;
    double v = dist_at(t);
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  double h = 5.0 / n;
  return dist_at(oracle::golden_min(dist_at, best_t - h, best_t + h, 1e-12, 200));
}

ScannerParams square_ring() {
  ScannerParams p;
  p.ring_radius = 100.0;
  p.axial_extent = 40.0;
  p.n_rings = 1;
  p.detectors_per_ring = 4;
  return p;
}

VolumeBox centered_box(double half_xy, double half_z) {
  VolumeBox b;
  b.origin = {-half_xy, -half_xy, -half_z};
  b.size = {2 * half_xy, 2 * half_xy, 2 * half_z};
  return b;
}

}  // namespace

TEST_CASE("pair enumeration and combinatorial counts") {
  // 4 detectors at 90 deg; box wide enough that every chord crosses it
  auto g = build_ring_scanner(square_ring(), centered_box(60, 20));
  CHECK(g.n_detectors() == 4);
  CHECK(g.n_candidate_pairs() == 6);
  CHECK(g.n_pairs() == 6);

  CHECK(g.detector_center(0)[0] == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(g.detector_center(0)[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.detector_center(0)[2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.detector_center(1)[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.detector_center(1)[1] == doctest::Approx(100.0).epsilon(1e-12));
  // square with apothem 100 has side 200
  CHECK(g.face_halfwidth() == doctest::Approx(100.0));
  CHECK(g.face_halfheight() == doctest::Approx(20.0));
  CHECK(g.face_diagonal() == doctest::Approx(std::sqrt(200.0 * 200 + 40.0 * 40)));

  // small box: only the two diametric chords pass through it
  auto g2 = build_ring_scanner(square_ring(), centered_box(30, 20));
  CHECK(g2.n_candidate_pairs() == 6);
  CHECK(g2.n_pairs() == 2);
  for (int j = 1; j <= g2.n_pairs(); ++j) {
    auto [d1, d2] = g2.pair_detectors(j);
    CHECK((d2 - d1) == 2);  // diametric partner in a 4-detector ring
  }

  // 2 rings x 8 detectors: candidate count is all unordered pairs of 16
  ScannerParams p8;
  p8.ring_radius = 100.0;
  p8.axial_extent = 40.0;
  p8.n_rings = 2;
  p8.detectors_per_ring = 8;
  auto g3 = build_ring_scanner(p8, centered_box(30, 20));
  CHECK(g3.n_candidate_pairs() == 120);
  CHECK(g3.n_pairs() <= 120);

  // indexing is a bijection, stable across rebuilds, and consistent both ways
  auto g3b = build_ring_scanner(p8, centered_box(30, 20));
  REQUIRE(g3b.n_pairs() == g3.n_pairs());
  std::set<std::pair<int, int>> seen;
  for (int j = 1; j <= g3.n_pairs(); ++j) {
    auto pd = g3.pair_detectors(j);
    CHECK(g3b.pair_detectors(j) == pd);
    CHECK(seen.insert(pd).second);
    auto back = g3.pair_index(pd.first, pd.second);
    REQUIRE(back.has_value());
    CHECK(*back == j);
    CHECK(g3.pair_index(pd.second, pd.first) == back);  // unordered
    auto ep = g3.lor_endpoints(j);
    for (int i = 0; i < 3; ++i) {
      CHECK(ep[0][i] == doctest::Approx(g3.detector_center(pd.first)[i]));
      CHECK(ep[1][i] == doctest::Approx(g3.detector_center(pd.second)[i]));
    }
  }
}

TEST_CASE("stored pairs match an independent brute-force box filter") {
  ScannerParams p;  // desk-scale default
  VolumeBox box;    // [0,160]^2 x [0,40]
  auto g = build_ring_scanner(p, box);
  REQUIRE(g.n_detectors() == 192);
  CHECK(g.n_candidate_pairs() == 192 * 191 / 2);

  int64_t n_oracle = 0;
  for (int d1 = 0; d1 < g.n_detectors(); ++d1)
    for (int d2 = d1 + 1; d2 < g.n_detectors(); ++d2) {
      bool hit = sat_segment_box(g.detector_center(d1), g.detector_center(d2), box);
      if (hit) ++n_oracle;
      CHECK(g.pair_index(d1, d2).has_value() == hit);
    }
  CHECK(g.n_pairs() == n_oracle);
  CHECK(g.n_pairs() > 0);
  CHECK(g.n_pairs() < g.n_candidate_pairs());

  // every stored chord really crosses the box (checked with the oracle test)
  for (int j = 1; j <= g.n_pairs(); ++j) {
    auto ep = g.lor_endpoints(j);
    REQUIRE(sat_segment_box(ep[0], ep[1], box));
  }
}

TEST_CASE("point to line-of-response distance") {
  auto g = build_ring_scanner(square_ring(), centered_box(60, 20));
  auto j = g.pair_index(0, 2);  // endpoints (100,0,0) and (-100,0,0): the x-axis
  REQUIRE(j.has_value());
  CHECK(point_lor_distance(g, *j, {0.0, 3.0, 4.0}) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(point_lor_distance(g, *j, {37.5, 0.0, 0.0}) == doctest::Approx(0.0));
  CHECK(point_lor_distance(g, *j, {250.0, 0.0, 0.0}) ==
        doctest::Approx(0.0));  // infinite line, beyond the endpoints

  // random pairs/points vs dense 1D parameter search
  ScannerParams pd;
  VolumeBox box;
  auto gd = build_ring_scanner(pd, box);
  Rng rng(20260815);
  for (int rep = 0; rep < 200; ++rep) {
    int jj = 1 + int(rng.below(uint64_t(gd.n_pairs())));
    std::array<double, 3> x;
    for (int i = 0; i < 3; ++i)
      x[i] = rng.uniform(box.origin[i], box.origin[i] + box.size[i]);
    auto ep = gd.lor_endpoints(jj);
    double want = point_line_dist_search(ep[0], ep[1], x);
    double want_swapped = point_line_dist_search(ep[1], ep[0], x);
    double got = point_lor_distance(gd, jj, x);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
    CHECK(got == doctest::Approx(want_swapped).epsilon(1e-9));
    CHECK(got >= 0.0);
  }
}

TEST_CASE("back-to-back sampling registers the right pair") {
  auto g = build_ring_scanner(square_ring(), centered_box(60, 20));

  // from the center, aimed at a detector center: its diametric pair
  auto j = sample_detector_pair(g, {0, 0, 0}, {1, 0, 0});
  REQUIRE(j.has_value());
  CHECK(g.pair_detectors(*j) == std::pair<int, int>(0, 2));
  auto j2 = sample_detector_pair(g, {0, 0, 0}, {0, 1, 0});
  REQUIRE(j2.has_value());
  CHECK(g.pair_detectors(*j2) == std::pair<int, int>(1, 3));

  // rays along the scanner axis leave without hitting anything
  CHECK(!sample_detector_pair(g, {0, 0, 0}, {0, 0, 1}).has_value());
  CHECK(!sample_detector_pair(g, {10, -5, 3}, {0, 0, -1}).has_value());

  CHECK_THROWS_AS(sample_detector_pair(g, {0, 0, 0}, {1, 1, 0}),
                  std::invalid_argument);

  // direction sign symmetry + near-pass invariant on the desk geometry
  ScannerParams pd;
  VolumeBox box;
  auto gd = build_ring_scanner(pd, box);
  Rng rng(77);
  int returned = 0;
  for (int rep = 0; rep < 3000; ++rep) {
    std::array<double, 3> x;
    for (int i = 0; i < 3; ++i)
      x[i] = rng.uniform(box.origin[i], box.origin[i] + box.size[i]);
    auto dir = rng.isotropic();
    auto a = sample_detector_pair(gd, x, dir);
    std::array<double, 3> neg{-dir[0], -dir[1], -dir[2]};
    CHECK(sample_detector_pair(gd, x, neg) == a);
    if (a) {
      ++returned;
      CHECK(point_lor_distance(gd, *a, x) <= gd.face_diagonal());
    }
  }
  CHECK(returned > 0);
}

TEST_CASE("acceptance from the center matches solid-angle coverage") {
  ScannerParams p;
  VolumeBox box;
  auto g = build_ring_scanner(p, box);

  // Analytic coverage for a regular-polygon prism seen from its center:
  // a ray at azimuth phi meets the wall at horizontal distance
  // r(phi) = apothem / cos(phi folded into one face), and hits the band
  // |z| <= H/2 with probability h / sqrt(h^2 + r^2) (h = H/2) after
  // integrating the polar angle. Both photons hit iff one does (the even
  // polygon is point symmetric), so acceptance = mean of that over azimuth.
  const int D = p.detectors_per_ring;
  const double a = p.ring_radius, h = 0.5 * p.axial_extent;
  auto integrand = [&](double phi) {
    double r = a / std::cos(phi);
    return h / std::sqrt(h * h + r * r);
  };
  const int nq = 20000;  // Simpson on one face sector, symmetry does the rest
  double lo = -M_PI / D, hi = M_PI / D, sum = 0;
  for (int k = 0; k <= nq; ++k) {
    double w = (k == 0 || k == nq) ? 1 : (k % 2 ? 4 : 2);
    sum += w * integrand(lo + (hi - lo) * k / nq);
  }
  double analytic = (D / (2 * M_PI)) * sum * (hi - lo) / (3.0 * nq);

  const int n = 10000;
  double emp = estimate_acceptance(g, {box.center()}, n, 42);
  double se = std::sqrt(analytic * (1 - analytic) / n);
  CHECK(std::abs(emp - analytic) <= 3 * se);
}

TEST_CASE("construction rejects bad configurations") {
  // box corner outside the bore
  CHECK_THROWS_AS(build_ring_scanner(square_ring(), centered_box(80, 20)),
                  ConfigError);
  VolumeBox degenerate;
  degenerate.size = {160, 160, 0};
  CHECK_THROWS_AS(build_ring_scanner(square_ring(), degenerate), ConfigError);
  ScannerParams bad = square_ring();
  bad.ring_radius = -5;
  CHECK_THROWS_AS(build_ring_scanner(bad, centered_box(30, 20)), ConfigError);
}
