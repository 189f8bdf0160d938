#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "otpet/simulator.hpp"
#include "support/oracles.hpp"

using namespace otpet;

namespace {

ScannerParams octagon_ring() {
  ScannerParams p;
  p.ring_radius = 100.0;
  p.axial_extent = 40.0;
  p.n_rings = 1;
  p.detectors_per_ring = 8;
  return p;
}

VolumeBox centered_box(double half_xy, double half_z) {
  VolumeBox b;
  b.origin = {-half_xy, -half_xy, -half_z};
  b.size = {2 * half_xy, 2 * half_xy, 2 * half_z};
  return b;
}

// chi-square upper critical value, Wilson-Hilferty approximation
double chi2_crit(int dof, double z) {
  double a = 2.0 / (9.0 * dof);
  double t = 1.0 - a + z * std::sqrt(a);
  return dof * t * t * t;
}

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("circular phantom geometry") {
  VolumeBox box = centered_box(80, 20);

  // arc step pi mm when a radius-60 circle is walked in 120 steps over 120 s
  double speed = 2.0 * M_PI * 60.0 / 120.0;
  auto gt = circular_phantom(box, 60.0, speed, 1, 0.0, 1.0, 120.0, 6586.0);
  REQUIRE(gt.particles.size() == 1);
  REQUIRE(gt.particles[0].path.size() == 120);
  CHECK(speed == doctest::Approx(M_PI));
  for (int s = 0; s + 1 < 120; ++s) {
    auto a = gt.position(0, s + 0.25), b = gt.position(0, s + 1.25);
    double chord = std::hypot(b[0] - a[0], b[1] - a[1]);
    double arc = 2.0 * 60.0 * std::asin(0.5 * chord / 60.0);
    CHECK(arc == doctest::Approx(M_PI).epsilon(1e-9));
    CHECK(a[2] == doctest::Approx(box.center()[2]));
    CHECK(box.contains(a));
  }
  // stepwise motion: constant inside each 1 s step
  CHECK(gt.position(0, 3.1) == gt.position(0, 3.9));
  CHECK(gt.position(0, 3.1) != gt.position(0, 4.1));

  // zero speed freezes the trajectory
  auto still = circular_phantom(box, 60.0, 0.0, 2, 10.0, 1.0, 30.0, 100.0);
  for (int s = 0; s < 30; ++s)
    for (int k = 0; k < 2; ++k) CHECK(still.position(k, s) == still.position(k, 0));

  // four particles, 37 mm arc spacing stays 37 mm at every step
  auto train = circular_phantom(box, 60.0, 2.5, 4, 37.0, 1.0, 40.0, 100.0);
  for (int s = 0; s < 40; ++s)
    for (int k = 0; k + 1 < 4; ++k) {
      auto a = train.position(k, s), b = train.position(k + 1, s);
      double chord = std::hypot(b[0] - a[0], b[1] - a[1]);
      double arc = 2.0 * 60.0 * std::asin(0.5 * chord / 60.0);
      CHECK(arc == doctest::Approx(37.0).epsilon(1e-9));
    }

  CHECK_THROWS_AS(circular_phantom(box, 90.0, 1.0, 1, 0, 1, 10, 100), ConfigError);
  CHECK_THROWS_AS(circular_phantom(box, 60.0, 1.0, 1, 0, 1, 10, -1), ConfigError);
}

TEST_CASE("simulate: zero mass, determinism, validation") {
  auto g = build_ring_scanner(octagon_ring(), centered_box(60, 20));
  auto gt = circular_phantom(g.box(), 40.0, 1.0, 2, 10.0, 0.0, 20.0, 100.0);
  SimParams sp;
  sp.n_time_bins = 4;
  CHECK(simulate_listmode(gt, g, sp).events.empty());

  gt.particles[0].mass = 500.0;
  gt.particles[1].mass = 250.0;
  auto a = simulate_listmode(gt, g, sp);
  auto b = simulate_listmode(gt, g, sp);
  CHECK(a == b);  // bit-reproducible for a fixed seed
  CHECK(a.total() > 0);
  CHECK(a.M == 4);
  CHECK(a.N == g.n_pairs());
  CHECK(a.delta_t == doctest::Approx(5.0));
  for (const auto& [key, c] : a.events) {
    CHECK(c > 0);
    CHECK(key.first >= 1);
    CHECK(key.first <= 4);
    CHECK(key.second >= 1);
    CHECK(key.second <= g.n_pairs());
  }
  sp.seed = 999;
  CHECK(simulate_listmode(gt, g, sp).events != a.events);

  SimParams bad;
  bad.p_det = 0.9;
  bad.p_scatter = 0.2;
  CHECK_THROWS_AS(simulate_listmode(gt, g, bad), ConfigError);
}

TEST_CASE("simulate: registered fraction equals geometric acceptance") {
  auto g = build_ring_scanner(octagon_ring(), centered_box(60, 20));
  // stationary particle, every decay routed through the detector model
  double T = 50.0, half_life = 100.0;
  double expected_decays = 1e4;
  double mass = expected_decays / (std::log(2.0) / half_life * T);
  auto gt = circular_phantom(g.box(), 10.0, 0.0, 1, 0.0, mass, T, half_life);

  SimParams sp;
  sp.p_det = 1.0;
  sp.p_scatter = 0.0;
  sp.positron_sigma = 0.0;
  sp.n_time_bins = 5;
  sp.seed = 11;
  auto lm = simulate_listmode(gt, g, sp);

  double acc = estimate_acceptance(g, {gt.position(0, 0.0)}, 200000, 77);
  double mu = expected_decays * acc;
  CHECK(std::abs(double(lm.total()) - mu) <= 3.0 * std::sqrt(mu));
}

TEST_CASE("simulate: pure scatter spreads uniformly over pairs") {
  auto g = build_ring_scanner(octagon_ring(), centered_box(60, 20));
  const int N = g.n_pairs();
  REQUIRE(N >= 10);

  double T = 40.0, half_life = 100.0;
  double mass = 1e5 / (std::log(2.0) / half_life * T);
  auto gt = circular_phantom(g.box(), 30.0, 1.0, 1, 0.0, mass, T, half_life);
  SimParams sp;
  sp.p_det = 0.0;
  sp.p_scatter = 1.0;
  sp.n_time_bins = 4;
  sp.seed = 5;
  auto lm = simulate_listmode(gt, g, sp);

  std::vector<int64_t> per_pair(size_t(N), 0);
  for (const auto& [key, c] : lm.events) per_pair[size_t(key.second - 1)] += c;
  double total = double(lm.total());
  REQUIRE(total > 5e4);
  double e = total / N, chi2 = 0;
  for (int64_t c : per_pair) chi2 += (c - e) * (c - e) / e;
  CHECK(chi2 < chi2_crit(N - 1, 2.3263478740408408));  // 1% level
}

TEST_CASE("simulate: totals follow the decay-rate formula and scale with mass") {
  auto g = build_ring_scanner(octagon_ring(), centered_box(60, 20));
  double T = 30.0, half_life = 200.0, mass = 30000.0;
  auto gt = circular_phantom(g.box(), 40.0, 2.0, 2, 15.0, mass, T, half_life);
  SimParams sp;
  sp.p_det = 0.6;
  sp.p_scatter = 0.2;
  sp.positron_sigma = 0.0;
  sp.n_time_bins = 3;

  // per-particle geometric acceptance along its own path
  double mu = 0.0;
  for (size_t k = 0; k < gt.particles.size(); ++k) {
    std::vector<std::array<double, 3>> pts(gt.particles[k].path.begin(),
                                           gt.particles[k].path.end());
    double gk = estimate_acceptance(g, pts, 3000, 1234 + uint64_t(k));
    mu += gt.particles[k].mass * (std::log(2.0) / half_life) * T *
          (sp.p_det * gk + sp.p_scatter);
  }

  const int n_seeds = 24;
  std::vector<double> tot1, tot2;
  auto gt2 = gt;
  for (auto& p : gt2.particles) p.mass *= 2.0;
  for (int s = 0; s < n_seeds; ++s) {
    sp.seed = 1000 + uint64_t(s);
    tot1.push_back(double(simulate_listmode(gt, g, sp).total()));
    tot2.push_back(double(simulate_listmode(gt2, g, sp).total()));
  }
  double m1 = oracle::mean(tot1), m2 = oracle::mean(tot2);
  double se1 = oracle::sample_std(tot1) / std::sqrt(double(n_seeds));
  double se2 = oracle::sample_std(tot2) / std::sqrt(double(n_seeds));
  CHECK(std::abs(m1 - mu) <= 3.0 * se1);
  CHECK(std::abs(m2 - 2.0 * mu) <= 3.0 * se2);
  CHECK(std::abs(m2 - 2.0 * m1) <= 3.0 * std::sqrt(se2 * se2 + 4.0 * se1 * se1));
}

TEST_CASE("subsampling thins events binomially") {
  ListmodeData lm;
  lm.M = 2;
  lm.N = 50;
  lm.delta_t = 1.0;
  for (int j = 1; j <= 50; ++j) {
    lm.add(1, j, 1000);
    lm.add(2, j, 1000);
  }
  REQUIRE(lm.total() == 100000);

  CHECK(subsample_events(lm, 1.0, 3) == lm);
  CHECK(subsample_events(lm, 0.0, 3).events.empty());
  CHECK(subsample_events(lm, 0.5, 3) == subsample_events(lm, 0.5, 3));

  auto half = subsample_events(lm, 0.5, 42);
  double dev = std::abs(double(half.total()) - 50000.0);
  CHECK(dev <= 3.0 * std::sqrt(100000 * 0.25));
  for (const auto& [key, c] : half.events) CHECK(c <= lm.events.at(key));
  CHECK_THROWS_AS(subsample_events(lm, 1.5, 1), ConfigError);
}

TEST_CASE("rotation remaps pairs and merging sums counts") {
  auto g = build_ring_scanner(octagon_ring(), centered_box(60, 20));
  const double pitch = 2.0 * M_PI / 8;

  auto ja = g.pair_index(0, 4);  // diametric
  auto jb = g.pair_index(1, 5);
  REQUIRE(ja.has_value());
  REQUIRE(jb.has_value());
  ListmodeData A;
  A.M = 2;
  A.N = g.n_pairs();
  A.delta_t = 1.0;
  A.add(1, *ja, 1);
  ListmodeData B = A;
  B.events.clear();
  B.add(2, *jb, 1);

  CHECK(rotate_and_merge(g, {{A, 0.0}}) == A);
  CHECK(rotate_and_merge(g, {{A, 2.0 * M_PI}}) == A);
  CHECK(rotate_and_merge(g, {{A, 0.0}, {A, 0.0}}).events.at({1, *ja}) == 2);

  // remap verified by explicitly rotating the chord endpoints
  double angle = 2 * pitch;  // 90 degrees
  auto merged = rotate_and_merge(g, {{A, angle}, {B, 0.0}});
  CHECK(merged.total() == 2);
  auto rotate_point = [&](std::array<double, 3> p) {
    double ca = std::cos(angle), sa = std::sin(angle);
    return std::array<double, 3>{ca * p[0] - sa * p[1], sa * p[0] + ca * p[1], p[2]};
  };
  auto nearest_det = [&](const std::array<double, 3>& p) {
    int best = -1;
    double bd = 1e300;
    for (int d = 0; d < g.n_detectors(); ++d) {
      auto c = g.detector_center(d);
      double dd = std::hypot(c[0] - p[0], c[1] - p[1], c[2] - p[2]);
      if (dd < bd) {
        bd = dd;
        best = d;
      }
    }
    return best;
  };
  auto ep = g.lor_endpoints(*ja);
  auto want = g.pair_index(nearest_det(rotate_point(ep[0])),
                           nearest_det(rotate_point(ep[1])));
  REQUIRE(want.has_value());
  CHECK(merged.events.at({1, *want}) == 1);
  CHECK(merged.events.at({2, *jb}) == 1);

  CHECK_THROWS_AS(rotate_and_merge(g, {{A, 0.3 * pitch}}), ConfigError);
  ListmodeData wrongM = A;
  wrongM.M = 7;
  CHECK_THROWS_AS(rotate_and_merge(g, {{A, 0.0}, {wrongM, 0.0}}), ConfigError);
}

TEST_CASE("listmode files round trip") {
  ListmodeData lm;
  lm.M = 3;
  lm.N = 17;
  lm.delta_t = 2.5;
  lm.add(1, 1, 4);
  lm.add(2, 17, 123456789);
  lm.add(3, 9, 1);

  auto pa = tmp_path("otpet_lm_test.txt");
  save_listmode_ascii(lm, pa);
  CHECK(load_listmode_ascii(pa) == lm);

  auto pb = tmp_path("otpet_lm_test.bin");
  save_listmode_binary(lm, pb);
  CHECK(load_listmode_binary(pb) == lm);

  // header text is the documented `M N dT` line
  std::ifstream is(pa);
  std::string first;
  std::getline(is, first);
  CHECK(first == "3 17 2.5");

  CHECK_THROWS_AS(load_listmode_ascii(tmp_path("otpet_absent.txt")), ConfigError);
  std::filesystem::remove(pa);
  std::filesystem::remove(pb);
}

TEST_CASE("ground truth csv round trips") {
  VolumeBox box = centered_box(80, 20);
  auto gt = circular_phantom(box, 50.0, 1.5, 3, 12.0, 7.25, 25.0, 6586.0);
  auto p = tmp_path("otpet_gt_test.csv");
  save_ground_truth_csv(gt, p);

  std::ifstream is(p);
  std::string header;
  std::getline(is, header);
  CHECK(header == "t_s,particle,x_mm,y_mm,z_mm,mass");

  auto back = load_ground_truth_csv(p, 6586.0);
  REQUIRE(back.particles.size() == 3);
  CHECK(back.total_time == doctest::Approx(25.0));
  CHECK(back.half_life == 6586.0);
  for (size_t k = 0; k < 3; ++k) {
    CHECK(back.particles[k].mass == gt.particles[k].mass);
    REQUIRE(back.particles[k].path.size() == gt.particles[k].path.size());
    for (size_t s = 0; s < gt.particles[k].path.size(); ++s)
      for (int a = 0; a < 3; ++a)
        CHECK(back.particles[k].path[s][a] == gt.particles[k].path[s][a]);
  }
  std::filesystem::remove(p);
}
