#include "otpet/geometry.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace otpet {

namespace {
double sq(double v) { return v * v; }
}  // namespace

ScannerGeometry::ScannerGeometry(const ScannerParams& p, const VolumeBox& box)
    : p_(p), box_(box) {
  if (p.ring_radius <= 0 || p.axial_extent <= 0 || p.n_rings < 1 ||
      p.detectors_per_ring < 2)
    throw ConfigError("scanner: need positive radius/extent and >= 2 detectors");
  for (int d = 0; d < 3; ++d)
    if (box.size[d] <= 0) throw ConfigError("scanner: box side lengths must be positive");

  const int D = p.detectors_per_ring;
  apothem_ = p.ring_radius;            // face centers sit at ring_radius
  halfw_ = apothem_ * std::tan(M_PI / D);  // watertight polygon sides
  ring_h_ = p.axial_extent / p.n_rings;
  auto c = box.center();
  ax_ = c[0];
  ay_ = c[1];
  z0_ = c[2] - 0.5 * p.axial_extent;

  // bore containment: every x-y corner of the box strictly inside the apothem
  double worst = 0.0;
  for (int cx = 0; cx < 2; ++cx)
    for (int cy = 0; cy < 2; ++cy) {
      double dx = box.origin[0] + cx * box.size[0] - ax_;
      double dy = box.origin[1] + cy * box.size[1] - ay_;
      worst = std::max(worst, std::sqrt(dx * dx + dy * dy));
    }
  if (worst >= apothem_)
    throw ConfigError("scanner: measurement box does not fit inside the bore");

  // enumerate unordered pairs whose face-center segment crosses the box
  const int nd = n_detectors();
  pairs_.reserve(size_t(nd) * (nd - 1) / 8);
  for (int d1 = 0; d1 < nd; ++d1) {
    auto a = detector_center(d1);
    for (int d2 = d1 + 1; d2 < nd; ++d2) {
      if (segment_intersects_box(a, detector_center(d2), box_)) {
        pairs_.emplace_back(d1, d2);
        pair_lookup_[int64_t(d1) * nd + d2] = int(pairs_.size());  // 1-based
      }
    }
  }
}

std::array<double, 3> ScannerGeometry::detector_center(int det) const {
  const int D = p_.detectors_per_ring;
  int ring = det / D, k = det % D;
  double th = 2.0 * M_PI * k / D;
  return {ax_ + apothem_ * std::cos(th), ay_ + apothem_ * std::sin(th),
          z0_ + (ring + 0.5) * ring_h_};
}

double ScannerGeometry::face_diagonal() const {
  return std::sqrt(sq(2.0 * halfw_) + sq(ring_h_));
}

std::array<std::array<double, 3>, 2> ScannerGeometry::lor_endpoints(int j) const {
  auto [d1, d2] = pair_detectors(j);
  return {detector_center(d1), detector_center(d2)};
}

std::optional<int> ScannerGeometry::pair_index(int d1, int d2) const {
  if (d1 > d2) std::swap(d1, d2);
  auto it = pair_lookup_.find(int64_t(d1) * n_detectors() + d2);
  if (it == pair_lookup_.end()) return std::nullopt;
  return it->second;
}

int ScannerGeometry::cast_ray(const std::array<double, 3>& from,
                              const std::array<double, 3>& dir) const {
  const int D = p_.detectors_per_ring;
  double px = from[0] - ax_, py = from[1] - ay_;
  int best = -1;
  double best_t = std::numeric_limits<double>::infinity();
  for (int k = 0; k < D; ++k) {
    double th = 2.0 * M_PI * k / D;
    double nx = std::cos(th), ny = std::sin(th);
    double denom = nx * dir[0] + ny * dir[1];
    if (denom <= 1e-15) continue;  // moving away from / parallel to this side
    double t = (apothem_ - (nx * px + ny * py)) / denom;
    if (t <= 0.0 || t >= best_t) continue;
    double hx = px + t * dir[0], hy = py + t * dir[1];
    double tang = -ny * hx + nx * hy;
    if (std::abs(tang) > halfw_) continue;
    double hz = from[2] + t * dir[2];
    double rz = (hz - z0_) / ring_h_;
    if (rz < 0.0 || rz >= p_.n_rings) continue;
    best_t = t;
    best = int(rz) * D + k;
  }
  return best;
}

ScannerGeometry build_ring_scanner(const ScannerParams& p, const VolumeBox& box) {
  return ScannerGeometry(p, box);
}

double point_lor_distance(const ScannerGeometry& g, int j,
                          const std::array<double, 3>& x) {
  auto ep = g.lor_endpoints(j);
  double ux = ep[1][0] - ep[0][0], uy = ep[1][1] - ep[0][1], uz = ep[1][2] - ep[0][2];
  double vx = x[0] - ep[0][0], vy = x[1] - ep[0][1], vz = x[2] - ep[0][2];
  double cx = vy * uz - vz * uy, cy = vz * ux - vx * uz, cz = vx * uy - vy * ux;
  return std::sqrt((cx * cx + cy * cy + cz * cz) / (ux * ux + uy * uy + uz * uz));
}

std::optional<int> sample_detector_pair(const ScannerGeometry& g,
                                        const std::array<double, 3>& annihilation,
                                        const std::array<double, 3>& direction) {
  double n2 = sq(direction[0]) + sq(direction[1]) + sq(direction[2]);
  if (std::abs(n2 - 1.0) > 1e-12)
    throw std::invalid_argument("sample_detector_pair: direction must be unit length");
  int d1 = g.cast_ray(annihilation, direction);
  if (d1 < 0) return std::nullopt;
  std::array<double, 3> neg{-direction[0], -direction[1], -direction[2]};
  int d2 = g.cast_ray(annihilation, neg);
  if (d2 < 0 || d2 == d1) return std::nullopt;
  return g.pair_index(d1, d2);
}

double estimate_acceptance(const ScannerGeometry& g,
                           const std::vector<std::array<double, 3>>& points,
                           int dirs_per_point, uint64_t seed) {
  Rng rng(seed);
  int64_t hits = 0, total = 0;
  for (const auto& p : points)
    for (int i = 0; i < dirs_per_point; ++i) {
      if (sample_detector_pair(g, p, rng.isotropic())) ++hits;
      ++total;
    }
  return total ? double(hits) / double(total) : 0.0;
}

bool segment_intersects_box(const std::array<double, 3>& a,
                            const std::array<double, 3>& b, const VolumeBox& box) {
  double t0 = 0.0, t1 = 1.0;
  for (int d = 0; d < 3; ++d) {
    double lo = box.origin[d], hi = box.origin[d] + box.size[d];
    double dd = b[d] - a[d];
    if (std::abs(dd) < 1e-300) {
      if (a[d] < lo || a[d] > hi) return false;
      continue;
    }
    double u0 = (lo - a[d]) / dd, u1 = (hi - a[d]) / dd;
    if (u0 > u1) std::swap(u0, u1);
    t0 = std::max(t0, u0);
    t1 = std::min(t1, u1);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace otpet
