#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "otpet/errors.hpp"
#include "otpet/rng.hpp"

// Idealized cylindrical PET scanner: n_rings stacked rings of flat
// rectangular detector faces forming a watertight regular-polygon prism.
// Ring axis = z through the center of the measurement box.

namespace otpet {

struct VolumeBox {
  std::array<double, 3> origin{0.0, 0.0, 0.0};  // mm
  std::array<double, 3> size{160.0, 160.0, 40.0};
  std::array<double, 3> center() const {
    return {origin[0] + 0.5 * size[0], origin[1] + 0.5 * size[1],
            origin[2] + 0.5 * size[2]};
  }
  bool contains(const std::array<double, 3>& p) const {
    for (int d = 0; d < 3; ++d)
      if (p[d] < origin[d] || p[d] > origin[d] + size[d]) return false;
    return true;
  }
};

struct ScannerParams {
  double ring_radius = 420.0;   // mm, axis to detector face center
  double axial_extent = 80.0;   // mm, total
  int n_rings = 4;
  int detectors_per_ring = 48;
};

class ScannerGeometry {
 public:
  // throws ConfigError if the box is not strictly inside the bore
  ScannerGeometry(const ScannerParams& p, const VolumeBox& box);

  const ScannerParams& params() const { return p_; }
  const VolumeBox& box() const { return box_; }
  int n_detectors() const { return p_.n_rings * p_.detectors_per_ring; }
  // unordered pairs before the box-intersection filter: C(n_detectors, 2)
  int64_t n_candidate_pairs() const {
    int64_t n = n_detectors();
    return n * (n - 1) / 2;
  }
  int n_pairs() const { return int(pairs_.size()); }  // N

  // detector ids are 0-based: ring * detectors_per_ring + azimuth index
  std::array<double, 3> detector_center(int det) const;
  double face_halfwidth() const { return halfw_; }   // tangential, mm
  double face_halfheight() const { return 0.5 * ring_h_; }
  double face_diagonal() const;

  // pair index j is 1-based; endpoints are the two face centers
  std::pair<int, int> pair_detectors(int j) const { return pairs_.at(j - 1); }
  std::array<std::array<double, 3>, 2> lor_endpoints(int j) const;
  // 1-based index of the unordered pair (d1, d2), or nullopt if the pair was
  // dropped by the box filter
  std::optional<int> pair_index(int d1, int d2) const;

  // detector hit by the ray from `from` along `dir` (need not be unit), or -1
  int cast_ray(const std::array<double, 3>& from,
               const std::array<double, 3>& dir) const;

 private:
  ScannerParams p_;
  VolumeBox box_;
  double apothem_ = 0.0, halfw_ = 0.0, ring_h_ = 0.0, z0_ = 0.0;
  double ax_ = 0.0, ay_ = 0.0;  // axis position
  std::vector<std::pair<int, int>> pairs_;
  std::unordered_map<int64_t, int> pair_lookup_;  // key d1*ndet+d2 -> j
};

ScannerGeometry build_ring_scanner(const ScannerParams& p, const VolumeBox& box);

// distance from x to the infinite line through the endpoints of LOR j
double point_lor_distance(const ScannerGeometry& g, int j,
                          const std::array<double, 3>& x);

// pair registered by the back-to-back photon rays, or nullopt on a miss;
// direction must be unit length within 1e-12
std::optional<int> sample_detector_pair(const ScannerGeometry& g,
                                        const std::array<double, 3>& annihilation,
                                        const std::array<double, 3>& direction);

// Monte-Carlo geometric acceptance: fraction of isotropic directions from the
// given points that register some pair
double estimate_acceptance(const ScannerGeometry& g,
                           const std::vector<std::array<double, 3>>& points,
                           int dirs_per_point, uint64_t seed);

// does the segment a-b intersect the closed box?
bool segment_intersects_box(const std::array<double, 3>& a,
                            const std::array<double, 3>& b, const VolumeBox& box);

}  // namespace otpet
