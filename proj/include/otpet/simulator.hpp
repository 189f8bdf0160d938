#pragma once

#include <array>
#include <string>
#include <vector>

#include "otpet/geometry.hpp"
#include "otpet/listmode.hpp"

// Idealized event simulator: piecewise-constant particle trajectories decay
// at rate (log 2 / half_life) * mass; each decay is detected via the two
// back-to-back photons, recorded as homogeneous scatter, or lost.

namespace otpet {

struct GroundTruth {
  struct Particle {
    std::vector<std::array<double, 3>> path;  // position per 1 s step, mm
    double mass = 0.0;                        // radionuclide amount
  };
  std::vector<Particle> particles;
  double total_time = 0.0;  // seconds; path.size() == ceil(total_time)
  double half_life = 0.0;   // seconds

  // position at time t in [0, total_time): constant within each 1 s step
  std::array<double, 3> position(int k, double t) const {
    const auto& p = particles.at(size_t(k)).path;
    auto s = size_t(t);
    if (s >= p.size()) s = p.size() - 1;
    return p[s];
  }
  double total_mass() const {
    double s = 0;
    for (const auto& p : particles) s += p.mass;
    return s;
  }
};

struct SimParams {
  double p_det = 0.795;        // photon pair survives and is registered
  double p_scatter = 0.18;     // recorded on a uniformly random pair
  double positron_sigma = 2.5; // annihilation offset std, mm
  int n_time_bins = 1;         // M; bin length = total_time / M
  uint64_t seed = 1;
};

// Particles strung along a circle in the x-y midplane of the box, each
// lagging the previous one by `spacing` millimetres of arc, advancing
// `speed` mm of arc per 1 s step.
GroundTruth circular_phantom(const VolumeBox& box, double radius, double speed,
                             int n_particles, double spacing,
                             double mass_per_particle, double total_time,
                             double half_life);

ListmodeData simulate_listmode(const GroundTruth& gt, const ScannerGeometry& geom,
                               const SimParams& sp);

// keep each recorded event independently with the given probability
ListmodeData subsample_events(const ListmodeData& lm, double fraction,
                              uint64_t seed);

// Remap each dataset's pair indices under an x-y rotation about the scanner
// axis (angle must be a multiple of the detector pitch) and sum counts.
ListmodeData rotate_and_merge(
    const ScannerGeometry& geom,
    const std::vector<std::pair<ListmodeData, double>>& datasets);

// CSV: t_s, particle, x_mm, y_mm, z_mm, mass — one row per step per particle
void save_ground_truth_csv(const GroundTruth& gt, const std::string& path);
GroundTruth load_ground_truth_csv(const std::string& path, double half_life);

}  // namespace otpet
