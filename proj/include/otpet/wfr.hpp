#pragma once

#include <array>
#include <vector>

#include "otpet/grid.hpp"
#include "otpet/simulator.hpp"

// Wasserstein-Fisher-Rao distances between spatial densities, computed by
// solving the dynamic (Benamou-Brenier with source) formulation on an
// auxiliary unit-time staggered grid, plus evaluation helpers that score a
// reconstructed space-time density against the simulator's ground truth.

namespace otpet {

struct WfrParams {
  double alpha = 25.0;      // mass-creation length scale, mm
  int inner_steps = 16;     // time bins of the auxiliary transport problem
  int refine = 1;           // spatial refinement factor of the auxiliary grid
  int iterations = 200000;  // primal-dual iteration budget per distance
  double tolerance = 1e-4;  // stop once the action has drifted less than
                            // this (relative) over the trailing half of the
                            // checkpoint history
  int check_every = 25;     // iterations per checkpoint
};

struct WfrResult {
  double d2 = 0.0;       // squared distance, mass * mm^2
  double rel_res = 0.0;  // relative action drift actually reached
  int iterations_run = 0;
  bool converged = false;
};

// scales a nonnegative density (one spatial slice of `g`) to unit total mass;
// zero or negative total mass is an error
std::vector<double> normalize(std::vector<double> mu, const GridSpec& g);

// exact squared distance between point masses m_x at x and m_y at y:
// 4 alpha^2 (m_x + m_y - 2 sqrt(m_x m_y) cos(min{|x-y| / (2 alpha), pi/2}))
double wfr_dirac_closed_form(const std::array<double, 3>& x,
                             const std::array<double, 3>& y, double m_x,
                             double m_y, double alpha);

// squared distance between two densities living on the spatial part of `g`
// (mu, nu: one slice each, cells() entries, nonnegative). Throws
// NumericalError if the iteration budget runs out above the tolerance.
WfrResult wfr_distance_detail(const std::vector<double>& mu,
                              const std::vector<double>& nu, const GridSpec& g,
                              const WfrParams& params);
double wfr_distance(const std::vector<double>& mu, const std::vector<double>& nu,
                    const GridSpec& g, const WfrParams& params);

// ground-truth density at time t as one spatial slice: each particle's mass
// splat over the 8 voxels surrounding its position (trilinear weights)
std::vector<double> rasterize_slice(const GroundTruth& gt, const GridSpec& g,
                                    double t);

struct EvalReport {
  double err = 0.0;        // mm; sqrt of the mean per-slice squared distance
  double mass_ratio = 0.0; // time-averaged reconstructed mass / true mass
  std::vector<double> slice_d2;  // per slice, unit-mass-normalized inputs
};

// mean squared distance between unit-normalized reconstructed and true
// slices at each of the m+1 slice times; returns the square root (mm).
// A zero-mass slice on either side is an error naming the slice.
double reconstruction_error(const StaggeredField& rho, const GroundTruth& gt,
                            const WfrParams& params);
EvalReport evaluate_reconstruction(const StaggeredField& rho,
                                   const GroundTruth& gt,
                                   const WfrParams& params);

// time-averaged total reconstructed mass over the true total mass
double mass_recovery_ratio(const StaggeredField& rho, const GroundTruth& gt);

}  // namespace otpet
