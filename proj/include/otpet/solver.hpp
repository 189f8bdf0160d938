#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "otpet/forward.hpp"
#include "otpet/grid.hpp"
#include "otpet/listmode.hpp"

// Primal-dual reconstruction of (rho, omega) by minimizing
//   r-term  +  poisson data term on observed bins  +  beta * action
// over solutions of the continuity equation, via the Chambolle-Pock
// iteration; plus the framewise (beta = 0, per-frame constant) baseline.

namespace otpet {

struct ReconParams {
  double beta = 0.9;   // action weight as used by the functional
  double p = 1.0;      // scatter term reweighting
  double r = 0.0;      // constant-rate coefficient, 1/s
  int iterations = 5000;
  double tau = 0.0, sigma = 0.0;  // 0 -> auto 0.99 / (1.01 * ||K||)
  double tolerance = 1e-6;        // relative primal-dual residual
  int check_every = 25;           // residual / diagnostics cadence
  double feas_tol = 1e-8;         // final continuity residual bound
};

// maps a weight stated in the r*T = 1 convention onto the functional's
// scale for the actual rate r (rescaling the problem rescales beta along)
inline double scaled_beta(double beta_config, double r, double total_time) {
  return beta_config * r * total_time;
}

struct ReconProblem {
  const SensitivityMatrix* S = nullptr;
  const ScatterModel* sc = nullptr;
  std::vector<double> counts;  // aligned with S->keys()
};

ObservedKeys keys_of(const ListmodeData& lm);
ReconProblem make_problem(const SensitivityMatrix& S, const ScatterModel& sc,
                          const ListmodeData& lm);

// total detection probability per unit decay intensity integrated over the
// acquisition: (p_det * acceptance + p_scatter) * (log 2 / half_life) * T
double mass_calibration(const SensitivityMatrix& S, const ScatterModel& sc);

struct IterationStat {
  int iter = 0;
  double functional = 0.0;  // relaxed evaluation at the current iterate
  double primal_res = 0.0;
  double dual_res = 0.0;
  double rel_res = 0.0;
  double scatter_ratio = 0.0;
};

struct SolverState {
  StaggeredField x;
  std::vector<double> y1a;                 // dual of time-centered rho
  std::array<std::vector<double>, 3> y1b;  // dual of space-centered omega
  std::vector<double> y2;                  // dual of the identity block
  std::vector<double> y3;                  // dual of the forward block
};

struct Reconstruction {
  StaggeredField x;
  SolverState state;  // for warm starts
  std::vector<IterationStat> stats;
  double final_functional = 0.0;  // strict evaluation at the returned point
  double continuity_residual = 0.0;
  int iterations_run = 0;
  bool converged = false;
  double operator_norm = 0.0;
  ReconParams params;
};

// +inf on any rho < 0 or nonpositive log argument
double evaluate_functional(const StaggeredField& x, const ReconProblem& prob,
                           const ReconParams& params);
// diagnostics variant: log arguments and action denominators floored
double evaluate_functional_relaxed(const StaggeredField& x, const ReconProblem& prob,
                                   const ReconParams& params, double floor);

// power iteration on op^T op from a seeded random start; relative change
// < 1e-6 declares convergence, > 10^4 iterations raises NumericalError
struct LinearOp {
  std::function<std::vector<double>(const std::vector<double>&)> forward;
  std::function<std::vector<double>(const std::vector<double>&)> adjoint;
  int64_t domain = 0;
};
double operator_norm_estimate(const LinearOp& op, uint64_t seed = 12345);

// the coupled solve's K as a flat-vector operator; x = (rho, w0, w1, w2),
// y = (time-centered rho, space-centered omega x3, rho copy, forward values)
LinearOp coupling_operator(const ReconProblem& prob, const GridSpec& grid, double p);

Reconstruction chambolle_pock(const ReconProblem& prob, const GridSpec& grid,
                              const ReconParams& params,
                              const SolverState* init = nullptr);

// beta = 0 baseline: density constant on each of `frames` equal frames,
// no omega, no continuity coupling
Reconstruction framewise_reconstruct(const ReconProblem& prob, const GridSpec& grid,
                                     ReconParams params, int frames);

// count-weighted fraction of observed bins with p * scatter >= detection > 0
double estimate_scatter_ratio(const StaggeredField& x, const ReconProblem& prob,
                              double p);

// beta_ref * (thalf_ref * v_ref^2) / (thalf * v^2)
double compute_beta(double beta_ref, double v_ref, double thalf_ref, double v,
                    double thalf);

}  // namespace otpet
