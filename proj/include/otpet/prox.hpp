#pragma once

#include <cstdint>

#include "otpet/errors.hpp"

// Pointwise proximal/projection primitives for the primal-dual solver.

namespace otpet {

// Euclidean projection of (a, b[0..nb), c) onto the convex set
//   { a + |b|^2 / (4 gamma_b) + c^2 / (4 gamma_c) <= 0 },
// in place. Pass nc = 0 to drop the c component (plain paraboloid).
// The active-boundary case is a safeguarded Newton root solve; failure to
// converge within 50 iterations raises NumericalError with the coordinates.
void project_paraboloid(double& a, double* b, int nb, double* c, int nc,
                        double gamma_b, double gamma_c);

inline void project_paraboloid(double& a, double* b, int nb, double gamma_b) {
  project_paraboloid(a, b, nb, nullptr, 0, gamma_b, 1.0);
}

// prox of the conjugate of mu -> -E log mu at ytilde with step sigma:
// (ytilde - sqrt(ytilde^2 + 4 sigma E)) / 2, strictly negative for E > 0
double prox_log_conj(double ytilde, double sigma, double E);

}  // namespace otpet
