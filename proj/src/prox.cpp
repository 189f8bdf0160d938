#include "otpet/prox.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace otpet {

void project_paraboloid(double& a, double* b, int nb, double* c, int nc,
                        double gamma_b, double gamma_c) {
  if (gamma_b <= 0 || (nc > 0 && gamma_c <= 0))
    throw ConfigError("paraboloid projection: curvature parameters must be positive");
  double bb = 0.0;
  for (int i = 0; i < nb; ++i) bb += b[i] * b[i];
  double cc = 0.0;
  for (int i = 0; i < nc; ++i) cc += c[i] * c[i];

  double slack = a + bb / (4.0 * gamma_b) + (nc ? cc / (4.0 * gamma_c) : 0.0);
  if (slack <= 0.0) return;  // already inside

  if (bb == 0.0 && cc == 0.0) {  // apex: project straight down
    a = 0.0;
    return;
  }

  // On the boundary the projection satisfies
  //   a' = a - lam,  b' = b / (1 + lam/(2 gb)),  c' = c / (1 + lam/(2 gc)),
  // with lam > 0 the root of the decreasing convex function g below.
  auto g = [&](double lam) {
    double db = 1.0 + lam / (2.0 * gamma_b);
    double v = a - lam + bb / (4.0 * gamma_b * db * db);
    if (nc) {
      double dc = 1.0 + lam / (2.0 * gamma_c);
      v += cc / (4.0 * gamma_c * dc * dc);
    }
    return v;
  };
  auto gp = [&](double lam) {
    double db = 1.0 + lam / (2.0 * gamma_b);
    double v = -1.0 - bb / (4.0 * gamma_b * gamma_b * db * db * db);
    if (nc) {
      double dc = 1.0 + lam / (2.0 * gamma_c);
      v -= cc / (4.0 * gamma_c * gamma_c * dc * dc * dc);
    }
    return v;
  };

  double lo = 0.0, hi = slack;  // g(0) = slack > 0, g(slack) <= 0
  double lam = lo;
  const double tol = 1e-12 * (1.0 + std::abs(a) + bb / (4 * gamma_b) +
                              (nc ? cc / (4 * gamma_c) : 0.0));
  bool done = false;
  for (int it = 0; it < 50; ++it) {
    double gv = g(lam);
    if (std::abs(gv) <= tol) {
      done = true;
      break;
    }
    if (gv > 0)
      lo = lam;
    else
      hi = lam;
    double step = gv / gp(lam);
    double next = lam - step;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    lam = next;
  }
  if (!done && std::abs(g(lam)) > tol) {
    char msg[160];
    std::snprintf(msg, sizeof(msg),
                  "paraboloid projection failed at a=%.6g |b|^2=%.6g c^2=%.6g",
                  a, bb, cc);
    throw NumericalError(msg);
  }

  a -= lam;
  double db = 1.0 + lam / (2.0 * gamma_b);
  for (int i = 0; i < nb; ++i) b[i] /= db;
  if (nc) {
    double dc = 1.0 + lam / (2.0 * gamma_c);
    for (int i = 0; i < nc; ++i) c[i] /= dc;
  }
}

double prox_log_conj(double ytilde, double sigma, double E) {
  if (sigma <= 0 || E <= 0)
    throw ConfigError("log-conjugate prox: sigma and count must be positive");
  return 0.5 * (ytilde - std::sqrt(ytilde * ytilde + 4.0 * sigma * E));
}

}  // namespace otpet
