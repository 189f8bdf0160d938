#pragma once

// Independent reference implementations used by the tests only.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "otpet/grid.hpp"

namespace oracle {

// Dense Euclidean projection onto {continuity residual == 0} built by probing
// otpet::continuity_residual with unit vectors and solving the KKT system
// with Eigen. Deliberately shares no code with ContinuityProjector.
struct DenseContinuityOracle {
  const otpet::GridSpec g;
  otpet::ContinuityProjector::Mode mode;
  bool with_source;

  struct VarRef {
    int kind;  // 0 = rho, 1..3 = w axis+1, 4 = zeta
    int t;
    int64_t idx;  // index within the slice / face-slab
  };
  std::vector<VarRef> vars;

  DenseContinuityOracle(const otpet::GridSpec& spec,
                        otpet::ContinuityProjector::Mode m)
      : g(spec), mode(m), with_source(m == otpet::ContinuityProjector::kFixedBothSource) {
    int k0 = (mode == otpet::ContinuityProjector::kFreeEnds) ? 0 : 1;
    int k1 = (mode == otpet::ContinuityProjector::kFixedBothSource) ? g.m - 1 : g.m;
    for (int k = k0; k <= k1; ++k)
      for (int64_t v = 0; v < g.cells(); ++v) vars.push_back({0, k, v});
    for (int d = 0; d < 3; ++d) {
      for (int i = 0; i < g.m; ++i)
        for (int x = (d == 0); x < g.nx + (d == 0 ? 1 : 0) - (d == 0); ++x)
          for (int y = (d == 1); y < g.ny + (d == 1 ? 1 : 0) - (d == 1); ++y)
            for (int z = (d == 2); z < g.nz + (d == 2 ? 1 : 0) - (d == 2); ++z)
              vars.push_back({d + 1, i, g.face(d, x, y, z)});
    }
    if (with_source)
      for (int i = 0; i < g.m; ++i)
        for (int64_t v = 0; v < g.cells(); ++v) vars.push_back({4, i, v});
  }

  double& ref(otpet::StaggeredField& f, std::vector<double>& zeta, const VarRef& r) const {
    if (r.kind == 0) return f.slice(r.t)[r.idx];
    if (r.kind <= 3) return f.wslice(r.kind - 1, r.t)[r.idx];
    return zeta[int64_t(r.t) * g.cells() + r.idx];
  }

  std::vector<double> residual(const otpet::StaggeredField& f,
                               const std::vector<double>* zeta) const {
    std::vector<double> res = otpet::continuity_residual(f);
    if (with_source)
      for (size_t k = 0; k < res.size(); ++k) res[k] -= (*zeta)[k];
    return res;
  }

  // projects in place, like ContinuityProjector::project
  void project(otpet::StaggeredField& f, std::vector<double>* zeta) const {
    const int64_t rows = int64_t(g.m) * g.cells();
    const int64_t nv = int64_t(vars.size());
    Eigen::MatrixXd B(rows, nv);
    otpet::StaggeredField probe = otpet::StaggeredField::zeros(g);
    std::vector<double> pz(with_source ? rows : 0, 0.0);
    for (int64_t j = 0; j < nv; ++j) {
      ref(probe, pz, vars[j]) = 1.0;
      std::vector<double> r = residual(probe, with_source ? &pz : nullptr);
      for (int64_t i = 0; i < rows; ++i) B(i, j) = r[i];
      ref(probe, pz, vars[j]) = 0.0;
    }
    std::vector<double> r0 = residual(f, zeta);
    Eigen::VectorXd rv(rows);
    for (int64_t i = 0; i < rows; ++i) rv(i) = r0[i];
    Eigen::MatrixXd BBt = B * B.transpose();
    Eigen::VectorXd lam = BBt.fullPivLu().solve(rv);
    Eigen::VectorXd corr = B.transpose() * lam;
    std::vector<double> dummy(with_source ? rows : 0, 0.0);
    std::vector<double>& zref = zeta ? *zeta : dummy;
    for (int64_t j = 0; j < nv; ++j) ref(f, zref, vars[j]) -= corr(j);
  }
};

// golden-section minimizer on [lo, hi]
inline double golden_min(const std::function<double(double)>& f, double lo,
                         double hi, double tol = 1e-12, int iters = 200) {
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < iters && (b - a) > tol * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (fc < fd) {
      b = d; d = c; fd = fc;
      c = b - gr * (b - a); fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + gr * (b - a); fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// nested grid search for a 2D minimizer: n x n samples, zooming `rounds`
// times around the best cell
inline std::pair<double, double> grid2_min(
    const std::function<double(double, double)>& f, double lo1, double hi1,
    double lo2, double hi2, int n = 120, int rounds = 6) {
  double b1 = 0.5 * (lo1 + hi1), b2 = 0.5 * (lo2 + hi2);
  for (int r = 0; r < rounds; ++r) {
    double best = std::numeric_limits<double>::infinity();
    double c1 = b1, c2 = b2;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j) {
        double x = lo1 + (hi1 - lo1) * i / n, y = lo2 + (hi2 - lo2) * j / n;
        double v = f(x, y);
        if (v < best) {
          best = v;
          c1 = x;
          c2 = y;
        }
      }
    double h1 = 2.0 * (hi1 - lo1) / n, h2 = 2.0 * (hi2 - lo2) / n;
    b1 = c1;
    b2 = c2;
    lo1 = c1 - h1;
    hi1 = c1 + h1;
    lo2 = c2 - h2;
    hi2 = c2 + h2;
  }
  return {b1, b2};
}

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double sample_std(const std::vector<double>& v) {
  double m = mean(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace oracle
