#include "otpet/wfr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <utility>

#include "otpet/errors.hpp"
#include "otpet/prox.hpp"

namespace otpet {
namespace {

constexpr double kPi = 3.14159265358979323846;

double nrm2sq(const std::vector<double>& v) {
  double s = 0.0;
  for (double u : v) s += u * u;
  return s;
}

void validate(const WfrParams& p) {
  if (!(p.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (p.inner_steps < 1) throw ConfigError("inner step count must be >= 1");
  if (p.refine < 1 || p.refine > 16)
    throw ConfigError("refinement factor must be in [1, 16]");
  if (p.iterations < 1 || p.check_every < 1)
    throw ConfigError("iteration budget and check cadence must be >= 1");
  if (!(p.tolerance > 0.0)) throw ConfigError("tolerance must be positive");
}

void validate_density(const std::vector<double>& mu, const GridSpec& g,
                      const char* what) {
  if (int64_t(mu.size()) != g.cells()) {
    char msg[96];
    std::snprintf(msg, sizeof msg, "%s does not match the grid size", what);
    throw ConfigError(msg);
  }
  for (double v : mu)
    if (!(v >= 0.0)) {
      char msg[96];
      std::snprintf(msg, sizeof msg, "%s must be nonnegative", what);
      throw ConfigError(msg);
    }
}

// unit-time auxiliary grid carrying the transport problem between two slices
GridSpec transport_grid(const GridSpec& g, int inner_steps) {
  GridSpec t = g;
  t.m = inner_steps;
  t.dt = 1.0 / inner_steps;
  return t;
}

// dual blocks of the transport K: y = (time-centered rho, space-centered
// momentum x3, source copy), each m*cells
struct TransportDual {
  std::vector<double> a;
  std::array<std::vector<double>, 3> b;
  std::vector<double> c;
};

TransportDual tdual_zeros(const GridSpec& g) {
  TransportDual y;
  const int64_t n = int64_t(g.m) * g.cells();
  y.a.assign(size_t(n), 0.0);
  for (int d = 0; d < 3; ++d) y.b[d].assign(size_t(n), 0.0);
  y.c.assign(size_t(n), 0.0);
  return y;
}

void apply_K(const GridSpec& g, const StaggeredField& f,
             const std::vector<double>& zeta, TransportDual& out) {
  interpolate_rho(f, out.a);
  for (int d = 0; d < 3; ++d) space_center(g, d, f.w[d], out.b[d]);
  out.c = zeta;
}

void zero_field(const GridSpec& g, StaggeredField& f) {
  if (f.rho.size() == size_t(int64_t(g.m + 1) * g.cells())) {
    std::fill(f.rho.begin(), f.rho.end(), 0.0);
    for (int d = 0; d < 3; ++d) std::fill(f.w[d].begin(), f.w[d].end(), 0.0);
  } else {
    f = StaggeredField::zeros(g);
  }
}

// transpose; the pinned end slices are constants and receive nothing
void apply_KT(const GridSpec& g, const TransportDual& y, StaggeredField& f,
              std::vector<double>& zeta) {
  zero_field(g, f);
  time_center_adjoint_add(g, y.a, f.rho);
  const int64_t cells = g.cells();
  std::fill(f.slice(0), f.slice(0) + cells, 0.0);
  std::fill(f.slice(g.m), f.slice(g.m) + cells, 0.0);
  for (int d = 0; d < 3; ++d) space_center_adjoint_add(g, d, y.b[d], f.w[d]);
  zeta = y.c;
}

double tdual_nrm2sq(const TransportDual& y) {
  double s = nrm2sq(y.a) + nrm2sq(y.c);
  for (int d = 0; d < 3; ++d) s += nrm2sq(y.b[d]);
  return s;
}

// action of a feasible iterate. Cells far below the peak density carry
// iteration noise whose ratio (flux^2 + source^2) / rho can dwarf the true
// action, so the denominator is floored at a fixed fraction of the peak:
// noise contributions are then bounded by noise^2 / floor, and the real
// contribution lost in floored cells is at most (rate^2 * their mass),
// a negligible share of the total.
double transport_action(const StaggeredField& f, const std::vector<double>& zeta,
                        double alpha) {
  CenteredField c = interpolate(f);
  double mx = 0.0;
  for (double v : c.rho) mx = std::max(mx, std::abs(v));
  const double floor = 1e-4 * (mx + 1e-300);
  const double a2 = alpha * alpha;
  double s = 0.0;
  for (size_t v = 0; v < c.rho.size(); ++v) {
    double num = a2 * zeta[v] * zeta[v];
    for (int d = 0; d < 3; ++d) num += c.w[d][v] * c.w[d][v];
    s += num / std::max(c.rho[v], floor);
  }
  return s * f.spec.cell_measure();
}

// zero-flux start, exactly feasible via a per-bin source balance. Densities
// interpolate linearly in time, except that pure creation or destruction
// starts on the squared-linear mass profile of the exact geodesic, which is
// much closer to optimal than the linear one.
void init_linear(const std::vector<double>& mu, const std::vector<double>& nu,
                 const GridSpec& g, StaggeredField& x,
                 std::vector<double>& zeta) {
  const int64_t cells = g.cells();
  bool mu_zero = true, nu_zero = true;
  for (int64_t v = 0; v < cells; ++v) {
    mu_zero = mu_zero && mu[v] == 0.0;
    nu_zero = nu_zero && nu[v] == 0.0;
  }
  x = StaggeredField::zeros(g);
  zeta.assign(size_t(int64_t(g.m) * cells), 0.0);
  for (int i = 0; i <= g.m; ++i) {
    double* s = x.slice(i);
    const double t = double(i) / g.m;
    double cm = 1.0 - t, cn = t;
    if (nu_zero) cm = (1.0 - t) * (1.0 - t);
    if (mu_zero) cn = t * t;
    for (int64_t v = 0; v < cells; ++v) s[v] = cm * mu[v] + cn * nu[v];
  }
  for (int i = 0; i < g.m; ++i) {
    double* z = zeta.data() + int64_t(i) * cells;
    const double* s0 = x.slice(i);
    const double* s1 = x.slice(i + 1);
    for (int64_t v = 0; v < cells; ++v) z[v] = (s1[v] - s0[v]) * g.m;
  }
}

// inject a coarse iterate into a grid refined by factor r. Densities, sources
// and duals copy into the subcells; fluxes interpolate linearly between the
// enclosing coarse faces, which reproduces the coarse divergence in every
// subcell, so an exactly feasible iterate stays exactly feasible.
void prolong(const GridSpec& gc, const GridSpec& gf, int r,
             const StaggeredField& xc, const std::vector<double>& zc,
             const TransportDual& yc, StaggeredField& xf,
             std::vector<double>& zf, TransportDual& yf) {
  xf = StaggeredField::zeros(gf);
  zf.assign(size_t(int64_t(gf.m) * gf.cells()), 0.0);
  yf = tdual_zeros(gf);
  auto cell_copy = [&](const double* src, double* dst) {
    for (int X = 0; X < gc.nx; ++X)
      for (int Y = 0; Y < gc.ny; ++Y)
        for (int Z = 0; Z < gc.nz; ++Z) {
          const double v = src[gc.cell(X, Y, Z)];
          if (v == 0.0) continue;
          for (int a = 0; a < r; ++a)
            for (int b = 0; b < r; ++b)
              for (int c = 0; c < r; ++c)
                dst[gf.cell(X * r + a, Y * r + b, Z * r + c)] = v;
        }
  };
  for (int i = 0; i <= gc.m; ++i) cell_copy(xc.slice(i), xf.slice(i));
  const int64_t cc = gc.cells(), cf = gf.cells();
  for (int i = 0; i < gc.m; ++i) {
    cell_copy(zc.data() + int64_t(i) * cc, zf.data() + int64_t(i) * cf);
    cell_copy(yc.a.data() + int64_t(i) * cc, yf.a.data() + int64_t(i) * cf);
    cell_copy(yc.c.data() + int64_t(i) * cc, yf.c.data() + int64_t(i) * cf);
    for (int d = 0; d < 3; ++d)
      cell_copy(yc.b[d].data() + int64_t(i) * cc,
                yf.b[d].data() + int64_t(i) * cf);
  }
  const int ncf[3] = {gf.nx, gf.ny, gf.nz};
  for (int d = 0; d < 3; ++d) {
    const int dx = d == 0, dy = d == 1, dz = d == 2;
    for (int i = 0; i < gc.m; ++i) {
      const double* wc = xc.wslice(d, i);
      double* wf = xf.wslice(d, i);
      for (int fx = 0; fx <= (d == 0 ? ncf[0] : ncf[0] - 1); ++fx)
        for (int fy = 0; fy <= (d == 1 ? ncf[1] : ncf[1] - 1); ++fy)
          for (int fz = 0; fz <= (d == 2 ? ncf[2] : ncf[2] - 1); ++fz) {
            const int f[3] = {fx, fy, fz};
            const int along = f[d];
            const int C[3] = {f[0] / r, f[1] / r, f[2] / r};
            const int rem = along % r;
            double v;
            if (rem == 0) {
              v = wc[gc.face(d, C[0], C[1], C[2])];
            } else {
              const double t = double(rem) / r;
              const double a = wc[gc.face(d, C[0], C[1], C[2])];
              const double b =
                  wc[gc.face(d, C[0] + dx, C[1] + dy, C[2] + dz)];
              v = (1.0 - t) * a + t * b;
            }
            wf[gf.face(d, fx, fy, fz)] = v;
          }
    }
  }
}

// inject an iterate into a grid with rt times more time bins. Densities at
// interfaces interpolate linearly inside each coarse bin; fluxes, sources and
// duals copy into the sub-bins. Constant flux and source against a linear
// density reproduce the coarse balance in every sub-bin, so an exactly
// feasible iterate stays exactly feasible.
void prolong_t(const GridSpec& gc, const GridSpec& gf, int rt,
               const StaggeredField& xc, const std::vector<double>& zc,
               const TransportDual& yc, StaggeredField& xf,
               std::vector<double>& zf, TransportDual& yf) {
  const int64_t cells = gc.cells();
  xf = StaggeredField::zeros(gf);
  zf.assign(size_t(int64_t(gf.m) * cells), 0.0);
  yf = tdual_zeros(gf);
  for (int j = 0; j <= gf.m; ++j) {
    const int k = j / rt, rem = j % rt;
    double* dst = xf.slice(j);
    const double* s0 = xc.slice(k);
    if (rem == 0) {
      std::copy(s0, s0 + cells, dst);
    } else {
      const double t = double(rem) / rt;
      const double* s1 = xc.slice(k + 1);
      for (int64_t v = 0; v < cells; ++v)
        dst[v] = (1.0 - t) * s0[v] + t * s1[v];
    }
  }
  for (int j = 0; j < gf.m; ++j) {
    const int k = j / rt;
    for (int d = 0; d < 3; ++d) {
      const double* wc = xc.wslice(d, k);
      double* wf = xf.wslice(d, j);
      std::copy(wc, wc + (xc.w[d].size() / size_t(gc.m)), wf);
    }
    auto bin_copy = [&](const std::vector<double>& src, std::vector<double>& dst) {
      std::copy(src.begin() + int64_t(k) * cells,
                src.begin() + int64_t(k + 1) * cells,
                dst.begin() + int64_t(j) * cells);
    };
    bin_copy(zc, zf);
    bin_copy(yc.a, yf.a);
    bin_copy(yc.c, yf.c);
    for (int d = 0; d < 3; ++d) bin_copy(yc.b[d], yf.b[d]);
  }
}

// one primal-dual solve; tau/sigma persist across refinement stages.
// The coupling blocks are two-point averages (nonexpansive) and an identity
// on disjoint outputs, so ||K|| <= 1 exactly and tau*sigma = 0.98 < 1 is kept
// fixed while the ratio tracks ||x|| / ||y||: step sizes should match the
// variable scales, and pure-transport instances (tiny dual certificates)
// want ratios orders of magnitude away from pure-source ones.
WfrResult cp_core(const std::vector<double>& mu, const std::vector<double>& nu,
                  const GridSpec& g, const WfrParams& P, bool throw_on_budget,
                  StaggeredField& x, std::vector<double>& zeta,
                  TransportDual& y, double& tau, double& sigma) {
  const int64_t cells = g.cells();
  const int m = g.m;
  const int64_t nbc = int64_t(m) * cells;
  const double gb = g.cell_measure();
  const double gc = g.cell_measure() * P.alpha * P.alpha;

  ContinuityProjector proj(g, ContinuityProjector::kFixedBothSource);

  // over-relaxed primal-dual iteration (relaxation factor rho < 2, admissible
  // because tau * sigma stays strictly below 1 / ||K||^2)
  const double rho = 1.9;
  StaggeredField xh = x, xbar = x, grad;
  std::vector<double> zh = zeta, zbar = zeta, zgrad;
  TransportDual kx;
  double b3[3];

  WfrResult res;
  std::vector<double> hist;  // checkpoint actions, for the plateau gate
  int done = 0;
  for (int it = 0; it < P.iterations; ++it) {
    bool checkpoint = ((it + 1) % P.check_every == 0) || it + 1 == P.iterations;

    apply_KT(g, y, grad, zgrad);
    for (size_t v = 0; v < x.rho.size(); ++v)
      xh.rho[v] = x.rho[v] - tau * grad.rho[v];
    for (int d = 0; d < 3; ++d)
      for (size_t v = 0; v < x.w[d].size(); ++v)
        xh.w[d][v] = x.w[d][v] - tau * grad.w[d][v];
    for (int64_t v = 0; v < nbc; ++v) zh[v] = zeta[v] - tau * zgrad[v];
    xh.enforce_zero_flux();
    proj.project(xh, &zh);

    for (size_t v = 0; v < x.rho.size(); ++v)
      xbar.rho[v] = 2.0 * xh.rho[v] - x.rho[v];
    for (int d = 0; d < 3; ++d)
      for (size_t v = 0; v < x.w[d].size(); ++v)
        xbar.w[d][v] = 2.0 * xh.w[d][v] - x.w[d][v];
    for (int64_t v = 0; v < nbc; ++v) zbar[v] = 2.0 * zh[v] - zeta[v];
    apply_K(g, xbar, zbar, kx);

    for (int64_t v = 0; v < nbc; ++v) {
      const double a0 = y.a[v], c0 = y.c[v];
      double b0[3];
      double a = a0 + sigma * kx.a[v];
      for (int d = 0; d < 3; ++d) {
        b0[d] = y.b[d][v];
        b3[d] = b0[d] + sigma * kx.b[d][v];
      }
      double c = c0 + sigma * kx.c[v];
      project_paraboloid(a, b3, 3, &c, 1, gb, gc);
      y.a[v] = a0 + rho * (a - a0);
      for (int d = 0; d < 3; ++d) y.b[d][v] = b0[d] + rho * (b3[d] - b0[d]);
      y.c[v] = c0 + rho * (c - c0);
    }

    for (size_t v = 0; v < x.rho.size(); ++v)
      x.rho[v] += rho * (xh.rho[v] - x.rho[v]);
    for (int d = 0; d < 3; ++d)
      for (size_t v = 0; v < x.w[d].size(); ++v)
        x.w[d][v] += rho * (xh.w[d][v] - x.w[d][v]);
    for (int64_t v = 0; v < nbc; ++v) zeta[v] += rho * (zh[v] - zeta[v]);
    done = it + 1;

    if (!checkpoint) continue;

    double sx = nrm2sq(x.rho) + nrm2sq(zeta);
    for (int d = 0; d < 3; ++d) sx += nrm2sq(x.w[d]);
    const double xn = std::sqrt(sx), yn = std::sqrt(tdual_nrm2sq(y));
    if (yn > 0.0 && xn > 0.0) {
      double fac = std::sqrt((xn / yn) / (tau / sigma));
      fac = std::min(2.0, std::max(0.5, fac));
      tau *= fac;
      sigma /= fac;
    }
    // step residuals can look small while information still propagates
    // across the grid, so convergence is judged on the action itself:
    // stop once it has moved less than tol * |A| across the most recent
    // half of the run. Under a c/k error tail this leaves a relative error
    // of about 2 * tol regardless of c.
    hist.push_back(transport_action(x, zeta, P.alpha));
    if (!std::isfinite(hist.back())) {
      char msg[96];
      std::snprintf(msg, sizeof msg, "transport solve diverged at iteration %d",
                    it + 1);
      throw NumericalError(msg);
    }
    const size_t nck = hist.size();
    if (nck >= 2) {
      const size_t lo2 = std::min(nck / 2, nck - 2);
      double mn = hist.back(), mx2 = hist.back();
      for (size_t k = lo2; k < nck; ++k) {
        mn = std::min(mn, hist[k]);
        mx2 = std::max(mx2, hist[k]);
      }
      res.rel_res = (mx2 - mn) / std::max(std::abs(hist.back()), 1e-300);
      if (res.rel_res <= P.tolerance) {
        res.converged = true;
        break;
      }
    }
  }
  res.iterations_run = done;
  if (!res.converged && throw_on_budget) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "transport solve stopped at iteration %d with action drift "
                  "%.3e above tolerance %.3e",
                  done, res.rel_res, P.tolerance);
    throw NumericalError(msg);
  }
  res.d2 = transport_action(x, zeta, P.alpha);
  return res;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<double> normalize(std::vector<double> mu, const GridSpec& g) {
  validate_density(mu, g, "density");
  double total = 0.0;
  for (double v : mu) total += v;
  total *= g.voxel_volume();
  if (!(total > 0.0)) throw ConfigError("cannot normalize a zero-mass density");
  const double s = 1.0 / total;
  for (double& v : mu) v *= s;
  return mu;
}

double wfr_dirac_closed_form(const std::array<double, 3>& x,
                             const std::array<double, 3>& y, double m_x,
                             double m_y, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (m_x < 0.0 || m_y < 0.0) throw ConfigError("point masses must be nonnegative");
  const double dx = x[0] - y[0], dy = x[1] - y[1], dz = x[2] - y[2];
  const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
  const double th = std::min(dist / (2.0 * alpha), kPi / 2.0);
  return 4.0 * alpha * alpha *
         (m_x + m_y - 2.0 * std::sqrt(m_x * m_y) * std::cos(th));
}

WfrResult wfr_distance_detail(const std::vector<double>& mu,
                              const std::vector<double>& nu, const GridSpec& g,
                              const WfrParams& params) {
  validate(params);
  validate_density(mu, g, "first density");
  validate_density(nu, g, "second density");

  // joint support bounding box: splatted inputs are exactly zero away from
  // their support, and the optimal flow stays near it, so the solve can run
  // on a padded crop (smooth inputs are positive everywhere and keep the
  // full grid)
  int lo[3] = {g.nx, g.ny, g.nz}, hi[3] = {-1, -1, -1};
  double rho_max = 0.0, mu_mass = 0.0, nu_mass = 0.0;
  constexpr size_t kClusterCap = 4096;
  std::vector<std::array<int, 3>> occ;  // occupied cells, up to the cap
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        const size_t v = size_t(g.cell(x, y, z));
        rho_max = std::max(rho_max, std::max(mu[v], nu[v]));
        mu_mass += mu[v];
        nu_mass += nu[v];
        if (mu[v] > 0.0 || nu[v] > 0.0) {
          const int c[3] = {x, y, z};
          for (int d = 0; d < 3; ++d) {
            lo[d] = std::min(lo[d], c[d]);
            hi[d] = std::max(hi[d], c[d]);
          }
          if (occ.size() <= kClusterCap) occ.push_back({x, y, z});
        }
      }
  WfrResult res;
  if (hi[0] < 0) {  // both identically zero
    res.converged = true;
    return res;
  }

  // mass is never transported farther than pi * alpha (beyond that pure
  // destruction plus creation is cheaper), so support components separated
  // by more than that solve independently and their squared distances add.
  // Splitting matters: it turns a far-apart pair into small local problems.
  const double link = kPi * params.alpha + 2.0 * g.dl;
  double diag2 = 0.0;
  for (int d = 0; d < 3; ++d)
    diag2 += double(hi[d] - lo[d]) * (hi[d] - lo[d]) * g.dl * g.dl;
  if (occ.size() <= kClusterCap && diag2 > link * link) {
    std::vector<int> parent(occ.size());
    for (size_t i = 0; i < occ.size(); ++i) parent[i] = int(i);
    std::function<int(int)> find = [&](int i) {
      while (parent[i] != i) i = parent[i] = parent[parent[i]];
      return i;
    };
    for (size_t i = 0; i < occ.size(); ++i)
      for (size_t j = i + 1; j < occ.size(); ++j) {
        double d2c = 0.0;
        for (int d = 0; d < 3; ++d)
          d2c += double(occ[i][d] - occ[j][d]) * (occ[i][d] - occ[j][d]) *
                 g.dl * g.dl;
        if (d2c <= link * link) {
          const int a = find(int(i)), b = find(int(j));
          if (a != b) parent[a] = b;
        }
      }
    bool split = false;
    const int root0 = find(0);
    for (size_t i = 1; i < occ.size() && !split; ++i)
      split = find(int(i)) != root0;
    if (split) {
      res.converged = true;
      std::vector<double> mc, nc;
      std::vector<char> done(occ.size(), 0);
      for (size_t i = 0; i < occ.size(); ++i) {
        if (done[i]) continue;
        const int r = find(int(i));
        mc.assign(mu.size(), 0.0);
        nc.assign(nu.size(), 0.0);
        for (size_t j = i; j < occ.size(); ++j) {
          if (done[j] || find(int(j)) != r) continue;
          done[j] = 1;
          const size_t v = size_t(g.cell(occ[j][0], occ[j][1], occ[j][2]));
          mc[v] = mu[v];
          nc[v] = nu[v];
        }
        const WfrResult rc = wfr_distance_detail(mc, nc, g, params);
        res.d2 += rc.d2;
        res.iterations_run = std::max(res.iterations_run, rc.iterations_run);
        res.rel_res = std::max(res.rel_res, rc.rel_res);
        res.converged = res.converged && rc.converged;
      }
      return res;
    }
  }
  // pad the crop so the refined grid keeps ~3 fine cells of margin: the
  // optimal flow mollifies sharp edges over a length that shrinks with the
  // cell size, so the margin can shrink with it too. Pure creation or
  // destruction (one side identically zero) transports nothing and keeps
  // only a single guard cell.
  int pad = (params.refine + 2) / params.refine;
  if (mu_mass == 0.0 || nu_mass == 0.0) pad = 1;
  const int n_in[3] = {g.nx, g.ny, g.nz};
  int cn[3];
  for (int d = 0; d < 3; ++d) {
    lo[d] = std::max(0, lo[d] - pad);
    hi[d] = std::min(n_in[d] - 1, hi[d] + pad);
    cn[d] = hi[d] - lo[d] + 1;
  }

  // solve with lengths in units of alpha and peak density 1: the action is
  // 1-homogeneous in the density and invariant under rescaling lengths
  // together with alpha, so this is exact, and it gives the flux and source
  // channels equal weight with all variables O(1)
  const int R = params.refine;
  const double c_scale = 1.0 / rho_max;  // > 0 past the early out
  auto build_stage = [&](int Rs, int ms, GridSpec& gs, std::vector<double>& fmu,
                         std::vector<double>& fnu) {
    gs = GridSpec();
    gs.nx = cn[0] * Rs;
    gs.ny = cn[1] * Rs;
    gs.nz = cn[2] * Rs;
    gs.dl = g.dl / Rs / params.alpha;
    gs.origin = {0.0, 0.0, 0.0};
    gs = transport_grid(gs, ms);
    fmu.assign(size_t(gs.cells()), 0.0);
    fnu.assign(size_t(gs.cells()), 0.0);
    for (int z = 0; z < cn[2]; ++z)
      for (int y = 0; y < cn[1]; ++y)
        for (int x = 0; x < cn[0]; ++x) {
          const size_t v = size_t(g.cell(lo[0] + x, lo[1] + y, lo[2] + z));
          const double mv = mu[v] * c_scale, nv = nu[v] * c_scale;
          if (mv == 0.0 && nv == 0.0) continue;
          for (int a = 0; a < Rs; ++a)
            for (int b = 0; b < Rs; ++b)
              for (int c = 0; c < Rs; ++c) {
                const size_t f =
                    size_t(gs.cell(x * Rs + a, y * Rs + b, z * Rs + c));
                fmu[f] = mv;
                fnu[f] = nv;
              }
        }
  };

  // multilevel: solve coarse first, inject into the refined grid, continue;
  // the fine stages then start near the optimum instead of having to carry
  // it across the grid one cell per iteration. Space refines first on a
  // coarse time axis (the expensive structure is spatial), then time.
  const int Mi = params.inner_steps;
  std::vector<int> tchain{Mi};
  while (tchain.front() > 4) {
    int c = tchain.front(), p = 2;
    while (c % p != 0) ++p;
    if (c / p < 2) break;
    tchain.insert(tchain.begin(), c / p);
  }
  std::vector<std::pair<int, int>> stages;  // (refine, time bins)
  for (int s = 1; s < R;) {
    stages.emplace_back(s, tchain.front());
    int p = 2;
    while ((R / s) % p != 0) ++p;
    s *= p;
  }
  for (size_t k = 0; k + 1 < tchain.size(); ++k)
    stages.emplace_back(R, tchain[k]);
  stages.emplace_back(R, Mi);

  WfrParams p2 = params;
  p2.alpha = 1.0;
  GridSpec gs, g_prev;
  std::vector<double> fmu, fnu;
  StaggeredField x;
  std::vector<double> zeta;
  TransportDual y;
  double tau = 0.99, sigma = 0.99;
  for (size_t si = 0; si < stages.size(); ++si) {
    build_stage(stages[si].first, stages[si].second, gs, fmu, fnu);
    if (si == 0) {
      init_linear(fmu, fnu, gs, x, zeta);
      y = tdual_zeros(gs);
    } else {
      StaggeredField xc = std::move(x);
      std::vector<double> zc = std::move(zeta);
      TransportDual yc = std::move(y);
      if (stages[si].first != stages[si - 1].first)
        prolong(g_prev, gs, stages[si].first / stages[si - 1].first, xc, zc,
                yc, x, zeta, y);
      else
        prolong_t(g_prev, gs, stages[si].second / stages[si - 1].second, xc,
                  zc, yc, x, zeta, y);
    }
    res = cp_core(fmu, fnu, gs, p2, si + 1 == stages.size(), x, zeta, y, tau,
                  sigma);
    g_prev = gs;
  }
  // back to mm^2 times mm-mass: one internal length unit is alpha mm and one
  // internal mass unit is alpha^3 / c_scale mm-masses
  res.d2 *= std::pow(params.alpha, 5) / c_scale;
  return res;
}

double wfr_distance(const std::vector<double>& mu, const std::vector<double>& nu,
                    const GridSpec& g, const WfrParams& params) {
  return wfr_distance_detail(mu, nu, g, params).d2;
}

std::vector<double> rasterize_slice(const GroundTruth& gt, const GridSpec& g,
                                    double t) {
  std::vector<double> out(size_t(g.cells()), 0.0);
  const double inv_vol = 1.0 / g.voxel_volume();
  const int n[3] = {g.nx, g.ny, g.nz};
  for (size_t k = 0; k < gt.particles.size(); ++k) {
    const auto p = gt.position(int(k), t);
    int i0[3];
    double fr[3];
    for (int d = 0; d < 3; ++d) {
      const double u = (p[d] - g.origin[d]) / g.dl - 0.5;
      const double fl = std::floor(u);
      i0[d] = int(fl);
      fr[d] = u - fl;
    }
    const double mass = gt.particles[k].mass;
    for (int cx = 0; cx < 2; ++cx)
      for (int cy = 0; cy < 2; ++cy)
        for (int cz = 0; cz < 2; ++cz) {
          const int ix = i0[0] + cx, iy = i0[1] + cy, iz = i0[2] + cz;
          if (ix < 0 || iy < 0 || iz < 0 || ix >= n[0] || iy >= n[1] ||
              iz >= n[2])
            continue;
          const double wgt = (cx ? fr[0] : 1.0 - fr[0]) *
                             (cy ? fr[1] : 1.0 - fr[1]) *
                             (cz ? fr[2] : 1.0 - fr[2]);
          out[size_t(g.cell(ix, iy, iz))] += mass * wgt * inv_vol;
        }
  }
  return out;
}

EvalReport evaluate_reconstruction(const StaggeredField& rho,
                                   const GroundTruth& gt,
                                   const WfrParams& params) {
  validate(params);
  const GridSpec& g = rho.spec;
  if (g.m < 1 || int64_t(rho.rho.size()) != int64_t(g.m + 1) * g.cells())
    throw ConfigError("reconstruction does not match its grid");

  EvalReport rep;
  rep.slice_d2.resize(size_t(g.m) + 1);
  double d2sum = 0.0;
  for (int s = 0; s <= g.m; ++s) {
    std::vector<double> truth = rasterize_slice(gt, g, s * g.dt);
    std::vector<double> recon(rho.slice(s), rho.slice(s) + g.cells());
    double tmass = 0.0, rmass = 0.0;
    for (double v : truth) tmass += v;
    for (double v : recon) rmass += v;
    char msg[96];
    if (!(tmass > 0.0)) {
      std::snprintf(msg, sizeof msg, "ground-truth slice %d has zero mass", s);
      throw ConfigError(msg);
    }
    if (!(rmass > 0.0)) {
      std::snprintf(msg, sizeof msg, "reconstructed slice %d has zero mass", s);
      throw ConfigError(msg);
    }
    WfrResult r = wfr_distance_detail(normalize(std::move(recon), g),
                                      normalize(std::move(truth), g), g, params);
    rep.slice_d2[size_t(s)] = r.d2;
    d2sum += r.d2;
  }
  rep.err = std::sqrt(d2sum / (g.m + 1));
  rep.mass_ratio = mass_recovery_ratio(rho, gt);
  return rep;
}

double reconstruction_error(const StaggeredField& rho, const GroundTruth& gt,
                            const WfrParams& params) {
  return evaluate_reconstruction(rho, gt, params).err;
}

double mass_recovery_ratio(const StaggeredField& rho, const GroundTruth& gt) {
  const double tm = gt.total_mass();
  if (!(tm > 0.0)) throw ConfigError("ground truth has zero mass");
  double s = 0.0;
  for (int i = 0; i <= rho.spec.m; ++i) s += rho.slice_mass(i);
  return s / (rho.spec.m + 1) / tm;
}

}  // namespace otpet
