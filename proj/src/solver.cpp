#include "otpet/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

#include "otpet/errors.hpp"
#include "otpet/prox.hpp"
#include "otpet/rng.hpp"

namespace otpet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double nrm2sq(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

void require_same_grid(const GridSpec& a, const GridSpec& b) {
  bool same = a.m == b.m && a.nx == b.nx && a.ny == b.ny && a.nz == b.nz &&
              a.dt == b.dt && a.dl == b.dl && a.origin == b.origin;
  if (!same) throw ConfigError("sensitivity grid does not match the solve grid");
}

void validate_problem(const ReconProblem& prob) {
  if (!prob.S || !prob.sc) throw ConfigError("problem is missing its operators");
  if (prob.counts.size() != prob.S->keys().size())
    throw ConfigError("counts are not aligned with the observed keys");
  if (prob.sc->keys != prob.S->keys())
    throw ConfigError("scatter keys do not match the detection keys");
  for (double c : prob.counts)
    if (!(c > 0.0)) throw ConfigError("observed keys must carry positive counts");
}

// ------- full coupling operator K and its transpose ------------------------

struct DualVec {
  std::vector<double> a;                 // time-centered rho block, m*cells
  std::array<std::vector<double>, 3> b;  // space-centered omega blocks
  std::vector<double> id;                // identity block, (m+1)*cells
  std::vector<double> f;                 // forward block, one per key
};

DualVec dual_zeros(const GridSpec& g, int64_t nk) {
  DualVec y;
  y.a.assign(int64_t(g.m) * g.cells(), 0.0);
  for (int d = 0; d < 3; ++d) y.b[d].assign(int64_t(g.m) * g.cells(), 0.0);
  y.id.assign(int64_t(g.m + 1) * g.cells(), 0.0);
  y.f.assign(nk, 0.0);
  return y;
}

double dual_nrm2sq(const DualVec& y) {
  double s = nrm2sq(y.a) + nrm2sq(y.id) + nrm2sq(y.f);
  for (int d = 0; d < 3; ++d) s += nrm2sq(y.b[d]);
  return s;
}

void apply_K(const ReconProblem& prob, const GridSpec& g, double p,
             const StaggeredField& x, DualVec& out) {
  interpolate_rho(x, out.a);
  for (int d = 0; d < 3; ++d) space_center(g, d, x.w[d], out.b[d]);
  out.id = x.rho;
  out.f = prob.S->apply(x);
  if (p != 0.0) {
    std::vector<double> sca = apply_scatter(*prob.sc, x);
    for (size_t k = 0; k < out.f.size(); ++k) out.f[k] += p * sca[k];
  }
}

void apply_KT(const ReconProblem& prob, const GridSpec& g, double p,
              const DualVec& y, StaggeredField& out) {
  out = StaggeredField::zeros(g);
  time_center_adjoint_add(g, y.a, out.rho);
  for (size_t v = 0; v < out.rho.size(); ++v) out.rho[v] += y.id[v];
  prob.S->adjoint_add(y.f, out);
  if (p != 0.0) {
    std::vector<double> pf(y.f.size());
    for (size_t k = 0; k < pf.size(); ++k) pf[k] = p * y.f[k];
    adjoint_scatter_add(*prob.sc, pf, out);
  }
  for (int d = 0; d < 3; ++d) space_center_adjoint_add(g, d, y.b[d], out.w[d]);
}

double field_nrm2sq(const StaggeredField& f) {
  double s = nrm2sq(f.rho);
  for (int d = 0; d < 3; ++d) s += nrm2sq(f.w[d]);
  return s;
}

}  // namespace

LinearOp coupling_operator(const ReconProblem& prob, const GridSpec& g, double p) {
  const int64_t cells = g.cells();
  const int64_t xr = int64_t(g.m + 1) * cells;
  int64_t dom = xr;
  for (int d = 0; d < 3; ++d) dom += int64_t(g.m) * g.faces(d);
  const int64_t nk = int64_t(prob.counts.size());
  LinearOp op;
  op.domain = dom;
  op.forward = [&prob, g, p, xr](const std::vector<double>& xin) {
    StaggeredField f = StaggeredField::zeros(g);
    std::copy(xin.begin(), xin.begin() + xr, f.rho.begin());
    int64_t off = xr;
    for (int d = 0; d < 3; ++d) {
      std::copy(xin.begin() + off, xin.begin() + off + int64_t(f.w[d].size()),
                f.w[d].begin());
      off += int64_t(f.w[d].size());
    }
    f.enforce_zero_flux();  // boundary faces are not variables
    DualVec y;
    apply_K(prob, g, p, f, y);
    std::vector<double> out;
    out.reserve(y.a.size() * 4 + y.id.size() + y.f.size());
    out.insert(out.end(), y.a.begin(), y.a.end());
    for (int d = 0; d < 3; ++d) out.insert(out.end(), y.b[d].begin(), y.b[d].end());
    out.insert(out.end(), y.id.begin(), y.id.end());
    out.insert(out.end(), y.f.begin(), y.f.end());
    return out;
  };
  op.adjoint = [&prob, g, p, nk](const std::vector<double>& yin) {
    DualVec y = dual_zeros(g, nk);
    int64_t off = 0;
    auto take = [&](std::vector<double>& dst) {
      std::copy(yin.begin() + off, yin.begin() + off + int64_t(dst.size()), dst.begin());
      off += int64_t(dst.size());
    };
    take(y.a);
    for (int d = 0; d < 3; ++d) take(y.b[d]);
    take(y.id);
    take(y.f);
    StaggeredField f;
    apply_KT(prob, g, p, y, f);
    std::vector<double> out;
    out.insert(out.end(), f.rho.begin(), f.rho.end());
    for (int d = 0; d < 3; ++d) out.insert(out.end(), f.w[d].begin(), f.w[d].end());
    return out;
  };
  return op;
}

namespace {

void pick_steps(const ReconParams& params, double norm_k, double& tau, double& sigma) {
  if (params.tau == 0.0 && params.sigma == 0.0) {
    tau = sigma = 0.99 / norm_k;
    return;
  }
  if (params.tau > 0.0 && params.sigma > 0.0) {
    tau = params.tau;
    sigma = params.sigma;
    if (tau * sigma * norm_k * norm_k >= 1.0)
      throw ConfigError("step sizes violate tau*sigma*|K|^2 < 1");
    return;
  }
  throw ConfigError("set both step sizes or neither");
}

double relaxed_floor(const StaggeredField& x) {
  double mx = 0.0;
  for (double v : x.rho) mx = std::max(mx, std::abs(v));
  return 1e-12 * (mx + 1e-300);
}

// alternating projections onto {rho >= 0} and the continuity constraint
bool polish_feasible(StaggeredField& f, const ContinuityProjector& proj,
                     double tol, int rounds) {
  for (int r = 0; r < rounds; ++r) {
    for (double& v : f.rho) v = std::max(0.0, v);
    if (continuity_residual_relnorm(f) <= tol) return true;
    proj.project(f);
  }
  return false;
}

// checkpoint diagnostic: the functional at the iterate's feasible shadow;
// falls back to a floored evaluation of the raw iterate if polishing stalls
double shadow_functional(const StaggeredField& x, const ContinuityProjector& proj,
                         const ReconProblem& prob, const ReconParams& params) {
  StaggeredField shadow = x;
  if (polish_feasible(shadow, proj, params.feas_tol, 100)) {
    double j = evaluate_functional(shadow, prob, params);
    if (std::isfinite(j)) return j;
  }
  return evaluate_functional_relaxed(x, prob, params, relaxed_floor(x));
}

}  // namespace

// ---------------------------------------------------------------------------

ObservedKeys keys_of(const ListmodeData& lm) {
  ObservedKeys keys;
  keys.reserve(lm.events.size());
  for (const auto& kv : lm.events)
    if (kv.second > 0) keys.push_back(kv.first);
  return keys;
}

ReconProblem make_problem(const SensitivityMatrix& S, const ScatterModel& sc,
                          const ListmodeData& lm) {
  ReconProblem prob;
  prob.S = &S;
  prob.sc = &sc;
  if (S.grid().m != lm.M || S.grid().dt != lm.delta_t)
    throw ConfigError("listmode timing does not match the grid");
  if (keys_of(lm) != S.keys())
    throw ConfigError("sensitivity keys do not match the observed listmode keys");
  prob.counts.reserve(S.keys().size());
  for (const auto& key : S.keys())
    prob.counts.push_back(double(lm.events.at(key)));
  validate_problem(prob);
  return prob;
}

double mass_calibration(const SensitivityMatrix& S, const ScatterModel& sc) {
  return S.grid().m *
         (S.scale() * S.acceptance() + sc.scale() * double(sc.n_pairs));
}

double evaluate_functional(const StaggeredField& x, const ReconProblem& prob,
                           const ReconParams& params) {
  validate_problem(prob);
  for (double v : x.rho)
    if (v < 0.0) return kInf;
  double J = expected_total(x, params.r);
  std::vector<double> det = prob.S->apply(x);
  std::vector<double> sca = apply_scatter(*prob.sc, x);
  for (size_t k = 0; k < prob.counts.size(); ++k) {
    double arg = det[k] + params.p * sca[k];
    if (!(arg > 0.0)) return kInf;
    J -= prob.counts[k] * std::log(arg);
  }
  if (params.beta != 0.0) {
    CenteredField c = interpolate(x);
    J += benamou_brenier_action(c, params.beta);
  }
  return J;
}

double evaluate_functional_relaxed(const StaggeredField& x, const ReconProblem& prob,
                                   const ReconParams& params, double floor) {
  double J = expected_total(x, params.r);
  std::vector<double> det = prob.S->apply(x);
  std::vector<double> sca = apply_scatter(*prob.sc, x);
  for (size_t k = 0; k < prob.counts.size(); ++k) {
    double arg = det[k] + params.p * sca[k];
    J -= prob.counts[k] * std::log(std::max(arg, 1e-300));
  }
  if (params.beta != 0.0) {
    CenteredField c = interpolate(x);
    J += benamou_brenier_action_floored(c, params.beta, floor);
  }
  return J;
}

double operator_norm_estimate(const LinearOp& op, uint64_t seed) {
  if (op.domain <= 0 || !op.forward || !op.adjoint)
    throw ConfigError("norm estimation needs a complete operator");
  Rng rng(seed);
  std::vector<double> v(op.domain);
  for (double& e : v) e = rng.normal();
  double nv = std::sqrt(nrm2sq(v));
  for (double& e : v) e /= nv;
  double prev = -1.0;
  for (int it = 0; it < 10000; ++it) {
    std::vector<double> u = op.forward(v);
    double est = std::sqrt(nrm2sq(u));
    std::vector<double> w = op.adjoint(u);
    double nw = std::sqrt(nrm2sq(w));
    if (nw == 0.0) return 0.0;  // start vector lies in the null space
    for (int64_t i = 0; i < op.domain; ++i) v[i] = w[i] / nw;
    if (prev >= 0.0 && std::abs(est - prev) <= 1e-6 * std::max(est, 1e-300))
      return est;
    prev = est;
  }
  throw NumericalError("power iteration for the operator norm did not converge");
}

Reconstruction chambolle_pock(const ReconProblem& prob, const GridSpec& grid,
                              const ReconParams& params, const SolverState* init) {
  validate_problem(prob);
  require_same_grid(prob.S->grid(), grid);
  if (!(params.beta > 0.0))
    throw ConfigError("coupled solve needs beta > 0; use the framewise baseline");
  if (!(params.r > 0.0)) throw ConfigError("rate coefficient must be positive");
  if (params.iterations < 1 || params.check_every < 1)
    throw ConfigError("iteration budget and check cadence must be >= 1");
  if (!(params.tolerance > 0.0)) throw ConfigError("tolerance must be positive");

  const int64_t cells = grid.cells();
  const int m = grid.m;
  const int64_t nk = int64_t(prob.counts.size());
  const double vol = grid.voxel_volume();

  LinearOp op = coupling_operator(prob, grid, params.p);
  double norm_k = 1.01 * operator_norm_estimate(op, 777);
  double tau, sigma;
  pick_steps(params, norm_k, tau, sigma);

  // per-slice coefficients of the linear rate term (trapezoid in time)
  std::vector<double> cr(m + 1, params.r * grid.dt * vol);
  cr[0] *= 0.5;
  cr[m] *= 0.5;

  StaggeredField x = StaggeredField::zeros(grid);
  DualVec y = dual_zeros(grid, nk);
  if (init) {
    bool ok = init->x.rho.size() == x.rho.size() &&
              init->y1a.size() == y.a.size() && init->y2.size() == y.id.size() &&
              init->y3.size() == y.f.size();
    for (int d = 0; d < 3; ++d)
      ok = ok && init->x.w[d].size() == x.w[d].size() &&
           init->y1b[d].size() == y.b[d].size();
    if (!ok) throw ConfigError("warm start state does not match the problem size");
    x = init->x;
    y.a = init->y1a;
    for (int d = 0; d < 3; ++d) y.b[d] = init->y1b[d];
    y.id = init->y2;
    y.f = init->y3;
    x.enforce_zero_flux();
  } else {
    double eobs = 0.0;
    for (double c : prob.counts) eobs += c;
    double kappa = mass_calibration(*prob.S, *prob.sc);
    double dens = kappa > 0.0 ? eobs / kappa / (double(cells) * vol) : 0.0;
    std::fill(x.rho.begin(), x.rho.end(), dens);
  }
  StaggeredField xprev = x;

  ContinuityProjector proj(grid, ContinuityProjector::kFreeEnds);
  const double gamma_b = params.beta * grid.cell_measure();

  Reconstruction rec;
  rec.params = params;
  rec.operator_norm = norm_k;

  StaggeredField xbar = x, grad;
  DualVec kx, y_old, kdx;
  std::vector<double> b3(3);

  int done = 0;
  for (int it = 0; it < params.iterations; ++it) {
    bool checkpoint = ((it + 1) % params.check_every == 0) || it + 1 == params.iterations;
    if (checkpoint) y_old = y;

    // dual ascent at the extrapolated primal point
    for (size_t v = 0; v < x.rho.size(); ++v)
      xbar.rho[v] = 2.0 * x.rho[v] - xprev.rho[v];
    for (int d = 0; d < 3; ++d)
      for (size_t v = 0; v < x.w[d].size(); ++v)
        xbar.w[d][v] = 2.0 * x.w[d][v] - xprev.w[d][v];
    apply_K(prob, grid, params.p, xbar, kx);

    const int64_t nbc = int64_t(m) * cells;
    for (int64_t v = 0; v < nbc; ++v) {
      double a = y.a[v] + sigma * kx.a[v];
      for (int d = 0; d < 3; ++d) b3[d] = y.b[d][v] + sigma * kx.b[d][v];
      project_paraboloid(a, b3.data(), 3, gamma_b);
      y.a[v] = a;
      for (int d = 0; d < 3; ++d) y.b[d][v] = b3[d];
    }
    for (int i = 0; i <= m; ++i) {
      double* yi = y.id.data() + int64_t(i) * cells;
      for (int64_t v = 0; v < cells; ++v) yi[v] = cr[i];
    }
    for (int64_t k = 0; k < nk; ++k)
      y.f[k] = prox_log_conj(y.f[k] + sigma * kx.f[k], sigma, prob.counts[k]);

    // primal descent and projection onto the continuity constraint
    apply_KT(prob, grid, params.p, y, grad);
    std::swap(x, xprev);
    for (size_t v = 0; v < x.rho.size(); ++v)
      x.rho[v] = xprev.rho[v] - tau * grad.rho[v];
    for (int d = 0; d < 3; ++d)
      for (size_t v = 0; v < x.w[d].size(); ++v)
        x.w[d][v] = xprev.w[d][v] - tau * grad.w[d][v];
    x.enforce_zero_flux();
    proj.project(x);
    done = it + 1;

    if (!checkpoint) continue;

    // residuals of the optimality system for the step just taken
    StaggeredField dx = xprev;
    for (size_t v = 0; v < dx.rho.size(); ++v) dx.rho[v] -= x.rho[v];
    for (int d = 0; d < 3; ++d)
      for (size_t v = 0; v < dx.w[d].size(); ++v) dx.w[d][v] -= x.w[d][v];
    DualVec dy = y_old;
    for (size_t v = 0; v < dy.a.size(); ++v) dy.a[v] -= y.a[v];
    for (int d = 0; d < 3; ++d)
      for (size_t v = 0; v < dy.b[d].size(); ++v) dy.b[d][v] -= y.b[d][v];
    for (size_t v = 0; v < dy.id.size(); ++v) dy.id[v] -= y.id[v];
    for (size_t v = 0; v < dy.f.size(); ++v) dy.f[v] -= y.f[v];

    StaggeredField ktdy;
    apply_KT(prob, grid, params.p, dy, ktdy);
    double psq = 0.0;
    for (size_t v = 0; v < dx.rho.size(); ++v) {
      double e = dx.rho[v] / tau - ktdy.rho[v];
      psq += e * e;
    }
    for (int d = 0; d < 3; ++d)
      for (size_t v = 0; v < dx.w[d].size(); ++v) {
        double e = dx.w[d][v] / tau - ktdy.w[d][v];
        psq += e * e;
      }
    apply_K(prob, grid, params.p, dx, kdx);
    double dsq = 0.0;
    for (size_t v = 0; v < dy.a.size(); ++v) {
      double e = dy.a[v] / sigma - kdx.a[v];
      dsq += e * e;
    }
    for (int d = 0; d < 3; ++d)
      for (size_t v = 0; v < dy.b[d].size(); ++v) {
        double e = dy.b[d][v] / sigma - kdx.b[d][v];
        dsq += e * e;
      }
    for (size_t v = 0; v < dy.id.size(); ++v) {
      double e = dy.id[v] / sigma - kdx.id[v];
      dsq += e * e;
    }
    for (size_t v = 0; v < dy.f.size(); ++v) {
      double e = dy.f[v] / sigma - kdx.f[v];
      dsq += e * e;
    }

    IterationStat st;
    st.iter = it + 1;
    st.primal_res = std::sqrt(psq);
    st.dual_res = std::sqrt(dsq);
    double xn = std::sqrt(field_nrm2sq(x)), yn = std::sqrt(dual_nrm2sq(y));
    st.rel_res = (tau * st.primal_res + sigma * st.dual_res) / (xn + yn + 1e-300);
    st.functional = shadow_functional(x, proj, prob, params);
    st.scatter_ratio = estimate_scatter_ratio(x, prob, params.p);
    if (!std::isfinite(st.rel_res) || std::isnan(st.functional)) {
      char msg[128];
      std::snprintf(msg, sizeof msg, "solver diverged at iteration %d", it + 1);
      throw NumericalError(msg);
    }
    rec.stats.push_back(st);
    if (st.rel_res <= params.tolerance) {
      rec.converged = true;
      break;
    }
  }
  rec.iterations_run = done;

  rec.state.x = x;
  rec.state.y1a = y.a;
  for (int d = 0; d < 3; ++d) rec.state.y1b[d] = y.b[d];
  rec.state.y2 = y.id;
  rec.state.y3 = y.f;

  // nonnegative density meeting the continuity constraint to tolerance
  if (!polish_feasible(x, proj, params.feas_tol, 1000))
    throw NumericalError("feasibility polish stalled above the residual bound");

  rec.x = x;
  rec.continuity_residual = continuity_residual_relnorm(x);
  rec.final_functional = evaluate_functional(x, prob, params);
  return rec;
}

Reconstruction framewise_reconstruct(const ReconProblem& prob, const GridSpec& grid,
                                     ReconParams params, int frames) {
  validate_problem(prob);
  require_same_grid(prob.S->grid(), grid);
  if (frames < 1) throw ConfigError("frame count must be >= 1");
  if (grid.m % frames != 0)
    throw ConfigError("frame count must divide the number of time bins");
  if (params.r < 0.0) throw ConfigError("rate coefficient must be nonnegative");
  if (params.iterations < 1 || params.check_every < 1)
    throw ConfigError("iteration budget and check cadence must be >= 1");
  params.beta = 0.0;

  const int64_t cells = grid.cells();
  const int m = grid.m, bins_per = grid.m / frames;
  const double vol = grid.voxel_volume();
  const double crv = params.r * bins_per * grid.dt * vol;
  const double det_scale = prob.S->scale() * vol;
  const double sca_scale = params.p * prob.sc->scale() * vol;

  Reconstruction rec;
  rec.params = params;
  rec.x = StaggeredField::zeros(grid);
  rec.converged = true;

  std::vector<std::vector<double>> frame_u(frames);
  int iter_base = 0;
  for (int f = 0; f < frames; ++f) {
    // keys and counts of this frame; rows pre-resolved
    std::vector<const std::vector<std::pair<int64_t, double>>*> rows;
    std::vector<double> cnt;
    for (size_t k = 0; k < prob.counts.size(); ++k) {
      int bin = prob.S->keys()[k].first;
      if (bin <= f * bins_per || bin > (f + 1) * bins_per) continue;
      rows.push_back(&prob.S->row(prob.S->keys()[k].second));
      cnt.push_back(prob.counts[k]);
    }
    const int64_t nkf = int64_t(cnt.size());

    auto apply_f = [&](const std::vector<double>& u) {
      std::vector<double> out(nkf);
      double total = 0.0;
      for (int64_t v = 0; v < cells; ++v) total += u[v];
      for (int64_t k = 0; k < nkf; ++k) {
        double s = 0.0;
        for (const auto& e : *rows[k]) s += e.second * u[e.first];
        out[k] = det_scale * s + sca_scale * total;
      }
      return out;
    };
    auto adjoint_add_f = [&](const std::vector<double>& phi, std::vector<double>& u) {
      double psum = 0.0;
      for (int64_t k = 0; k < nkf; ++k) {
        psum += phi[k];
        for (const auto& e : *rows[k]) u[e.first] += det_scale * e.second * phi[k];
      }
      if (sca_scale != 0.0)
        for (int64_t v = 0; v < cells; ++v) u[v] += sca_scale * psum;
    };

    LinearOp op;
    op.domain = cells;
    op.forward = [&](const std::vector<double>& u) {
      std::vector<double> out = u;  // identity block first
      std::vector<double> fwd = apply_f(u);
      out.insert(out.end(), fwd.begin(), fwd.end());
      return out;
    };
    op.adjoint = [&](const std::vector<double>& yin) {
      std::vector<double> u(yin.begin(), yin.begin() + cells);
      std::vector<double> phi(yin.begin() + cells, yin.end());
      adjoint_add_f(phi, u);
      return u;
    };
    double norm_k = 1.01 * operator_norm_estimate(op, 777 + uint64_t(f));
    double tau, sigma;
    pick_steps(params, norm_k, tau, sigma);

    double ef = 0.0;
    for (double c : cnt) ef += c;
    double kappa_f = bins_per * (prob.S->scale() * prob.S->acceptance() +
                                 prob.sc->scale() * double(prob.sc->n_pairs));
    std::vector<double> u(cells,
                          kappa_f > 0.0 ? ef / kappa_f / (double(cells) * vol) : 0.0);
    std::vector<double> uprev = u, ubar(cells), ynn(cells, 0.0), y3(nkf, 0.0);
    std::vector<double> ynn_old, y3_old;

    bool conv = false;
    int done = 0;
    for (int it = 0; it < params.iterations; ++it) {
      bool checkpoint =
          ((it + 1) % params.check_every == 0) || it + 1 == params.iterations;
      if (checkpoint) {
        ynn_old = ynn;
        y3_old = y3;
      }
      for (int64_t v = 0; v < cells; ++v) ubar[v] = 2.0 * u[v] - uprev[v];
      std::vector<double> fk = apply_f(ubar);
      for (int64_t v = 0; v < cells; ++v)
        ynn[v] = std::min(ynn[v] + sigma * ubar[v], crv);
      for (int64_t k = 0; k < nkf; ++k)
        y3[k] = prox_log_conj(y3[k] + sigma * fk[k], sigma, cnt[k]);

      std::vector<double> grad = ynn;
      adjoint_add_f(y3, grad);
      std::swap(u, uprev);
      for (int64_t v = 0; v < cells; ++v) u[v] = uprev[v] - tau * grad[v];
      done = it + 1;
      if (!checkpoint) continue;

      std::vector<double> du(cells), dynn(cells), dy3(nkf);
      for (int64_t v = 0; v < cells; ++v) du[v] = uprev[v] - u[v];
      for (int64_t v = 0; v < cells; ++v) dynn[v] = ynn_old[v] - ynn[v];
      for (int64_t k = 0; k < nkf; ++k) dy3[k] = y3_old[k] - y3[k];
      std::vector<double> ktdy = dynn;
      adjoint_add_f(dy3, ktdy);
      double psq = 0.0;
      for (int64_t v = 0; v < cells; ++v) {
        double e = du[v] / tau - ktdy[v];
        psq += e * e;
      }
      std::vector<double> kdu = apply_f(du);
      double dsq = 0.0;
      for (int64_t v = 0; v < cells; ++v) {
        double e = dynn[v] / sigma - du[v];
        dsq += e * e;
      }
      for (int64_t k = 0; k < nkf; ++k) {
        double e = dy3[k] / sigma - kdu[k];
        dsq += e * e;
      }
      IterationStat st;
      st.iter = iter_base + it + 1;
      st.primal_res = std::sqrt(psq);
      st.dual_res = std::sqrt(dsq);
      double un = std::sqrt(nrm2sq(u));
      double yn = std::sqrt(nrm2sq(ynn) + nrm2sq(y3));
      st.rel_res = (tau * st.primal_res + sigma * st.dual_res) / (un + yn + 1e-300);
      // frame objective at the iterate's nonnegative shadow
      std::vector<double> uc(u);
      for (double& v : uc) v = std::max(0.0, v);
      double J = 0.0;
      for (int64_t v = 0; v < cells; ++v) J += crv * uc[v];
      std::vector<double> fu = apply_f(uc);
      for (int64_t k = 0; k < nkf; ++k)
        J -= cnt[k] * std::log(std::max(fu[k], 1e-300));
      st.functional = J;
      if (!std::isfinite(st.rel_res) || std::isnan(st.functional)) {
        char msg[128];
        std::snprintf(msg, sizeof msg, "frame %d diverged at iteration %d", f, it + 1);
        throw NumericalError(msg);
      }
      rec.stats.push_back(st);
      if (st.rel_res <= params.tolerance) {
        conv = true;
        break;
      }
    }
    iter_base += done;
    rec.iterations_run += done;
    rec.converged = rec.converged && conv;
    for (int64_t v = 0; v < cells; ++v) u[v] = std::max(0.0, u[v]);
    frame_u[f] = std::move(u);
  }

  // slice s sits in frame floor(s * frames / m); the last slice closes frame F-1
  for (int s = 0; s <= m; ++s) {
    int f = std::min(frames - 1, int((int64_t(s) * frames) / m));
    double* dst = rec.x.slice(s);
    for (int64_t v = 0; v < cells; ++v) dst[v] = frame_u[f][v];
  }
  rec.state.x = rec.x;
  rec.continuity_residual = continuity_residual_relnorm(rec.x);
  rec.final_functional = evaluate_functional(rec.x, prob, params);
  return rec;
}

double estimate_scatter_ratio(const StaggeredField& x, const ReconProblem& prob,
                              double p) {
  validate_problem(prob);
  std::vector<double> det = prob.S->apply(x);
  std::vector<double> sca = apply_scatter(*prob.sc, x);
  double num = 0.0, den = 0.0;
  for (size_t k = 0; k < prob.counts.size(); ++k) {
    den += prob.counts[k];
    double s = p * sca[k];
    if (s > 0.0 && s >= det[k]) num += prob.counts[k];
  }
  return den > 0.0 ? num / den : 0.0;
}

double compute_beta(double beta_ref, double v_ref, double thalf_ref, double v,
                    double thalf) {
  if (!(v > 0.0) || !(thalf > 0.0) || !(v_ref > 0.0) || !(thalf_ref > 0.0))
    throw ConfigError("speeds and half-lives must be positive");
  return beta_ref * (thalf_ref * v_ref * v_ref) / (thalf * v * v);
}

}  // namespace otpet
