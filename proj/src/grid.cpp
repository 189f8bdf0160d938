#include "otpet/grid.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>

namespace otpet {

namespace {
// fftw plan creation is not thread safe; execution is
std::mutex g_fftw_mutex;
}  // namespace

StaggeredField StaggeredField::zeros(const GridSpec& g) {
  StaggeredField f;
  f.spec = g;
  f.rho.assign(int64_t(g.m + 1) * g.cells(), 0.0);
  for (int d = 0; d < 3; ++d) f.w[d].assign(int64_t(g.m) * g.faces(d), 0.0);
  return f;
}

double StaggeredField::slice_mass(int i) const {
  const double* s = slice(i);
  double acc = 0.0;
  for (int64_t v = 0; v < spec.cells(); ++v) acc += s[v];
  return acc * spec.voxel_volume();
}

void StaggeredField::enforce_zero_flux() {
  const GridSpec& g = spec;
  for (int i = 0; i < g.m; ++i) {
    double* wx = wslice(0, i);
    for (int y = 0; y < g.ny; ++y)
      for (int z = 0; z < g.nz; ++z) {
        wx[g.face(0, 0, y, z)] = 0.0;
        wx[g.face(0, g.nx, y, z)] = 0.0;
      }
    double* wy = wslice(1, i);
    for (int x = 0; x < g.nx; ++x)
      for (int z = 0; z < g.nz; ++z) {
        wy[g.face(1, x, 0, z)] = 0.0;
        wy[g.face(1, x, g.ny, z)] = 0.0;
      }
    double* wz = wslice(2, i);
    for (int x = 0; x < g.nx; ++x)
      for (int y = 0; y < g.ny; ++y) {
        wz[g.face(2, x, y, 0)] = 0.0;
        wz[g.face(2, x, y, g.nz)] = 0.0;
      }
  }
}

CenteredField interpolate(const StaggeredField& f) {
  const GridSpec& g = f.spec;
  CenteredField c;
  c.spec = g;
  const int64_t nc = g.cells();
  c.rho.resize(int64_t(g.m) * nc);
  for (int d = 0; d < 3; ++d) c.w[d].resize(int64_t(g.m) * nc);
  for (int i = 0; i < g.m; ++i) {
    const double* r0 = f.slice(i);
    const double* r1 = f.slice(i + 1);
    double* rc = c.rho.data() + int64_t(i) * nc;
    for (int64_t v = 0; v < nc; ++v) rc[v] = 0.5 * (r0[v] + r1[v]);
    for (int d = 0; d < 3; ++d) {
      const double* wf = f.wslice(d, i);
      double* wc = c.w[d].data() + int64_t(i) * nc;
      for (int x = 0; x < g.nx; ++x)
        for (int y = 0; y < g.ny; ++y)
          for (int z = 0; z < g.nz; ++z) {
            int xr = x + (d == 0), yr = y + (d == 1), zr = z + (d == 2);
            wc[g.cell(x, y, z)] =
                0.5 * (wf[g.face(d, x, y, z)] + wf[g.face(d, xr, yr, zr)]);
          }
    }
  }
  return c;
}

void interpolate_rho(const StaggeredField& f, std::vector<double>& out) {
  const GridSpec& g = f.spec;
  const int64_t nc = g.cells();
  out.resize(int64_t(g.m) * nc);
  for (int i = 0; i < g.m; ++i) {
    const double* r0 = f.slice(i);
    const double* r1 = f.slice(i + 1);
    double* o = out.data() + int64_t(i) * nc;
    for (int64_t v = 0; v < nc; ++v) o[v] = 0.5 * (r0[v] + r1[v]);
  }
}

void space_center(const GridSpec& g, int d, const std::vector<double>& wd,
                  std::vector<double>& out) {
  const int64_t cells = g.cells(), nf = g.faces(d);
  out.assign(int64_t(g.m) * cells, 0.0);
  const int dx = d == 0, dy = d == 1, dz = d == 2;
  for (int i = 0; i < g.m; ++i) {
    const double* w = wd.data() + int64_t(i) * nf;
    double* o = out.data() + int64_t(i) * cells;
    for (int x = 0; x < g.nx; ++x)
      for (int y = 0; y < g.ny; ++y)
        for (int z = 0; z < g.nz; ++z)
          o[g.cell(x, y, z)] =
              0.5 * (w[g.face(d, x, y, z)] + w[g.face(d, x + dx, y + dy, z + dz)]);
  }
}

void space_center_adjoint_add(const GridSpec& g, int d, const std::vector<double>& yc,
                              std::vector<double>& wd_out) {
  const int64_t cells = g.cells(), nf = g.faces(d);
  const int n[3] = {g.nx, g.ny, g.nz};
  for (int i = 0; i < g.m; ++i) {
    const double* y = yc.data() + int64_t(i) * cells;
    double* w = wd_out.data() + int64_t(i) * nf;
    for (int a = 0; a < n[0] + (d == 0 ? 1 : 0); ++a)
      for (int b = 0; b < n[1] + (d == 1 ? 1 : 0); ++b)
        for (int c = 0; c < n[2] + (d == 2 ? 1 : 0); ++c) {
          int fd = d == 0 ? a : d == 1 ? b : c;
          if (fd == 0 || fd == n[d]) continue;  // boundary face
          int xl = a - (d == 0), yl = b - (d == 1), zl = c - (d == 2);
          w[g.face(d, a, b, c)] += 0.5 * (y[g.cell(xl, yl, zl)] + y[g.cell(a, b, c)]);
        }
  }
}

void time_center_adjoint_add(const GridSpec& g, const std::vector<double>& yc,
                             std::vector<double>& rho_out) {
  const int64_t cells = g.cells();
  for (int i = 0; i < g.m; ++i) {
    const double* y = yc.data() + int64_t(i) * cells;
    double* lo = rho_out.data() + int64_t(i) * cells;
    double* hi = lo + cells;
    for (int64_t v = 0; v < cells; ++v) {
      lo[v] += 0.5 * y[v];
      hi[v] += 0.5 * y[v];
    }
  }
}

std::vector<double> continuity_residual(const StaggeredField& f) {
  const GridSpec& g = f.spec;
  const int64_t nc = g.cells();
  std::vector<double> res(int64_t(g.m) * nc);
  const double idt = 1.0 / g.dt, idl = 1.0 / g.dl;
  for (int i = 0; i < g.m; ++i) {
    const double* r0 = f.slice(i);
    const double* r1 = f.slice(i + 1);
    double* out = res.data() + int64_t(i) * nc;
    for (int64_t v = 0; v < nc; ++v) out[v] = (r1[v] - r0[v]) * idt;
    for (int d = 0; d < 3; ++d) {
      const double* wf = f.wslice(d, i);
      for (int x = 0; x < g.nx; ++x)
        for (int y = 0; y < g.ny; ++y)
          for (int z = 0; z < g.nz; ++z) {
            int xr = x + (d == 0), yr = y + (d == 1), zr = z + (d == 2);
            out[g.cell(x, y, z)] +=
                (wf[g.face(d, xr, yr, zr)] - wf[g.face(d, x, y, z)]) * idl;
          }
    }
  }
  return res;
}

double continuity_residual_relnorm(const StaggeredField& f) {
  const GridSpec& g = f.spec;
  std::vector<double> res = continuity_residual(f);
  double rn = 0.0;
  for (double v : res) rn += v * v;
  double sr = 0.0;
  for (double v : f.rho) sr += v * v;
  double sw = 0.0;
  for (int d = 0; d < 3; ++d)
    for (double v : f.w[d]) sw += v * v;
  double scale = std::sqrt(sr) / g.dt + std::sqrt(sw) / g.dl;
  if (scale <= 0.0) scale = 1.0;
  return std::sqrt(rn) / scale;
}

double benamou_brenier_action(const CenteredField& c, double beta) {
  const double meas = c.spec.cell_measure();
  const int64_t n = int64_t(c.rho.size());
  double acc = 0.0;
  for (int64_t v = 0; v < n; ++v) {
    double r = c.rho[v];
    double w2 = c.w[0][v] * c.w[0][v] + c.w[1][v] * c.w[1][v] + c.w[2][v] * c.w[2][v];
    if (r < 0.0) return std::numeric_limits<double>::infinity();
    if (r == 0.0) {
      if (w2 > 0.0) return std::numeric_limits<double>::infinity();
      continue;  // 0/0 = 0
    }
    acc += w2 / r;
  }
  return beta * meas * acc;
}

double benamou_brenier_action_floored(const CenteredField& c, double beta,
                                      double floor) {
  const double meas = c.spec.cell_measure();
  const int64_t n = int64_t(c.rho.size());
  double acc = 0.0;
  for (int64_t v = 0; v < n; ++v) {
    double r = c.rho[v];
    double w2 = c.w[0][v] * c.w[0][v] + c.w[1][v] * c.w[1][v] + c.w[2][v] * c.w[2][v];
    if (w2 == 0.0) continue;
    acc += w2 / std::max(r, floor);
  }
  return beta * meas * acc;
}

// ---------------------------------------------------------------------------
// continuity projection

ContinuityProjector::ContinuityProjector(const GridSpec& g, Mode mode)
    : g_(g), mode_(mode) {
  if (g.m < 1 || g.nx < 1 || g.ny < 1 || g.nz < 1 || g.dt <= 0 || g.dl <= 0)
    throw std::invalid_argument("ContinuityProjector: bad grid spec");
  if (mode == kFixedBothSource && g.m < 1)
    throw std::invalid_argument("ContinuityProjector: need at least one bin");

  const int m = g.m;
  // eigenvalues of the one-dimensional difference operators
  lam_t_.resize(m);
  const double idt2 = 1.0 / (g.dt * g.dt);
  if (mode == kFreeEnds) {
    // D_t D_t^T = tridiag(-1,2,-1), Dirichlet; DST-I modes
    for (int k = 0; k < m; ++k)
      lam_t_[k] = (2.0 - 2.0 * std::cos(M_PI * (k + 1) / (m + 1))) * idt2;
  } else if (mode == kFixedBothSource) {
    // Neumann in time (interior slices only); DCT-II modes
    for (int k = 0; k < m; ++k)
      lam_t_[k] = (2.0 - 2.0 * std::cos(M_PI * k / m)) * idt2;
  }  // kFixedInit solves the time direction directly (Thomas), lam_t_ unused

  auto neumann = [](int n, double idl2) {
    std::vector<double> lam(n);
    for (int k = 0; k < n; ++k)
      lam[k] = (2.0 - 2.0 * std::cos(M_PI * k / n)) * idl2;
    return lam;
  };
  const double idl2 = 1.0 / (g.dl * g.dl);
  lam_x_ = neumann(g.nx, idl2);
  lam_y_ = neumann(g.ny, idl2);
  lam_z_ = neumann(g.nz, idl2);

  buf_.assign(int64_t(m) * g.cells(), 0.0);

  std::lock_guard<std::mutex> lock(g_fftw_mutex);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  if (mode == kFixedInit) {
    // spatial-only transforms, repeated over the m bins
    int n3[3] = {g.nx, g.ny, g.nz};
    fftw_r2r_kind kf[3] = {FFTW_REDFT10, FFTW_REDFT10, FFTW_REDFT10};
    fftw_r2r_kind ki[3] = {FFTW_REDFT01, FFTW_REDFT01, FFTW_REDFT01};
    plan_fwd_ = fftw_plan_many_r2r(3, n3, m, buf_.data(), nullptr, 1, g.cells(),
                                   buf_.data(), nullptr, 1, g.cells(), kf, flags);
    plan_inv_ = fftw_plan_many_r2r(3, n3, m, buf_.data(), nullptr, 1, g.cells(),
                                   buf_.data(), nullptr, 1, g.cells(), ki, flags);
    norm_ = 8.0 * g.nx * g.ny * g.nz;
  } else {
    int n4[4] = {m, g.nx, g.ny, g.nz};
    fftw_r2r_kind tf = (mode == kFreeEnds) ? FFTW_RODFT00 : FFTW_REDFT10;
    fftw_r2r_kind ti = (mode == kFreeEnds) ? FFTW_RODFT00 : FFTW_REDFT01;
    fftw_r2r_kind kf[4] = {tf, FFTW_REDFT10, FFTW_REDFT10, FFTW_REDFT10};
    fftw_r2r_kind ki[4] = {ti, FFTW_REDFT01, FFTW_REDFT01, FFTW_REDFT01};
    plan_fwd_ = fftw_plan_r2r(4, n4, buf_.data(), buf_.data(), kf, flags);
    plan_inv_ = fftw_plan_r2r(4, n4, buf_.data(), buf_.data(), ki, flags);
    double tnorm = (mode == kFreeEnds) ? 2.0 * (m + 1) : 2.0 * m;
    norm_ = tnorm * 8.0 * g.nx * g.ny * g.nz;
  }
  if (!plan_fwd_ || !plan_inv_)
    throw std::runtime_error("ContinuityProjector: fftw planning failed");
}

ContinuityProjector::~ContinuityProjector() {
  std::lock_guard<std::mutex> lock(g_fftw_mutex);
  if (plan_fwd_) fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
  if (plan_inv_) fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
}

void ContinuityProjector::solve_poisson(std::vector<double>& b) const {
  const GridSpec& g = g_;
  const int m = g.m;
  const int64_t nc = g.cells();
  fftw_execute_r2r(static_cast<fftw_plan>(plan_fwd_), b.data(), b.data());

  if (mode_ == kFixedInit) {
    // tridiagonal solves in time per spatial mode:
    // diag [1,2,...,2]/dt^2 + mu_s, off-diagonal -1/dt^2
    const double idt2 = 1.0 / (g.dt * g.dt);
    std::vector<double> cp(m), dp(m);
    for (int x = 0; x < g.nx; ++x)
      for (int y = 0; y < g.ny; ++y)
        for (int z = 0; z < g.nz; ++z) {
          const double mu = lam_x_[x] + lam_y_[y] + lam_z_[z];
          const int64_t s = g.cell(x, y, z);
          // Thomas
          double diag0 = idt2 + mu;
          cp[0] = (m > 1) ? -idt2 / diag0 : 0.0;
          dp[0] = b[s] / diag0;
          for (int t = 1; t < m; ++t) {
            double diag = 2.0 * idt2 + mu;
            double denom = diag + idt2 * cp[t - 1];
            cp[t] = (t + 1 < m) ? -idt2 / denom : 0.0;
            dp[t] = (b[int64_t(t) * nc + s] + idt2 * dp[t - 1]) / denom;
          }
          b[int64_t(m - 1) * nc + s] = dp[m - 1];
          for (int t = m - 2; t >= 0; --t)
            b[int64_t(t) * nc + s] = dp[t] - cp[t] * b[int64_t(t + 1) * nc + s];
        }
    const double inv_norm = 1.0 / norm_;
    for (double& v : b) v *= inv_norm;
  } else {
    const double src = (mode_ == kFixedBothSource) ? 1.0 : 0.0;
    const double inv_norm = 1.0 / norm_;
    int64_t idx = 0;
    for (int t = 0; t < m; ++t) {
      const double lt = lam_t_[t] + src;
      for (int x = 0; x < g.nx; ++x) {
        const double ltx = lt + lam_x_[x];
        for (int y = 0; y < g.ny; ++y) {
          const double ltxy = ltx + lam_y_[y];
          for (int z = 0; z < g.nz; ++z, ++idx)
            b[idx] *= inv_norm / (ltxy + lam_z_[z]);
        }
      }
    }
  }
  fftw_execute_r2r(static_cast<fftw_plan>(plan_inv_), b.data(), b.data());
}

void ContinuityProjector::project(StaggeredField& f, std::vector<double>* zeta) const {
  const GridSpec& g = g_;
  if ((mode_ == kFixedBothSource) != (zeta != nullptr))
    throw std::invalid_argument("project: zeta given iff mode has a source");
  const int m = g.m;
  const int64_t nc = g.cells();
  std::vector<double>& lam = buf_;
  {
    std::vector<double> res = continuity_residual(f);
    if (zeta)
      for (int64_t k = 0; k < int64_t(m) * nc; ++k) res[k] -= (*zeta)[k];
    lam = res;
  }
  solve_poisson(lam);

  const double idt = 1.0 / g.dt, idl = 1.0 / g.dl;
  // rho -= D_t^T lam  (skipping pinned slices)
  const int k0 = (mode_ == kFreeEnds) ? 0 : 1;
  const int k1 = (mode_ == kFixedBothSource) ? m - 1 : m;
  for (int k = k0; k <= k1; ++k) {
    double* r = f.slice(k);
    const double* lprev = (k > 0) ? lam.data() + int64_t(k - 1) * nc : nullptr;
    const double* lcur = (k < m) ? lam.data() + int64_t(k) * nc : nullptr;
    for (int64_t v = 0; v < nc; ++v) {
      double d = 0.0;
      if (lprev) d += lprev[v];
      if (lcur) d -= lcur[v];
      r[v] -= d * idt;
    }
  }
  // w -= D^T lam on interior faces
  for (int i = 0; i < m; ++i) {
    const double* l = lam.data() + int64_t(i) * nc;
    for (int d = 0; d < 3; ++d) {
      double* wf = f.wslice(d, i);
      const int fx = g.nx + (d == 0 ? 1 : 0);
      const int fy = g.ny + (d == 1 ? 1 : 0);
      const int fz = g.nz + (d == 2 ? 1 : 0);
      for (int x = (d == 0); x < fx - (d == 0); ++x)
        for (int y = (d == 1); y < fy - (d == 1); ++y)
          for (int z = (d == 2); z < fz - (d == 2); ++z) {
            // face between cell (x,y,z)-e_d and (x,y,z)
            int xp = x - (d == 0), yp = y - (d == 1), zp = z - (d == 2);
            wf[g.face(d, x, y, z)] -= (l[g.cell(xp, yp, zp)] - l[g.cell(x, y, z)]) * idl;
          }
    }
  }
  if (zeta) {
    double* zt = zeta->data();
    for (int64_t k = 0; k < int64_t(m) * nc; ++k) zt[k] += lam[k];
  }
}

// ---------------------------------------------------------------------------
// tensor io

void save_density_tensor(const std::string& path, const GridSpec& g,
                         const std::vector<double>& rho_slices) {
  const int64_t nt = int64_t(rho_slices.size()) / g.cells();
  if (int64_t(rho_slices.size()) != nt * g.cells())
    throw std::runtime_error("save_density_tensor: size mismatch");
  std::ofstream raw(path, std::ios::binary);
  if (!raw) throw std::runtime_error("save_density_tensor: cannot open " + path);
  std::vector<float> line(g.cells());
  for (int64_t t = 0; t < nt; ++t) {
    const double* s = rho_slices.data() + t * g.cells();
    for (int64_t v = 0; v < g.cells(); ++v) line[v] = float(s[v]);
    raw.write(reinterpret_cast<const char*>(line.data()),
              std::streamsize(line.size() * sizeof(float)));
  }
  raw.close();
  char meta[512];
  std::snprintf(meta, sizeof(meta),
                "dims %lld %d %d %d\ndelta_t_s %.17g\ndelta_l_mm %.17g\n"
                "origin_mm %.17g %.17g %.17g\n",
                static_cast<long long>(nt), g.nx, g.ny, g.nz, g.dt, g.dl,
                g.origin[0], g.origin[1], g.origin[2]);
  std::ofstream side(path + ".meta");
  if (!side) throw std::runtime_error("save_density_tensor: cannot open sidecar");
  side << meta;
}

void load_density_tensor(const std::string& path, GridSpec& g,
                         std::vector<double>& rho_slices) {
  std::ifstream side(path + ".meta");
  if (!side) throw std::runtime_error("load_density_tensor: missing sidecar for " + path);
  std::string key;
  int64_t nt = 0;
  g = GridSpec{};
  while (side >> key) {
    if (key == "dims")
      side >> nt >> g.nx >> g.ny >> g.nz;
    else if (key == "delta_t_s")
      side >> g.dt;
    else if (key == "delta_l_mm")
      side >> g.dl;
    else if (key == "origin_mm")
      side >> g.origin[0] >> g.origin[1] >> g.origin[2];
    else {
      std::string rest;
      std::getline(side, rest);
    }
  }
  if (nt < 1 || g.nx < 1 || g.ny < 1 || g.nz < 1)
    throw std::runtime_error("load_density_tensor: malformed sidecar");
  g.m = int(nt - 1);
  std::ifstream raw(path, std::ios::binary);
  if (!raw) throw std::runtime_error("load_density_tensor: cannot open " + path);
  std::vector<float> line(g.cells());
  rho_slices.resize(nt * g.cells());
  for (int64_t t = 0; t < nt; ++t) {
    raw.read(reinterpret_cast<char*>(line.data()),
             std::streamsize(line.size() * sizeof(float)));
    if (!raw) throw std::runtime_error("load_density_tensor: truncated raw file");
    for (int64_t v = 0; v < g.cells(); ++v)
      rho_slices[t * g.cells() + v] = double(line[v]);
  }
}

void write_xy_projection_csv(const std::string& path, const GridSpec& g,
                             const double* slice) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_xy_projection_csv: cannot open " + path);
  char num[64];
  for (int x = 0; x < g.nx; ++x) {
    for (int y = 0; y < g.ny; ++y) {
      double acc = 0.0;
      for (int z = 0; z < g.nz; ++z) acc += slice[g.cell(x, y, z)];
      std::snprintf(num, sizeof(num), "%.17g", acc);
      out << num << (y + 1 < g.ny ? "," : "");
    }
    out << "\n";
  }
}

}  // namespace otpet
