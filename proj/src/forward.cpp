#include "otpet/forward.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace otpet {

namespace {

// deterministic interior lattice used for the calibration averages
std::vector<std::array<double, 3>> calibration_points(const VolumeBox& box) {
  std::vector<std::array<double, 3>> pts;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c)
        pts.push_back({box.origin[0] + (a + 0.5) / 3.0 * box.size[0],
                       box.origin[1] + (b + 0.5) / 3.0 * box.size[1],
                       box.origin[2] + (c + 0.5) / 3.0 * box.size[2]});
  return pts;
}

}  // namespace

SensitivityMatrix::SensitivityMatrix(const ScannerGeometry& geom,
                                     const GridSpec& grid, double eps,
                                     double p_det, double half_life,
                                     double delta_t, ObservedKeys observed)
    : grid_(grid), eps_(eps), keys_(std::move(observed)) {
  if (eps <= 0) throw ConfigError("sensitivity: eps must be positive");
  if (p_det < 0 || p_det > 1) throw ConfigError("sensitivity: bad p_det");
  if (half_life <= 0 || delta_t <= 0)
    throw ConfigError("sensitivity: need positive half_life and delta_t");
  scale_ = std::log(2.0) / half_life * p_det * delta_t;

  auto pts = calibration_points(geom.box());
  acceptance_ = estimate_acceptance(geom, pts, 20000, 9001);
  double wbar = 0.0;
  for (const auto& x : pts) {
    double s = 0.0;
    for (int j = 1; j <= geom.n_pairs(); ++j) {
      double d = point_lor_distance(geom, j, x);
      s += std::exp(-d * d / (2.0 * eps * eps));
    }
    wbar += s;
  }
  wbar /= double(pts.size());
  if (wbar <= 0) throw ConfigError("sensitivity: degenerate pair geometry");
  c_ = acceptance_ / wbar;

  const double cut = 4.0 * eps;
  const double margin = cut + 0.5 * std::sqrt(3.0) * grid.dl + 1e-9;
  for (const auto& [i, j] : keys_) {
    if (i < 1 || i > grid.m)
      throw ConfigError("sensitivity: observed bin index out of range");
    if (rows_.count(j)) continue;
    if (j < 1 || j > geom.n_pairs())
      throw ConfigError("sensitivity: observed pair index out of range");
    auto ep = geom.lor_endpoints(j);

    // clip the chord to the box inflated by the truncation radius, then scan
    // the voxel sub-box around the clipped piece
    double t0 = 0.0, t1 = 1.0;
    bool hit = true;
    for (int d = 0; d < 3; ++d) {
      double lo = grid.origin[d] - margin;
      double hi = grid.origin[d] + (d == 0 ? grid.nx : d == 1 ? grid.ny : grid.nz) * grid.dl + margin;
      double dd = ep[1][d] - ep[0][d];
      if (std::abs(dd) < 1e-300) {
        if (ep[0][d] < lo || ep[0][d] > hi) hit = false;
        continue;
      }
      double u0 = (lo - ep[0][d]) / dd, u1 = (hi - ep[0][d]) / dd;
      if (u0 > u1) std::swap(u0, u1);
      t0 = std::max(t0, u0);
      t1 = std::min(t1, u1);
      if (t0 > t1) hit = false;
    }
    auto& row = rows_[j];
    if (!hit) continue;

    int lo_idx[3], hi_idx[3];
    int dims[3] = {grid.nx, grid.ny, grid.nz};
    for (int d = 0; d < 3; ++d) {
      double a = ep[0][d] + t0 * (ep[1][d] - ep[0][d]);
      double b = ep[0][d] + t1 * (ep[1][d] - ep[0][d]);
      double lo = std::min(a, b) - margin, hi = std::max(a, b) + margin;
      lo_idx[d] = std::max(0, int(std::floor((lo - grid.origin[d]) / grid.dl)));
      hi_idx[d] = std::min(dims[d] - 1, int(std::floor((hi - grid.origin[d]) / grid.dl)));
    }
    for (int x = lo_idx[0]; x <= hi_idx[0]; ++x)
      for (int y = lo_idx[1]; y <= hi_idx[1]; ++y)
        for (int z = lo_idx[2]; z <= hi_idx[2]; ++z) {
          double d = point_lor_distance(geom, j, grid.center(x, y, z));
          if (d > cut) continue;
          row.emplace_back(grid.cell(x, y, z), c_ * std::exp(-d * d / (2.0 * eps * eps)));
        }
  }
}

const std::vector<std::pair<int64_t, double>>& SensitivityMatrix::row(int j) const {
  auto it = rows_.find(j);
  if (it == rows_.end())
    throw ConfigError("sensitivity: pair was not in the observed set");
  return it->second;
}

std::vector<double> SensitivityMatrix::apply(const StaggeredField& f) const {
  if (f.spec.cells() != grid_.cells() || f.spec.m != grid_.m)
    throw ConfigError("sensitivity: field shape mismatch");
  std::vector<double> rbar;
  interpolate_rho(f, rbar);
  std::vector<double> out(keys_.size(), 0.0);
  const double vol = grid_.voxel_volume();
  for (size_t k = 0; k < keys_.size(); ++k) {
    auto [i, j] = keys_[k];
    const double* rb = rbar.data() + int64_t(i - 1) * grid_.cells();
    double s = 0.0;
    for (const auto& [v, w] : rows_.at(j)) s += w * rb[v];
    out[k] = scale_ * vol * s;
  }
  return out;
}

void SensitivityMatrix::adjoint_add(const std::vector<double>& phi,
                                    StaggeredField& out) const {
  if (phi.size() != keys_.size())
    throw ConfigError("sensitivity: dual vector shape mismatch");
  if (out.spec.cells() != grid_.cells() || out.spec.m != grid_.m)
    throw ConfigError("sensitivity: field shape mismatch");
  const double vol = grid_.voxel_volume();
  for (size_t k = 0; k < keys_.size(); ++k) {
    auto [i, j] = keys_[k];
    double coeff = 0.5 * scale_ * vol * phi[k];
    if (coeff == 0.0) continue;
    double* lo = out.slice(i - 1);
    double* hi = out.slice(i);
    for (const auto& [v, w] : rows_.at(j)) {
      lo[v] += coeff * w;
      hi[v] += coeff * w;
    }
  }
}

void SensitivityMatrix::export_rows(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  std::vector<int> js;
  js.reserve(rows_.size());
  for (const auto& [j, row] : rows_) js.push_back(j);
  std::sort(js.begin(), js.end());
  char buf[96];
  for (int j : js)
    for (const auto& [v, w] : rows_.at(j)) {
      std::snprintf(buf, sizeof(buf), "%d %lld %.17g\n", j, (long long)v, w);
      os << buf;
    }
  if (!os) throw ConfigError("write failed: " + path);
}

SensitivityMatrix build_sensitivity(const ScannerGeometry& geom,
                                    const GridSpec& grid, double eps,
                                    double p_det, double half_life,
                                    double delta_t, ObservedKeys observed) {
  return SensitivityMatrix(geom, grid, eps, p_det, half_life, delta_t,
                           std::move(observed));
}

std::vector<double> apply_det(const SensitivityMatrix& S, const StaggeredField& f) {
  return S.apply(f);
}

StaggeredField adjoint_det(const SensitivityMatrix& S, const std::vector<double>& phi) {
  auto out = StaggeredField::zeros(S.grid());
  S.adjoint_add(phi, out);
  return out;
}

double ScatterModel::scale() const {
  if (n_pairs <= 0 || half_life <= 0 || delta_t <= 0)
    throw ConfigError("scatter: invalid model parameters");
  return p_scatter / n_pairs * std::log(2.0) / half_life * delta_t;
}

std::vector<double> apply_scatter(const ScatterModel& sc, const StaggeredField& f) {
  const double s = sc.scale();
  std::vector<double> out(sc.keys.size(), 0.0);
  // per-bin trapezoid mass, shared by every pair
  std::vector<double> bin_mass(size_t(f.spec.m) + 1, 0.0);
  for (int i = 0; i <= f.spec.m; ++i) bin_mass[size_t(i)] = f.slice_mass(i);
  for (size_t k = 0; k < sc.keys.size(); ++k) {
    int i = sc.keys[k].first;
    if (i < 1 || i > f.spec.m) throw ConfigError("scatter: bin index out of range");
    out[k] = s * 0.5 * (bin_mass[size_t(i - 1)] + bin_mass[size_t(i)]);
  }
  return out;
}

void adjoint_scatter_add(const ScatterModel& sc, const std::vector<double>& phi,
                         StaggeredField& out) {
  if (phi.size() != sc.keys.size())
    throw ConfigError("scatter: dual vector shape mismatch");
  const double s = sc.scale();
  std::vector<double> per_bin(size_t(out.spec.m) + 2, 0.0);  // 1-based bins
  for (size_t k = 0; k < sc.keys.size(); ++k)
    per_bin[size_t(sc.keys[k].first)] += phi[k];
  const double vol = out.spec.voxel_volume();
  for (int i = 0; i <= out.spec.m; ++i) {
    // slice i is averaged into bins i and i+1
    double coeff = 0.5 * s * vol *
                   (per_bin[size_t(i)] + (i + 1 <= out.spec.m ? per_bin[size_t(i + 1)] : 0.0));
    if (coeff == 0.0) continue;
    double* sl = out.slice(i);
    for (int64_t v = 0; v < out.spec.cells(); ++v) sl[v] += coeff;
  }
}

double expected_total(const StaggeredField& f, double r) {
  if (r <= 0) throw ConfigError("expected_total: rate must be positive");
  double s = 0.5 * (f.slice_mass(0) + f.slice_mass(f.spec.m));
  for (int i = 1; i < f.spec.m; ++i) s += f.slice_mass(i);
  return r * f.spec.dt * s;
}

}  // namespace otpet
