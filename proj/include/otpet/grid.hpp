#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

// Space-time staggered grid for densities and momentum fields.
//
// Conventions used throughout:
//   - rho stores *density* (mass / mm^3) at voxel centers, one spatial
//     array per time slice; m time bins give m+1 slices.
//   - omega stores momentum density (mass / (mm^2 s)) on voxel faces,
//     one face-array per time bin and axis; the outermost faces are
//     pinned to zero (no flux through the domain boundary).
//   - layout is row-major [t][x][y][z], z fastest.

namespace otpet {

struct GridSpec {
  int m = 0;  // time bins; rho has m+1 slices
  int nx = 0, ny = 0, nz = 0;
  double dt = 0.0;  // s
  double dl = 0.0;  // mm, cubic voxels
  std::array<double, 3> origin{0.0, 0.0, 0.0};  // mm

  int64_t cells() const { return int64_t(nx) * ny * nz; }
  int64_t cell(int x, int y, int z) const { return (int64_t(x) * ny + y) * nz + z; }
  std::array<double, 3> center(int x, int y, int z) const {
    return {origin[0] + (x + 0.5) * dl, origin[1] + (y + 0.5) * dl,
            origin[2] + (z + 0.5) * dl};
  }
  double voxel_volume() const { return dl * dl * dl; }
  double cell_measure() const { return dt * dl * dl * dl; }  // dt * dl^3
  double total_time() const { return m * dt; }

  // faces normal to axis d: one extra layer along d
  int64_t faces(int d) const {
    int64_t s[3] = {nx, ny, nz};
    s[d] += 1;
    return s[0] * s[1] * s[2];
  }
  int64_t face(int d, int x, int y, int z) const {
    int sy = ny + (d == 1 ? 1 : 0), sz = nz + (d == 2 ? 1 : 0);
    return (int64_t(x) * sy + y) * sz + z;
  }
};

struct StaggeredField {
  GridSpec spec;
  std::vector<double> rho;               // (m+1) * cells
  std::array<std::vector<double>, 3> w;  // per axis: m * faces(d)

  static StaggeredField zeros(const GridSpec& g);
  double* slice(int i) { return rho.data() + int64_t(i) * spec.cells(); }
  const double* slice(int i) const { return rho.data() + int64_t(i) * spec.cells(); }
  double* wslice(int d, int i) { return w[d].data() + int64_t(i) * spec.faces(d); }
  const double* wslice(int d, int i) const { return w[d].data() + int64_t(i) * spec.faces(d); }
  // total mass of one time slice
  double slice_mass(int i) const;
  void enforce_zero_flux();  // zero the boundary faces
};

struct CenteredField {
  GridSpec spec;
  std::vector<double> rho;               // m * cells
  std::array<std::vector<double>, 3> w;  // each m * cells
};

// two-point averages onto bin centers
CenteredField interpolate(const StaggeredField& f);

// time-interpolated density only: out[i] = (rho_i + rho_{i+1}) / 2, m*cells
void interpolate_rho(const StaggeredField& f, std::vector<double>& out);

// out[bin][cell] = average of the two faces of the cell along axis d (m*cells)
void space_center(const GridSpec& g, int d, const std::vector<double>& wd,
                  std::vector<double>& out);

// transpose of space_center restricted to interior faces; the pinned boundary
// faces are constants and receive nothing (accumulates into wd_out)
void space_center_adjoint_add(const GridSpec& g, int d, const std::vector<double>& yc,
                              std::vector<double>& wd_out);

// transpose of interpolate_rho (accumulates into rho_out, (m+1)*cells)
void time_center_adjoint_add(const GridSpec& g, const std::vector<double>& yc,
                             std::vector<double>& rho_out);

// per cell: (rho_{i+1}-rho_i)/dt + sum_d (w_d[f+1]-w_d[f])/dl   (m * cells)
std::vector<double> continuity_residual(const StaggeredField& f);

// || residual ||_2 relative to the magnitudes of its two contributions
double continuity_residual_relnorm(const StaggeredField& f);

// beta * sum_cells |w_c|^2 / rho_c * (dt*dl^3); 0/0 = 0, +inf if rho_c < 0
// or (rho_c == 0 with w_c != 0)
double benamou_brenier_action(const CenteredField& c, double beta);

// as above but with negative/zero rho handled by a floor: cells with
// rho_c <= floor contribute |w_c|^2/floor only if |w_c| > 0; used for
// iteration diagnostics where iterates carry roundoff-scale negativity
double benamou_brenier_action_floored(const CenteredField& c, double beta, double floor);

// Euclidean projection onto the affine set {continuity residual == 0}
// (optionally with pinned end slices and a source term), via discrete
// space-time Poisson solves with trigonometric transforms.
class ContinuityProjector {
 public:
  enum Mode {
    kFreeEnds,        // all rho slices free            (DST-I in time)
    kFixedInit,       // slice 0 pinned                 (Thomas solve in time)
    kFixedBothSource  // slices 0 and m pinned, source  (DCT-II in time)
  };

  ContinuityProjector(const GridSpec& g, Mode mode);
  ~ContinuityProjector();
  ContinuityProjector(const ContinuityProjector&) = delete;
  ContinuityProjector& operator=(const ContinuityProjector&) = delete;

  // in-place; f's pinned slices are left untouched. zeta (m*cells) must be
  // given iff mode == kFixedBothSource; constraint is then
  // d_t rho + div w - zeta == 0.
  void project(StaggeredField& f, std::vector<double>* zeta = nullptr) const;

  const GridSpec& spec() const { return g_; }
  Mode mode() const { return mode_; }

 private:
  void solve_poisson(std::vector<double>& b) const;  // b: m*cells, in-place

  GridSpec g_;
  Mode mode_;
  std::vector<double> lam_t_, lam_x_, lam_y_, lam_z_;  // transform eigenvalues
  double norm_ = 1.0;
  mutable std::vector<double> buf_;
  void* plan_fwd_ = nullptr;  // fftw_plan
  void* plan_inv_ = nullptr;
};

// raw little-endian float32 tensor + text sidecar (<path>.meta)
void save_density_tensor(const std::string& path, const GridSpec& g,
                         const std::vector<double>& rho_slices);
// loads dims/steps into g and data into rho; throws on malformed files
void load_density_tensor(const std::string& path, GridSpec& g,
                         std::vector<double>& rho_slices);

// x-y projection of one slice: plain sum over z, written as a CSV matrix
// (ny columns, nx rows)
void write_xy_projection_csv(const std::string& path, const GridSpec& g,
                             const double* slice);

}  // namespace otpet
