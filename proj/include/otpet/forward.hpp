#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "otpet/geometry.hpp"
#include "otpet/grid.hpp"

// Tomographic forward operators restricted to the observed (bin, pair) keys.
//
// Detection: value_{i,j} = scale * sum_v w_j[v] * rhobar_i[v] * dl^3 with
//   w_j[v] = c * exp(-d(x_v, lor_j)^2 / (2 eps^2)),  zero beyond d > 4 eps,
//   scale  = (log 2 / half_life) * p_det * dt,
// and rhobar_i the two-slice time average on bin i. The single constant c is
// calibrated so that summing w_j over all enumerated pairs reproduces the
// Monte-Carlo geometric acceptance of the scanner.
//
// Scatter: value_{i,j} = (p_scatter / N) * (log 2 / half_life) * dt *
//   (mass of rhobar_i), identical for every pair.

namespace otpet {

using ObservedKeys = std::vector<std::pair<int, int>>;  // (i, j), 1-based

class SensitivityMatrix {
 public:
  SensitivityMatrix(const ScannerGeometry& geom, const GridSpec& grid,
                    double eps, double p_det, double half_life, double delta_t,
                    ObservedKeys observed);

  const ObservedKeys& keys() const { return keys_; }
  const GridSpec& grid() const { return grid_; }
  double eps() const { return eps_; }
  double scale() const { return scale_; }
  double lor_constant() const { return c_; }
  double acceptance() const { return acceptance_; }

  const std::vector<std::pair<int64_t, double>>& row(int j) const;

  std::vector<double> apply(const StaggeredField& f) const;
  // accumulate the transpose action on the density slices of `out`
  void adjoint_add(const std::vector<double>& phi, StaggeredField& out) const;

  // sparse text export, one `j v weight` line per stored entry
  void export_rows(const std::string& path) const;

 private:
  GridSpec grid_;
  double eps_, scale_, c_, acceptance_;
  ObservedKeys keys_;
  std::unordered_map<int, std::vector<std::pair<int64_t, double>>> rows_;
};

SensitivityMatrix build_sensitivity(const ScannerGeometry& geom,
                                    const GridSpec& grid, double eps,
                                    double p_det, double half_life,
                                    double delta_t, ObservedKeys observed);

std::vector<double> apply_det(const SensitivityMatrix& S, const StaggeredField& f);
StaggeredField adjoint_det(const SensitivityMatrix& S, const std::vector<double>& phi);

struct ScatterModel {
  double p_scatter = 0.0;
  int n_pairs = 0;
  double half_life = 0.0;
  double delta_t = 0.0;
  ObservedKeys keys;
  // (p_scatter / N) * (log 2 / half_life) * delta_t
  double scale() const;
};

std::vector<double> apply_scatter(const ScatterModel& sc, const StaggeredField& f);
void adjoint_scatter_add(const ScatterModel& sc, const std::vector<double>& phi,
                         StaggeredField& out);

// r * dt * (trapezoid sum of slice masses): the expected-count integral of
// the constant-rate term
double expected_total(const StaggeredField& f, double r);

}  // namespace otpet
