#include "otpet/simulator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "otpet/rng.hpp"

namespace otpet {

GroundTruth circular_phantom(const VolumeBox& box, double radius, double speed,
                             int n_particles, double spacing,
                             double mass_per_particle, double total_time,
                             double half_life) {
  if (radius <= 0 || n_particles < 1 || mass_per_particle < 0 ||
      total_time <= 0 || half_life <= 0 || spacing < 0 || speed < 0)
    throw ConfigError("phantom: nonpositive parameter");
  auto c = box.center();
  double margin = std::min(std::min(c[0] - box.origin[0], c[1] - box.origin[1]),
                           std::min(box.origin[0] + box.size[0] - c[0],
                                    box.origin[1] + box.size[1] - c[1]));
  if (radius > margin) throw ConfigError("phantom: circle leaves the volume");

  GroundTruth gt;
  gt.total_time = total_time;
  gt.half_life = half_life;
  int n_steps = std::max(1, int(std::ceil(total_time)));
  gt.particles.resize(size_t(n_particles));
  for (int k = 0; k < n_particles; ++k) {
    auto& p = gt.particles[size_t(k)];
    p.mass = mass_per_particle;
    p.path.resize(size_t(n_steps));
    for (int s = 0; s < n_steps; ++s) {
      double theta = (speed * s - spacing * k) / radius;
      p.path[size_t(s)] = {c[0] + radius * std::cos(theta),
                           c[1] + radius * std::sin(theta), c[2]};
    }
  }
  return gt;
}

ListmodeData simulate_listmode(const GroundTruth& gt, const ScannerGeometry& geom,
                               const SimParams& sp) {
  if (sp.p_det < 0 || sp.p_scatter < 0 || sp.p_det + sp.p_scatter > 1.0)
    throw ConfigError("simulate: need p_det, p_scatter >= 0 with sum <= 1");
  if (sp.positron_sigma < 0 || sp.n_time_bins < 1)
    throw ConfigError("simulate: bad positron_sigma or n_time_bins");
  if (gt.half_life <= 0 || gt.total_time <= 0)
    throw ConfigError("simulate: ground truth lacks time scale");

  ListmodeData lm;
  lm.M = sp.n_time_bins;
  lm.N = geom.n_pairs();
  lm.delta_t = gt.total_time / sp.n_time_bins;
  Rng rng(sp.seed);
  const double decay_rate = std::log(2.0) / gt.half_life;

  for (int i = 1; i <= lm.M; ++i) {
    double t0 = (i - 1) * lm.delta_t;
    for (int k = 0; k < int(gt.particles.size()); ++k) {
      const auto& particle = gt.particles[size_t(k)];
      int64_t n_decays = rng.poisson(particle.mass * decay_rate * lm.delta_t);
      for (int64_t d = 0; d < n_decays; ++d) {
        double t = t0 + rng.uniform() * lm.delta_t;
        auto x = gt.position(k, t);
        if (sp.positron_sigma > 0)
          for (int a = 0; a < 3; ++a) x[a] += sp.positron_sigma * rng.normal();
        double u = rng.uniform();
        if (u < sp.p_det) {
          auto j = sample_detector_pair(geom, x, rng.isotropic());
          if (j) lm.add(i, *j, 1);
        } else if (u < sp.p_det + sp.p_scatter) {
          lm.add(i, 1 + int(rng.below(uint64_t(lm.N))), 1);
        }
      }
    }
  }
  return lm;
}

ListmodeData subsample_events(const ListmodeData& lm, double fraction,
                              uint64_t seed) {
  if (fraction < 0 || fraction > 1)
    throw ConfigError("subsample: fraction outside [0,1]");
  ListmodeData out;
  out.M = lm.M;
  out.N = lm.N;
  out.delta_t = lm.delta_t;
  Rng rng(seed);
  for (const auto& [key, count] : lm.events) {
    int64_t kept = rng.binomial(count, fraction);
    if (kept > 0) out.add(key.first, key.second, kept);
  }
  return out;
}

ListmodeData rotate_and_merge(
    const ScannerGeometry& geom,
    const std::vector<std::pair<ListmodeData, double>>& datasets) {
  if (datasets.empty()) throw ConfigError("rotate_and_merge: no datasets");
  const int D = geom.params().detectors_per_ring;
  const double pitch = 2.0 * M_PI / D;

  ListmodeData out;
  out.M = datasets.front().first.M;
  out.N = geom.n_pairs();
  out.delta_t = datasets.front().first.delta_t;

  for (const auto& [lm, angle] : datasets) {
    if (lm.M != out.M || lm.delta_t != out.delta_t || lm.N != out.N)
      throw ConfigError("rotate_and_merge: datasets disagree on binning");
    double steps = angle / pitch;
    double rounded = std::round(steps);
    if (std::abs(steps - rounded) > 1e-9)
      throw ConfigError("rotate_and_merge: angle is not a multiple of the detector pitch");
    int shift = int(std::fmod(std::fmod(rounded, D) + D, double(D)));
    for (const auto& [key, count] : lm.events) {
      auto [d1, d2] = geom.pair_detectors(key.second);
      auto rot = [&](int det) {
        return (det / D) * D + (det % D + shift) % D;
      };
      auto j = geom.pair_index(rot(d1), rot(d2));
      if (!j)
        throw NumericalError(
            "rotate_and_merge: rotated pair left the enumerated set");
      out.add(key.first, *j, count);
    }
  }
  return out;
}

void save_ground_truth_csv(const GroundTruth& gt, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  os << "t_s,particle,x_mm,y_mm,z_mm,mass\n";
  char buf[256];
  size_t n_steps = gt.particles.empty() ? 0 : gt.particles.front().path.size();
  for (size_t s = 0; s < n_steps; ++s)
    for (size_t k = 0; k < gt.particles.size(); ++k) {
      const auto& p = gt.particles[k];
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g,%.17g\n", s, k,
                    p.path.at(s)[0], p.path.at(s)[1], p.path.at(s)[2], p.mass);
      os << buf;
    }
  if (!os) throw ConfigError("write failed: " + path);
}

GroundTruth load_ground_truth_csv(const std::string& path, double half_life) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty ground truth file: " + path);
  GroundTruth gt;
  gt.half_life = half_life;
  std::map<size_t, std::map<size_t, std::array<double, 3>>> rows;  // k -> s -> x
  std::map<size_t, double> masses;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    double v[6];
    for (int c = 0; c < 6; ++c) {
      if (!std::getline(ls, cell, ',')) throw ConfigError("bad csv row: " + line);
      v[c] = std::stod(cell);
    }
    size_t s = size_t(v[0]), k = size_t(v[1]);
    rows[k][s] = {v[2], v[3], v[4]};
    masses[k] = v[5];
  }
  gt.particles.resize(rows.size());
  size_t n_steps = 0;
  for (auto& [k, steps] : rows) {
    if (k >= gt.particles.size())
      throw ConfigError("ground truth csv: particle ids must be dense from 0");
    auto& p = gt.particles[k];
    p.mass = masses[k];
    p.path.resize(steps.size());
    size_t expect = 0;
    for (auto& [s, x] : steps) {
      if (s != expect++) throw ConfigError("ground truth csv: missing step row");
      p.path[s] = x;
    }
    n_steps = std::max(n_steps, p.path.size());
  }
  for (const auto& p : gt.particles)
    if (p.path.size() != n_steps)
      throw ConfigError("ground truth csv: ragged particle paths");
  gt.total_time = double(n_steps);
  return gt;
}

}  // namespace otpet
