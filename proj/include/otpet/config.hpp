#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "otpet/geometry.hpp"
#include "otpet/grid.hpp"
#include "otpet/simulator.hpp"
#include "otpet/solver.hpp"
#include "otpet/wfr.hpp"

// Structured-text run configuration: flat "key = value" files with '#'
// comments, dotted key namespaces, and strict unknown-key detection.
// One file describes a full scenario (phantom, scanner, grids, solver and
// metric parameters, sweep axis); CLI flags override individual keys.

namespace otpet {

// parsed key/value file; every lookup marks the key as consumed so that
// leftover (misspelled) keys can be rejected
class KeyValueFile {
 public:
  KeyValueFile() = default;
  static KeyValueFile parse_file(const std::string& path);
  static KeyValueFile parse_text(const std::string& text, const std::string& origin);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback);
  std::vector<uint64_t> get_u64s(const std::string& key, std::vector<uint64_t> fallback);

  // throws ConfigError naming the first never-consumed key
  void reject_unknown() const;
  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;  // path or label, for error messages
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

struct PhantomParams {
  double radius = 20.0;       // mm, circle in the x-y midplane of the box
  double speed = 3.0;         // mm of arc per second
  int n_particles = 2;
  double spacing = 62.8;      // mm of arc between consecutive particles
  double mass = 1.0;          // radionuclide amount per particle
  double total_time = 120.0;  // s
  double half_life = 6586.0;  // s
};

struct SweepSpec {
  std::string axis;            // "beta" | "p" | "activity" | "distance"
  std::vector<double> values;  // empty -> axis-specific default grid
};

struct RunConfig {
  std::string scenario = "desk";
  std::string geometry_path;  // empty -> built-in desk scanner
  ScannerParams scanner;
  VolumeBox box;
  PhantomParams phantom;
  SimParams sim;        // n_time_bins mirrors grid.m
  GridSpec grid;        // origin = box origin, dt = total_time / m
  ReconParams recon;    // recon.r == 0 -> calibrated rate at run time
  int frames = 0;       // framewise frame count; 0 -> grid.m
  WfrParams wfr;
  SweepSpec sweep;
  std::string outdir = "out";
  std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
  int workers = 1;
};

// geometry schema: radius_mm, n_rings, detectors_per_ring, axial_extent_mm,
// box_origin_mm (3 values), box_size_mm (3 values)
void load_geometry_config(const std::string& path, ScannerParams& sp, VolumeBox& box);

RunConfig default_run_config();
// full scenario file; relative geometry paths resolve against the file's
// directory; validates invariants (distinct seeds, paths exist, grid in box)
RunConfig load_run_config(const std::string& path);
// throws ConfigError on violated invariants; called by load_run_config
void validate_run_config(const RunConfig& c);

}  // namespace otpet
