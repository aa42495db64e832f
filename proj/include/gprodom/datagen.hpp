#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gprodom/odomnet.hpp"
#include "gprodom/preprocess.hpp"

namespace gprodom::sim {

struct Scatterer {
  double x0_m = 0.0;          // along-track position of the point scatterer
  double depth_m = 0.5;
  double reflectivity = 1.0;
};

/// Point-scatterer subsurface scene: each scatterer produces a hyperbolic
/// echo with two-way travel time 2*sqrt(d^2 + (x-x0)^2)/v and amplitude
/// reflectivity/(v*tau) under a Ricker wavelet signature.
struct Scene {
  std::vector<Scatterer> scatterers;
  double velocity_mps = 1.0e8;     // propagation velocity in the medium
  double wavelet_freq_hz = 1.5e8;  // Ricker center frequency
  double noise_std = 0.0;          // additive white noise amplitude

  void validate() const;
};

// Trace noise is keyed to the antenna position (nanometer-quantized), so
// revisiting the same position reproduces the same trace bit for bit.
pre::AScan simulate_ascan(const Scene& scene, double x_m, double dt, int n_samples,
                          std::uint64_t seed);

struct MotionConfig {
  double min_step_m = 0.02;
  double max_step_m = 0.5;
  double mean_step() const { return 0.5 * (min_step_m + max_step_m); }
};

struct PairGridConfig {
  int bscan_width = 64;         // L
  double trace_spacing = 0.02;  // meters per column
  double dt = 1.0e-9;           // trace sample interval, seconds
  int n_samples = 64;           // trace length (B-scan height)
  double track_min_m = 0.0;     // along-track range the pairs are drawn from
  double track_max_m = 20.0;
};

// Simulates an along-track pass and samples `count` labeled B-scan pairs at
// positions (s, s + delta), delta uniform in the motion range. Labels are
// the exact step in meters. Reproducible per seed.
std::vector<net::OdomPair> generate_pairs(const Scene& scene, const MotionConfig& motion,
                                          const PairGridConfig& grid, int count,
                                          std::uint64_t seed, const std::string& trajectory_id);

// --- trajectory data layout -------------------------------------------------
//
// One directory per trajectory:
//   gpr.csv           time_s, along_track_m, s0..sN
//   imu.csv           time_s, yaw_rate, ax, ay
//   wheel.csv         time_s, speed_mps
//   ground_truth.csv  time_s, x_m, y_m

struct GprTraceRow {
  double time_s = 0.0;
  double along_track_m = 0.0;
  std::vector<double> samples;
};
struct ImuSample {
  double time_s = 0.0;
  double yaw_rate = 0.0;  // rad/s
  double ax = 0.0;        // body-frame forward, m/s^2
  double ay = 0.0;        // body-frame lateral, m/s^2
};
struct WheelSample {
  double time_s = 0.0;
  double speed_mps = 0.0;
};
struct GroundTruthPoint {
  double time_s = 0.0;
  double x_m = 0.0;
  double y_m = 0.0;
};

struct TrajectoryRecord {
  std::string name;
  std::vector<GprTraceRow> gpr;
  std::vector<ImuSample> imu;
  std::vector<WheelSample> wheel;
  std::vector<GroundTruthPoint> ground_truth;
};

void save_trajectory(const std::string& base_dir, const TrajectoryRecord& record);

// Loads every subdirectory of `dir` (sorted by name). Throws naming the
// missing file, or the first non-monotone timestamp row.
std::vector<TrajectoryRecord> load_trajectories(const std::string& dir);

struct SplitSpec {
  std::vector<std::string> train;  // empty = everything not in test
  std::vector<std::string> test;
};

struct SplitResult {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

// Deterministic partition by trajectory name; train/test must be disjoint
// and every listed name must exist.
SplitResult split(const std::vector<std::string>& trajectory_names, const SplitSpec& spec);

// --- persisted pair datasets -------------------------------------------------
//
// dir/bscans.gpz   tensor container, records pair%06d/prev and pair%06d/cur
// dir/pairs.csv    index, label_m, trajectory index
// dir/trajectories.csv  index, name (one row per trajectory id)
// dir/meta.json    grid parameters

void save_pair_dataset(const std::string& dir, const std::vector<net::OdomPair>& pairs,
                       const PairGridConfig& grid);
std::vector<net::OdomPair> load_pair_dataset(const std::string& dir);

}  // namespace gprodom::sim
