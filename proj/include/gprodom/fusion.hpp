#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gprodom/datagen.hpp"

namespace gprodom::fusion {

/// Planar state at one key time: position, heading, forward speed, gyro
/// bias and forward-accelerometer bias. Heading stays wrapped to (-pi, pi].
struct State {
  double time_s = 0.0;
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;
  double bg = 0.0;  // gyro bias, rad/s
  double ba = 0.0;  // forward accel bias, m/s^2
};

constexpr int kStateDim = 6;  // x, y, theta, v, bg, ba

double wrap_angle(double a);

/// Bias-corrected midpoint integration of one inertial window into
/// keyframe-relative motion, with analytic bias sensitivities and a
/// simplified diagonal noise propagation. dp excludes the initial-speed
/// carry (the residual adds v_prev * dt along the previous heading).
struct Preintegrated {
  double dtheta = 0.0;
  double dv = 0.0;
  Eigen::Vector2d dp = Eigen::Vector2d::Zero();
  double dt = 0.0;
  double dtheta_dbg = 0.0;
  double dv_dba = 0.0;
  Eigen::Vector2d dp_dbg = Eigen::Vector2d::Zero();
  Eigen::Vector2d dp_dba = Eigen::Vector2d::Zero();
  double std_theta = 1e-6;
  double std_v = 1e-6;
  double std_p = 1e-6;
};

// Sample k applies over [t_k, min(t_{k+1}, t_end)). Throws on an empty or
// non-monotone window.
Preintegrated preintegrate_imu(const std::vector<sim::ImuSample>& samples, double t_end,
                               double gyro_bias, double accel_bias, double sigma_gyro = 1e-3,
                               double sigma_accel = 1e-2);

enum class FactorKind { kPrior, kImu, kWheel, kGprOdom, kBias };

/// residual rows per kind: prior 5 (x, y, theta, v, bg), imu 4
/// (dtheta, dv, dp_x, dp_y), wheel 1, gpr_odom 1, bias 2.
struct Factor {
  FactorKind kind = FactorKind::kPrior;
  int i = -1;  // first connected state (unused for wheel)
  int j = -1;  // second connected state
  std::vector<double> measurement;
  std::vector<double> noise_std;           // one entry per residual row
  std::vector<sim::ImuSample> imu_samples;  // kImu only
  double sigma_gyro = 1e-3;                 // kImu whitening inputs
  double sigma_accel = 1e-2;
  bool gpr_speed_form = false;  // constrain distance/dt instead of distance
  int residual_dim() const;
};

struct FactorGraph {
  std::vector<State> states;
  std::vector<Factor> factors;
};

/// Whitened residual and analytic Jacobian blocks (one 6-column block per
/// connected state).
struct Residual {
  Eigen::VectorXd r;
  std::vector<std::pair<int, Eigen::MatrixXd>> jacobians;
};

Residual eval_residual(const Factor& factor, const std::vector<State>& states);

struct SolverConfig {
  int max_iterations = 100;
  double rel_cost_tol = 1e-9;
  double lambda_init = 1e-6;
  double lambda_up = 10.0;
  double lambda_down = 0.3;
  double lambda_max = 1e12;
};

struct SolveResult {
  std::vector<State> states;
  std::vector<double> cost_history;  // initial cost, then each accepted cost
  int iterations = 0;
  bool converged = false;
};

// Damped least squares on the whitened residuals. Gauge deficiencies
// (e.g. a missing prior) are detected on the undamped normal equations and
// reported with the under-constrained variables named.
SolveResult optimize(const FactorGraph& graph, const SolverConfig& cfg);

// --- metrics ---------------------------------------------------------------

struct TimedPose {
  double time_s = 0.0;
  double x_m = 0.0;
  double y_m = 0.0;
};

// sqrt( (1/2T) sum( (x - x_hat)^2 + (y - y_hat)^2 ) ) over nearest-time
// associations within the tolerance. No alignment transform is applied.
double ate_rmse(const std::vector<TimedPose>& estimate, const std::vector<TimedPose>& ground_truth,
                double assoc_tol_s = 0.05);

// Length-weighted mean: sum(W_i * ate_i) / sum(W_i).
double overall_weighted(const std::vector<double>& ates, const std::vector<double>& lengths_m);

// --- synthetic runs and graph construction ----------------------------------

struct GprOdomMeasurement {
  double t_prev = 0.0;
  double t_cur = 0.0;
  double distance_m = 0.0;
};

struct ScenarioConfig {
  double duration_s = 120.0;
  double imu_rate_hz = 100.0;
  double keyframe_dt_s = 1.0;
  double v0 = 1.0;
  double speed_amp = 0.3;
  double speed_period_s = 37.0;
  double yaw_amp = 0.15;
  double yaw_period_s = 23.0;
  // measurement corruption; zero everywhere = exactly consistent data
  double gyro_noise = 0.0;
  double accel_noise = 0.0;
  double gyro_bias = 0.0;
  double accel_bias = 0.0;
  double wheel_noise = 0.0;
  double wheel_scale = 1.0;
  double gpr_noise = 0.0;
  std::uint64_t seed = 1;
};

/// Keyframe ground truth is defined by the same midpoint integration the
/// factors use, so zero-noise measurements are exactly consistent.
struct Scenario {
  sim::TrajectoryRecord record;  // imu, wheel and ground truth streams
  std::vector<GprOdomMeasurement> gpr_odometry;
  std::vector<State> truth;      // per keyframe
  double path_length_m = 0.0;
};

Scenario synthesize_scenario(const ScenarioConfig& cfg);

struct FusionConfig {
  double prior_std_xy = 0.01;
  double prior_std_theta = 0.01;
  double prior_std_v = 0.01;
  double prior_std_bg = 0.01;
  double sigma_gyro = 1e-3;
  double sigma_accel = 1e-2;
  double wheel_std = 0.05;
  double gpr_std = 0.03;
  bool gpr_speed_form = false;
  double bias_walk_bg = 1e-4;
  double bias_walk_ba = 1e-3;
  double assoc_tol_s = 0.05;
  bool include_gpr = true;
};

// Keyframes are placed at the wheel timestamps; imu samples are windowed
// between them and GPR odometry intervals associated within the tolerance.
// Initial states come from gyro/wheel dead reckoning; the prior anchors the
// first keyframe to the ground-truth start.
FactorGraph build_graph(const sim::TrajectoryRecord& record,
                        const std::vector<GprOdomMeasurement>& gpr_odometry,
                        const FusionConfig& cfg);

std::vector<TimedPose> states_to_poses(const std::vector<State>& states);
std::vector<TimedPose> ground_truth_poses(const sim::TrajectoryRecord& record);

}  // namespace gprodom::fusion
