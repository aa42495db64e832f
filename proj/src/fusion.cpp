#include "gprodom/fusion.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "gprodom/ioutil.hpp"

namespace gprodom::fusion {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDistanceFloor = 1e-9;  // damped Jacobian at coincident poses
}  // namespace

double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a <= -kPi) a += 2.0 * kPi;
  return a;
}

int Factor::residual_dim() const {
  switch (kind) {
    case FactorKind::kPrior: return 5;
    case FactorKind::kImu: return 4;
    case FactorKind::kWheel: return 1;
    case FactorKind::kGprOdom: return 1;
    case FactorKind::kBias: return 2;
  }
  throw std::logic_error("bad factor kind");
}

Preintegrated preintegrate_imu(const std::vector<sim::ImuSample>& samples, double t_end,
                               double gyro_bias, double accel_bias, double sigma_gyro,
                               double sigma_accel) {
  if (samples.empty()) throw std::invalid_argument("preintegration window has no imu samples");
  Preintegrated out;
  double phi = 0.0, dphi_dbg = 0.0;
  Eigen::Vector2d w = Eigen::Vector2d::Zero();       // velocity gain in the start frame
  Eigen::Vector2d dw_dbg = Eigen::Vector2d::Zero();
  Eigen::Vector2d dw_dba = Eigen::Vector2d::Zero();
  double var_theta = 0.0, var_v = 0.0, var_w = 0.0, var_p = 0.0;

  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double t0 = samples[k].time_s;
    const double t1 = k + 1 < samples.size() ? samples[k + 1].time_s : t_end;
    if (t1 <= t0) throw std::invalid_argument("imu timestamps not increasing in window");
    const double dt = t1 - t0;

    const double omega = samples[k].yaw_rate - gyro_bias;
    const double ax = samples[k].ax - accel_bias;
    const double ay = samples[k].ay;

    const double phi_mid = phi + 0.5 * omega * dt;
    const double dphi_mid_dbg = dphi_dbg - 0.5 * dt;
    const double c = std::cos(phi_mid), s = std::sin(phi_mid);
    const Eigen::Vector2d a_nav(c * ax - s * ay, s * ax + c * ay);
    const Eigen::Vector2d da_dbg = Eigen::Vector2d(-s * ax - c * ay, c * ax - s * ay) * dphi_mid_dbg;
    const Eigen::Vector2d da_dba(-c, -s);

    out.dp += w * dt + 0.5 * a_nav * dt * dt;
    out.dp_dbg += dw_dbg * dt + 0.5 * da_dbg * dt * dt;
    out.dp_dba += dw_dba * dt + 0.5 * da_dba * dt * dt;
    w += a_nav * dt;
    dw_dbg += da_dbg * dt;
    dw_dba += da_dba * dt;
    out.dv += ax * dt;
    out.dv_dba += -dt;
    phi += omega * dt;
    dphi_dbg += -dt;

    var_theta += sigma_gyro * sigma_gyro * dt * dt;
    var_v += sigma_accel * sigma_accel * dt * dt;
    var_w += sigma_accel * sigma_accel * dt * dt;
    var_p += var_w * dt * dt;
    out.dt += dt;
  }
  out.dtheta = phi;
  out.dtheta_dbg = dphi_dbg;
  out.std_theta = std::max(std::sqrt(var_theta), 1e-9);
  out.std_v = std::max(std::sqrt(var_v), 1e-9);
  out.std_p = std::max(std::sqrt(var_p), 1e-9);
  return out;
}

Residual eval_residual(const Factor& factor, const std::vector<State>& states) {
  auto check_index = [&](int idx) {
    if (idx < 0 || idx >= static_cast<int>(states.size())) {
      throw std::out_of_range("factor references state " + std::to_string(idx));
    }
  };
  Residual out;
  switch (factor.kind) {
    case FactorKind::kPrior: {
      check_index(factor.i);
      const State& s = states[static_cast<std::size_t>(factor.i)];
      if (factor.measurement.size() != 5 || factor.noise_std.size() != 5) {
        throw std::invalid_argument("prior factor needs 5 measurement and noise entries");
      }
      out.r.resize(5);
      Eigen::MatrixXd J = Eigen::MatrixXd::Zero(5, kStateDim);
      const double raw[5] = {s.x - factor.measurement[0], s.y - factor.measurement[1],
                             wrap_angle(s.theta - factor.measurement[2]),
                             s.v - factor.measurement[3], s.bg - factor.measurement[4]};
      const int cols[5] = {0, 1, 2, 3, 4};
      for (int k = 0; k < 5; ++k) {
        out.r(k) = raw[k] / factor.noise_std[static_cast<std::size_t>(k)];
        J(k, cols[k]) = 1.0 / factor.noise_std[static_cast<std::size_t>(k)];
      }
      out.jacobians.emplace_back(factor.i, std::move(J));
      return out;
    }
    case FactorKind::kWheel: {
      check_index(factor.j);
      const State& s = states[static_cast<std::size_t>(factor.j)];
      out.r.resize(1);
      out.r(0) = (s.v - factor.measurement.at(0)) / factor.noise_std.at(0);
      Eigen::MatrixXd J = Eigen::MatrixXd::Zero(1, kStateDim);
      J(0, 3) = 1.0 / factor.noise_std.at(0);
      out.jacobians.emplace_back(factor.j, std::move(J));
      return out;
    }
    case FactorKind::kGprOdom: {
      check_index(factor.i);
      check_index(factor.j);
      const State& a = states[static_cast<std::size_t>(factor.i)];
      const State& b = states[static_cast<std::size_t>(factor.j)];
      const double dx = b.x - a.x, dy = b.y - a.y;
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double dist_safe = std::max(dist, kDistanceFloor);
      const double dt = std::max(b.time_s - a.time_s, 1e-9);
      const double scale = factor.gpr_speed_form ? 1.0 / dt : 1.0;
      out.r.resize(1);
      out.r(0) = scale * (dist - factor.measurement.at(0)) / factor.noise_std.at(0);
      const double k = scale / (factor.noise_std.at(0) * dist_safe);
      Eigen::MatrixXd Ji = Eigen::MatrixXd::Zero(1, kStateDim);
      Eigen::MatrixXd Jj = Eigen::MatrixXd::Zero(1, kStateDim);
      Ji(0, 0) = -k * dx;
      Ji(0, 1) = -k * dy;
      Jj(0, 0) = k * dx;
      Jj(0, 1) = k * dy;
      out.jacobians.emplace_back(factor.i, std::move(Ji));
      out.jacobians.emplace_back(factor.j, std::move(Jj));
      return out;
    }
    case FactorKind::kBias: {
      check_index(factor.i);
      check_index(factor.j);
      const State& a = states[static_cast<std::size_t>(factor.i)];
      const State& b = states[static_cast<std::size_t>(factor.j)];
      out.r.resize(2);
      out.r(0) = (b.bg - a.bg) / factor.noise_std.at(0);
      out.r(1) = (b.ba - a.ba) / factor.noise_std.at(1);
      Eigen::MatrixXd Ji = Eigen::MatrixXd::Zero(2, kStateDim);
      Eigen::MatrixXd Jj = Eigen::MatrixXd::Zero(2, kStateDim);
      Ji(0, 4) = -1.0 / factor.noise_std.at(0);
      Ji(1, 5) = -1.0 / factor.noise_std.at(1);
      Jj(0, 4) = 1.0 / factor.noise_std.at(0);
      Jj(1, 5) = 1.0 / factor.noise_std.at(1);
      out.jacobians.emplace_back(factor.i, std::move(Ji));
      out.jacobians.emplace_back(factor.j, std::move(Jj));
      return out;
    }
    case FactorKind::kImu: {
      check_index(factor.i);
      check_index(factor.j);
      const State& a = states[static_cast<std::size_t>(factor.i)];
      const State& b = states[static_cast<std::size_t>(factor.j)];
      const Preintegrated pre = preintegrate_imu(factor.imu_samples, b.time_s, a.bg, a.ba,
                                                 factor.sigma_gyro, factor.sigma_accel);
      const double c = std::cos(a.theta), s = std::sin(a.theta);
      const Eigen::Vector2d dp_world(b.x - a.x, b.y - a.y);
      // world -> frame of state i
      const Eigen::Vector2d dp_body(c * dp_world.x() + s * dp_world.y(),
                                    -s * dp_world.x() + c * dp_world.y());
      const Eigen::Vector2d pred(a.v * pre.dt + pre.dp.x(), pre.dp.y());

      out.r.resize(4);
      out.r(0) = wrap_angle(b.theta - a.theta - pre.dtheta) / pre.std_theta;
      out.r(1) = (b.v - a.v - pre.dv) / pre.std_v;
      out.r(2) = (dp_body.x() - pred.x()) / pre.std_p;
      out.r(3) = (dp_body.y() - pred.y()) / pre.std_p;

      Eigen::MatrixXd Ji = Eigen::MatrixXd::Zero(4, kStateDim);
      Eigen::MatrixXd Jj = Eigen::MatrixXd::Zero(4, kStateDim);
      Ji(0, 2) = -1.0 / pre.std_theta;
      Ji(0, 4) = -pre.dtheta_dbg / pre.std_theta;
      Jj(0, 2) = 1.0 / pre.std_theta;
      Ji(1, 3) = -1.0 / pre.std_v;
      Ji(1, 5) = -pre.dv_dba / pre.std_v;
      Jj(1, 3) = 1.0 / pre.std_v;
      // d(dp_body)/d(theta_i) = d(R^T)/dtheta * dp_world
      const Eigen::Vector2d dRt_dp(-s * dp_world.x() + c * dp_world.y(),
                                   -c * dp_world.x() - s * dp_world.y());
      Ji(2, 0) = -c / pre.std_p;
      Ji(2, 1) = -s / pre.std_p;
      Ji(2, 2) = dRt_dp.x() / pre.std_p;
      Ji(2, 3) = -pre.dt / pre.std_p;
      Ji(2, 4) = -pre.dp_dbg.x() / pre.std_p;
      Ji(2, 5) = -pre.dp_dba.x() / pre.std_p;
      Ji(3, 0) = s / pre.std_p;
      Ji(3, 1) = -c / pre.std_p;
      Ji(3, 2) = dRt_dp.y() / pre.std_p;
      Ji(3, 4) = -pre.dp_dbg.y() / pre.std_p;
      Ji(3, 5) = -pre.dp_dba.y() / pre.std_p;
      Jj(2, 0) = c / pre.std_p;
      Jj(2, 1) = s / pre.std_p;
      Jj(3, 0) = -s / pre.std_p;
      Jj(3, 1) = c / pre.std_p;
      out.jacobians.emplace_back(factor.i, std::move(Ji));
      out.jacobians.emplace_back(factor.j, std::move(Jj));
      return out;
    }
  }
  throw std::logic_error("bad factor kind");
}

namespace {

const char* state_var_name(int offset) {
  switch (offset) {
    case 0: return "x";
    case 1: return "y";
    case 2: return "theta";
    case 3: return "v";
    case 4: return "bg";
    case 5: return "ba";
  }
  return "?";
}

struct Linearized {
  Eigen::VectorXd residual;
  Eigen::SparseMatrix<double> jacobian;
  double cost = 0.0;
};

Linearized linearize(const FactorGraph& graph, const std::vector<State>& states) {
  int total_rows = 0;
  for (const auto& f : graph.factors) total_rows += f.residual_dim();
  Linearized out;
  out.residual.resize(total_rows);
  std::vector<Eigen::Triplet<double>> triplets;
  int row = 0;
  for (const auto& f : graph.factors) {
    const Residual res = eval_residual(f, states);
    out.residual.segment(row, res.r.size()) = res.r;
    for (const auto& [idx, J] : res.jacobians) {
      for (int r = 0; r < J.rows(); ++r) {
        for (int col = 0; col < kStateDim; ++col) {
          if (J(r, col) != 0.0) triplets.emplace_back(row + r, idx * kStateDim + col, J(r, col));
        }
      }
    }
    row += static_cast<int>(res.r.size());
  }
  out.jacobian.resize(total_rows, static_cast<int>(states.size()) * kStateDim);
  out.jacobian.setFromTriplets(triplets.begin(), triplets.end());
  out.cost = 0.5 * out.residual.squaredNorm();
  return out;
}

double total_cost(const FactorGraph& graph, const std::vector<State>& states) {
  double cost = 0.0;
  for (const auto& f : graph.factors) cost += 0.5 * eval_residual(f, states).r.squaredNorm();
  return cost;
}

std::vector<State> apply_step(const std::vector<State>& states, const Eigen::VectorXd& dx) {
  std::vector<State> out = states;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int at = static_cast<int>(i) * kStateDim;
    out[i].x += dx(at + 0);
    out[i].y += dx(at + 1);
    out[i].theta = wrap_angle(out[i].theta + dx(at + 2));
    out[i].v += dx(at + 3);
    out[i].bg += dx(at + 4);
    out[i].ba += dx(at + 5);
  }
  return out;
}

// names the near-null directions of the undamped normal equations
void check_gauge(const Eigen::SparseMatrix<double>& H) {
  const Eigen::MatrixXd dense = Eigen::MatrixXd(H);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense);
  const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double tol = std::max(1e-10 * max_ev, 1e-12);
  std::string under;
  for (int k = 0; k < eig.eigenvalues().size(); ++k) {
    if (eig.eigenvalues()(k) < tol) {
      Eigen::Index worst = 0;
      eig.eigenvectors().col(k).cwiseAbs().maxCoeff(&worst);
      const int state = static_cast<int>(worst) / kStateDim;
      const int var = static_cast<int>(worst) % kStateDim;
      const std::string name = "state " + std::to_string(state) + "." + state_var_name(var);
      if (under.find(name) == std::string::npos) {
        under += under.empty() ? name : ", " + name;
      }
    }
  }
  if (!under.empty()) {
    throw std::runtime_error("normal equations rank-deficient; under-constrained variables: " + under);
  }
}

}  // namespace

SolveResult optimize(const FactorGraph& graph, const SolverConfig& cfg) {
  if (graph.states.empty() || graph.factors.empty()) {
    throw std::invalid_argument("optimize needs a non-empty graph");
  }
  bool has_prior = false;
  for (const auto& f : graph.factors) has_prior = has_prior || f.kind == FactorKind::kPrior;
  if (!has_prior) {
    // still diagnose precisely which directions are free
    const Linearized lin = linearize(graph, graph.states);
    const Eigen::SparseMatrix<double> H =
        Eigen::SparseMatrix<double>(lin.jacobian.transpose()) * lin.jacobian;
    check_gauge(H);
    throw std::invalid_argument("graph has no prior factor (gauge unfixed)");
  }

  SolveResult result;
  result.states = graph.states;
  double lambda = cfg.lambda_init;
  Linearized lin = linearize(graph, result.states);
  result.cost_history.push_back(lin.cost);

  {  // gauge check on the undamped system before iterating
    const Eigen::SparseMatrix<double> H =
        Eigen::SparseMatrix<double>(lin.jacobian.transpose()) * lin.jacobian;
    check_gauge(H);
  }

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    result.iterations = iter + 1;
    const Eigen::SparseMatrix<double> Jt = lin.jacobian.transpose();
    Eigen::SparseMatrix<double> H = Jt * lin.jacobian;
    const Eigen::VectorXd g = Jt * lin.residual;

    bool accepted = false;
    while (!accepted) {
      Eigen::SparseMatrix<double> damped = H;
      for (int k = 0; k < damped.rows(); ++k) {
        damped.coeffRef(k, k) += lambda * std::max(H.coeff(k, k), 1e-12);
      }
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= cfg.lambda_up;
        if (lambda > cfg.lambda_max) {
          check_gauge(H);
          throw std::runtime_error("damping escalation failed to produce a solvable system");
        }
        continue;
      }
      const Eigen::VectorXd dx = solver.solve(-g);
      const std::vector<State> candidate = apply_step(result.states, dx);
      const double cost = total_cost(graph, candidate);
      if (cost < lin.cost) {
        result.states = candidate;
        const double prev = lin.cost;
        lin = linearize(graph, result.states);
        result.cost_history.push_back(lin.cost);
        lambda = std::max(lambda * cfg.lambda_down, 1e-12);
        accepted = true;
        if (prev - lin.cost < cfg.rel_cost_tol * std::max(prev, 1e-300)) {
          result.converged = true;
          return result;
        }
      } else {
        lambda *= cfg.lambda_up;
        if (lambda > cfg.lambda_max) {
          // no further progress possible; treat as converged at this point
          result.converged = true;
          return result;
        }
      }
    }
  }
  return result;
}

double ate_rmse(const std::vector<TimedPose>& estimate, const std::vector<TimedPose>& ground_truth,
                double assoc_tol_s) {
  if (estimate.empty() || ground_truth.empty()) {
    throw std::invalid_argument("ate_rmse needs non-empty trajectories");
  }
  std::vector<double> gt_times;
  for (const auto& p : ground_truth) gt_times.push_back(p.time_s);
  double sum_sq = 0.0;
  std::int64_t matched = 0;
  for (const auto& est : estimate) {
    const auto it = std::lower_bound(gt_times.begin(), gt_times.end(), est.time_s);
    double best_dt = std::numeric_limits<double>::infinity();
    std::size_t best = 0;
    if (it != gt_times.end()) {
      best = static_cast<std::size_t>(it - gt_times.begin());
      best_dt = std::abs(*it - est.time_s);
    }
    if (it != gt_times.begin()) {
      const std::size_t prev = static_cast<std::size_t>(it - gt_times.begin()) - 1;
      if (std::abs(gt_times[prev] - est.time_s) < best_dt) {
        best = prev;
        best_dt = std::abs(gt_times[prev] - est.time_s);
      }
    }
    if (best_dt > assoc_tol_s) continue;
    const double dx = est.x_m - ground_truth[best].x_m;
    const double dy = est.y_m - ground_truth[best].y_m;
    sum_sq += dx * dx + dy * dy;
    ++matched;
  }
  if (matched == 0) {
    throw std::runtime_error("no estimate/ground-truth timestamps associate within tolerance");
  }
  return std::sqrt(sum_sq / (2.0 * static_cast<double>(matched)));
}

double overall_weighted(const std::vector<double>& ates, const std::vector<double>& lengths_m) {
  if (ates.size() != lengths_m.size() || ates.empty()) {
    throw std::invalid_argument("ates and lengths must be equal-length and non-empty");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ates.size(); ++i) {
    if (lengths_m[i] <= 0.0) throw std::invalid_argument("trajectory lengths must be positive");
    num += lengths_m[i] * ates[i];
    den += lengths_m[i];
  }
  return num / den;
}

Scenario synthesize_scenario(const ScenarioConfig& cfg) {
  Scenario out;
  out.record.name = "synthetic";
  std::mt19937_64 rng(io::splitmix64(cfg.seed));
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double imu_dt = 1.0 / cfg.imu_rate_hz;
  const int steps_per_key = std::max(1, static_cast<int>(std::llround(cfg.keyframe_dt_s / imu_dt)));
  const int keyframes = static_cast<int>(std::floor(cfg.duration_s / cfg.keyframe_dt_s));

  State truth;
  truth.time_s = 0.0;
  truth.v = cfg.v0;
  out.truth.push_back(truth);
  out.record.ground_truth.push_back({0.0, truth.x, truth.y});
  out.record.wheel.push_back(
      {0.0, cfg.wheel_scale * truth.v + cfg.wheel_noise * (cfg.wheel_noise > 0 ? gauss(rng) : 0.0)});

  for (int k = 0; k < keyframes; ++k) {
    const double t_start = k * cfg.keyframe_dt_s;
    // local accumulation identical to the preintegration model
    double phi = 0.0, dv = 0.0;
    Eigen::Vector2d w(truth.v, 0.0), q(0.0, 0.0);
    std::vector<sim::ImuSample> true_rates;
    for (int i = 0; i < steps_per_key; ++i) {
      const double t = t_start + i * imu_dt;
      const double omega = cfg.yaw_amp * std::sin(2.0 * kPi * t / cfg.yaw_period_s);
      const double ax = cfg.speed_amp * (2.0 * kPi / cfg.speed_period_s) *
                        std::cos(2.0 * kPi * t / cfg.speed_period_s);
      const double v_mid = truth.v + dv + 0.5 * ax * imu_dt;
      const double ay = v_mid * omega;  // centripetal term, keeps the run planar-consistent
      true_rates.push_back({t, omega, ax, ay});

      const double phi_mid = phi + 0.5 * omega * imu_dt;
      const Eigen::Vector2d a_nav(std::cos(phi_mid) * ax - std::sin(phi_mid) * ay,
                                  std::sin(phi_mid) * ax + std::cos(phi_mid) * ay);
      q += w * imu_dt + 0.5 * a_nav * imu_dt * imu_dt;
      w += a_nav * imu_dt;
      dv += ax * imu_dt;
      phi += omega * imu_dt;
    }
    // advance the keyframe truth exactly as the factor model predicts
    const double c = std::cos(truth.theta), s = std::sin(truth.theta);
    State next;
    next.time_s = t_start + steps_per_key * imu_dt;
    next.x = truth.x + c * q.x() - s * q.y();
    next.y = truth.y + s * q.x() + c * q.y();
    next.theta = wrap_angle(truth.theta + phi);
    next.v = truth.v + dv;

    const double seg = std::hypot(next.x - truth.x, next.y - truth.y);
    out.path_length_m += seg;
    out.gpr_odometry.push_back(
        {truth.time_s, next.time_s,
         seg + (cfg.gpr_noise > 0 ? cfg.gpr_noise * gauss(rng) : 0.0)});

    for (const auto& rate : true_rates) {
      sim::ImuSample measured = rate;
      measured.yaw_rate += cfg.gyro_bias + (cfg.gyro_noise > 0 ? cfg.gyro_noise * gauss(rng) : 0.0);
      measured.ax += cfg.accel_bias + (cfg.accel_noise > 0 ? cfg.accel_noise * gauss(rng) : 0.0);
      out.record.imu.push_back(measured);
    }
    out.record.wheel.push_back(
        {next.time_s,
         cfg.wheel_scale * next.v + (cfg.wheel_noise > 0 ? cfg.wheel_noise * gauss(rng) : 0.0)});
    out.record.ground_truth.push_back({next.time_s, next.x, next.y});
    out.truth.push_back(next);
    truth = next;
  }
  return out;
}

std::vector<TimedPose> states_to_poses(const std::vector<State>& states) {
  std::vector<TimedPose> out;
  for (const auto& s : states) out.push_back({s.time_s, s.x, s.y});
  return out;
}

std::vector<TimedPose> ground_truth_poses(const sim::TrajectoryRecord& record) {
  std::vector<TimedPose> out;
  for (const auto& p : record.ground_truth) out.push_back({p.time_s, p.x_m, p.y_m});
  return out;
}

FactorGraph build_graph(const sim::TrajectoryRecord& record,
                        const std::vector<GprOdomMeasurement>& gpr_odometry,
                        const FusionConfig& cfg) {
  if (record.wheel.size() < 2) throw std::invalid_argument("need at least two wheel samples");
  if (record.imu.empty()) throw std::invalid_argument("need imu samples");
  if (record.ground_truth.size() < 2) throw std::invalid_argument("need ground truth poses");

  FactorGraph graph;
  const std::size_t n = record.wheel.size();

  // initial heading from the first ground-truth segment
  const auto& gt0 = record.ground_truth[0];
  const auto& gt1 = record.ground_truth[1];
  const double theta0 = std::atan2(gt1.y_m - gt0.y_m, gt1.x_m - gt0.x_m);

  // dead-reckoned initial states from raw gyro + wheel speeds
  std::vector<State> states(n);
  states[0].time_s = record.wheel[0].time_s;
  states[0].x = gt0.x_m;
  states[0].y = gt0.y_m;
  states[0].theta = theta0;
  states[0].v = record.wheel[0].speed_mps;
  std::size_t imu_at = 0;
  for (std::size_t k = 1; k < n; ++k) {
    const double t_prev = record.wheel[k - 1].time_s;
    const double t_cur = record.wheel[k].time_s;
    if (t_cur <= t_prev) throw std::invalid_argument("wheel timestamps not increasing");
    double theta = states[k - 1].theta;
    double x = states[k - 1].x, y = states[k - 1].y;
    std::size_t i = imu_at;
    while (i < record.imu.size() && record.imu[i].time_s < t_cur) {
      const double t0 = std::max(record.imu[i].time_s, t_prev);
      const double t1 = i + 1 < record.imu.size() ? std::min(record.imu[i + 1].time_s, t_cur) : t_cur;
      if (t1 > t0) {
        const double mid_theta = theta + 0.5 * record.imu[i].yaw_rate * (t1 - t0);
        x += record.wheel[k - 1].speed_mps * std::cos(mid_theta) * (t1 - t0);
        y += record.wheel[k - 1].speed_mps * std::sin(mid_theta) * (t1 - t0);
        theta += record.imu[i].yaw_rate * (t1 - t0);
      }
      ++i;
    }
    states[k].time_s = t_cur;
    states[k].x = x;
    states[k].y = y;
    states[k].theta = wrap_angle(theta);
    states[k].v = record.wheel[k].speed_mps;
  }
  graph.states = states;

  Factor prior;
  prior.kind = FactorKind::kPrior;
  prior.i = 0;
  prior.measurement = {gt0.x_m, gt0.y_m, theta0, record.wheel[0].speed_mps, 0.0};
  prior.noise_std = {cfg.prior_std_xy, cfg.prior_std_xy, cfg.prior_std_theta, cfg.prior_std_v,
                     cfg.prior_std_bg};
  graph.factors.push_back(prior);

  imu_at = 0;
  for (std::size_t k = 1; k < n; ++k) {
    const double t_prev = record.wheel[k - 1].time_s;
    const double t_cur = record.wheel[k].time_s;

    Factor imu;
    imu.kind = FactorKind::kImu;
    imu.i = static_cast<int>(k - 1);
    imu.j = static_cast<int>(k);
    imu.sigma_gyro = cfg.sigma_gyro;
    imu.sigma_accel = cfg.sigma_accel;
    while (imu_at < record.imu.size() && record.imu[imu_at].time_s < t_prev - 1e-12) ++imu_at;
    std::size_t i = imu_at;
    while (i < record.imu.size() && record.imu[i].time_s < t_cur - 1e-12) {
      imu.imu_samples.push_back(record.imu[i]);
      ++i;
    }
    imu_at = i;
    if (imu.imu_samples.empty()) {
      throw std::runtime_error("no imu samples between keyframes " + std::to_string(k - 1) +
                               " and " + std::to_string(k));
    }
    graph.factors.push_back(std::move(imu));

    Factor wheel;
    wheel.kind = FactorKind::kWheel;
    wheel.j = static_cast<int>(k);
    wheel.measurement = {record.wheel[k].speed_mps};
    wheel.noise_std = {cfg.wheel_std};
    graph.factors.push_back(std::move(wheel));

    Factor bias;
    bias.kind = FactorKind::kBias;
    bias.i = static_cast<int>(k - 1);
    bias.j = static_cast<int>(k);
    bias.noise_std = {cfg.bias_walk_bg, cfg.bias_walk_ba};
    graph.factors.push_back(std::move(bias));
  }

  if (cfg.include_gpr) {
    for (const auto& m : gpr_odometry) {
      int i = -1, j = -1;
      for (std::size_t k = 0; k < n; ++k) {
        if (std::abs(record.wheel[k].time_s - m.t_prev) <= cfg.assoc_tol_s) i = static_cast<int>(k);
        if (std::abs(record.wheel[k].time_s - m.t_cur) <= cfg.assoc_tol_s) j = static_cast<int>(k);
      }
      if (i < 0 || j < 0 || i == j) continue;  // unassociated interval, skip
      Factor gpr;
      gpr.kind = FactorKind::kGprOdom;
      gpr.i = i;
      gpr.j = j;
      gpr.measurement = {m.distance_m};
      gpr.noise_std = {cfg.gpr_std};
      gpr.gpr_speed_form = cfg.gpr_speed_form;
      graph.factors.push_back(std::move(gpr));
    }
  }
  return graph;
}

}  // namespace gprodom::fusion
