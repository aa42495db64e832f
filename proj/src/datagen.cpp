#include "gprodom/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <random>
#include <set>
#include <stdexcept>

#include "gprodom/checkpoint.hpp"
#include "gprodom/ioutil.hpp"

namespace fs = std::filesystem;

namespace gprodom::sim {

namespace {
constexpr double kPi = 3.14159265358979323846;

double ricker(double u, double f) {
  const double a = kPi * f * u;
  const double a2 = a * a;
  return (1.0 - 2.0 * a2) * std::exp(-a2);
}

void check_monotone(const std::vector<double>& times, const std::string& file) {
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (times[i] <= times[i - 1]) {
      throw std::runtime_error(file + " row " + std::to_string(i + 1) +
                               ": timestamps not strictly increasing");
    }
  }
}
}  // namespace

void Scene::validate() const {
  if (scatterers.empty()) throw std::invalid_argument("scene needs at least one scatterer");
  if (velocity_mps <= 0.0) throw std::invalid_argument("propagation velocity must be positive");
  if (wavelet_freq_hz <= 0.0) throw std::invalid_argument("wavelet frequency must be positive");
  if (noise_std < 0.0) throw std::invalid_argument("noise std must be non-negative");
  for (const auto& s : scatterers) {
    if (s.depth_m <= 0.0) throw std::invalid_argument("scatterer depths must be positive");
  }
}

pre::AScan simulate_ascan(const Scene& scene, double x_m, double dt, int n_samples,
                          std::uint64_t seed) {
  scene.validate();
  if (dt <= 0.0 || n_samples < 16) throw std::invalid_argument("invalid trace grid");
  pre::AScan out;
  out.dt = dt;
  out.t0 = 0.0;
  out.position = x_m;
  out.samples.assign(static_cast<std::size_t>(n_samples), 0.0);

  const double support = 2.0 / scene.wavelet_freq_hz;  // Ricker tail cutoff
  for (const auto& sc : scene.scatterers) {
    const double dx = x_m - sc.x0_m;
    const double range = std::sqrt(sc.depth_m * sc.depth_m + dx * dx);
    const double tau = 2.0 * range / scene.velocity_mps;
    const double amp = sc.reflectivity / (scene.velocity_mps * tau);
    const int k_lo = std::max(0, static_cast<int>(std::floor((tau - support) / dt)));
    const int k_hi = std::min(n_samples - 1, static_cast<int>(std::ceil((tau + support) / dt)));
    for (int k = k_lo; k <= k_hi; ++k) {  // echoes past the window truncate silently
      out.samples[static_cast<std::size_t>(k)] += amp * ricker(k * dt - tau, scene.wavelet_freq_hz);
    }
  }
  if (scene.noise_std > 0.0) {
    const auto qpos = static_cast<std::uint64_t>(std::llround(x_m * 1e9));
    std::mt19937_64 rng(io::derive_seed(seed, 0x7261646172ULL, qpos));
    std::normal_distribution<double> noise(0.0, scene.noise_std);
    for (auto& v : out.samples) v += noise(rng);
  }
  return out;
}

std::vector<net::OdomPair> generate_pairs(const Scene& scene, const MotionConfig& motion,
                                          const PairGridConfig& grid, int count,
                                          std::uint64_t seed, const std::string& trajectory_id) {
  scene.validate();
  const double window_span = grid.bscan_width * grid.trace_spacing;
  if (motion.min_step_m < 0.0 || motion.max_step_m < motion.min_step_m ||
      motion.max_step_m >= 0.5 * window_span) {
    throw std::invalid_argument("motion step range must lie within [0, L*spacing/2)");
  }
  const double usable = grid.track_max_m - grid.track_min_m - window_span - motion.max_step_m;
  if (usable <= 0.0) {
    throw std::invalid_argument("track range too short for the B-scan window and motion range");
  }

  auto render = [&](double start) {
    pre::BScan b;
    b.height = grid.n_samples;
    b.width = grid.bscan_width;
    b.dt = grid.dt;
    b.t0 = 0.0;
    b.trace_spacing = grid.trace_spacing;
    b.start_position = start;
    b.data.assign(static_cast<std::size_t>(grid.n_samples) * grid.bscan_width, 0.0);
    for (int j = 0; j < grid.bscan_width; ++j) {
      const pre::AScan trace =
          simulate_ascan(scene, start + j * grid.trace_spacing, grid.dt, grid.n_samples, seed);
      for (int r = 0; r < grid.n_samples; ++r) {
        b.data[static_cast<std::size_t>(r) * grid.bscan_width + j] = trace.samples[static_cast<std::size_t>(r)];
      }
    }
    return b;
  };

  std::vector<net::OdomPair> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(io::derive_seed(seed, 0x70616972ULL, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> pos_dist(grid.track_min_m, grid.track_min_m + usable);
    std::uniform_real_distribution<double> step_dist(motion.min_step_m, motion.max_step_m);
    const double s = pos_dist(rng);
    const double delta = step_dist(rng);
    net::OdomPair pair;
    pair.prev = render(s);
    pair.cur = render(s + delta);
    pair.label = delta;
    pair.trajectory = trajectory_id;
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void save_trajectory(const std::string& base_dir, const TrajectoryRecord& record) {
  const fs::path dir = fs::path(base_dir) / record.name;
  fs::create_directories(dir);

  std::vector<std::string> gpr_header = {"time_s", "along_track_m"};
  const std::size_t n_samples = record.gpr.empty() ? 0 : record.gpr.front().samples.size();
  for (std::size_t i = 0; i < n_samples; ++i) gpr_header.push_back("s" + std::to_string(i));
  std::vector<std::vector<double>> gpr_rows;
  for (const auto& t : record.gpr) {
    std::vector<double> row = {t.time_s, t.along_track_m};
    row.insert(row.end(), t.samples.begin(), t.samples.end());
    gpr_rows.push_back(std::move(row));
  }
  io::write_csv((dir / "gpr.csv").string(), gpr_header, gpr_rows);

  std::vector<std::vector<double>> imu_rows;
  for (const auto& s : record.imu) imu_rows.push_back({s.time_s, s.yaw_rate, s.ax, s.ay});
  io::write_csv((dir / "imu.csv").string(), {"time_s", "yaw_rate", "ax", "ay"}, imu_rows);

  std::vector<std::vector<double>> wheel_rows;
  for (const auto& s : record.wheel) wheel_rows.push_back({s.time_s, s.speed_mps});
  io::write_csv((dir / "wheel.csv").string(), {"time_s", "speed_mps"}, wheel_rows);

  std::vector<std::vector<double>> gt_rows;
  for (const auto& s : record.ground_truth) gt_rows.push_back({s.time_s, s.x_m, s.y_m});
  io::write_csv((dir / "ground_truth.csv").string(), {"time_s", "x_m", "y_m"}, gt_rows);
}

namespace {

void expect_header(const io::Csv& csv, const std::vector<std::string>& expected,
                   const std::string& path) {
  if (csv.header.size() < expected.size()) {
    throw std::runtime_error(path + ": expected header starting with " + expected.front());
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (csv.header[i] != expected[i]) {
      throw std::runtime_error(path + ": header field " + std::to_string(i) + " is '" +
                               csv.header[i] + "', expected '" + expected[i] + "'");
    }
  }
}

}  // namespace

std::vector<TrajectoryRecord> load_trajectories(const std::string& dir) {
  if (!fs::exists(dir)) throw std::runtime_error("missing directory: " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());

  std::vector<TrajectoryRecord> records;
  for (const auto& name : names) {
    const fs::path tdir = fs::path(dir) / name;
    TrajectoryRecord rec;
    rec.name = name;

    const std::string gpr_path = (tdir / "gpr.csv").string();
    const io::Csv gpr = io::read_csv(gpr_path);
    expect_header(gpr, {"time_s", "along_track_m"}, gpr_path);
    std::vector<double> times;
    for (const auto& row : gpr.rows) {
      GprTraceRow t;
      t.time_s = row[0];
      t.along_track_m = row[1];
      t.samples.assign(row.begin() + 2, row.end());
      times.push_back(t.time_s);
      rec.gpr.push_back(std::move(t));
    }
    check_monotone(times, gpr_path);

    const std::string imu_path = (tdir / "imu.csv").string();
    const io::Csv imu = io::read_csv(imu_path);
    expect_header(imu, {"time_s", "yaw_rate", "ax", "ay"}, imu_path);
    times.clear();
    for (const auto& row : imu.rows) {
      rec.imu.push_back({row[0], row[1], row[2], row[3]});
      times.push_back(row[0]);
    }
    check_monotone(times, imu_path);

    const std::string wheel_path = (tdir / "wheel.csv").string();
    const io::Csv wheel = io::read_csv(wheel_path);
    expect_header(wheel, {"time_s", "speed_mps"}, wheel_path);
    times.clear();
    for (const auto& row : wheel.rows) {
      rec.wheel.push_back({row[0], row[1]});
      times.push_back(row[0]);
    }
    check_monotone(times, wheel_path);

    const std::string gt_path = (tdir / "ground_truth.csv").string();
    const io::Csv gt = io::read_csv(gt_path);
    expect_header(gt, {"time_s", "x_m", "y_m"}, gt_path);
    times.clear();
    for (const auto& row : gt.rows) {
      rec.ground_truth.push_back({row[0], row[1], row[2]});
      times.push_back(row[0]);
    }
    check_monotone(times, gt_path);

    // ground truth must cover the span of every other stream
    if (!rec.ground_truth.empty()) {
      double lo = rec.ground_truth.front().time_s, hi = rec.ground_truth.back().time_s;
      auto check_cover = [&](double t, const std::string& what) {
        if (t < lo - 1e-9 || t > hi + 1e-9) {
          throw std::runtime_error(name + ": ground truth does not cover " + what + " timestamps");
        }
      };
      if (!rec.imu.empty()) {
        check_cover(rec.imu.front().time_s, "imu");
        check_cover(rec.imu.back().time_s, "imu");
      }
      if (!rec.wheel.empty()) {
        check_cover(rec.wheel.front().time_s, "wheel");
        check_cover(rec.wheel.back().time_s, "wheel");
      }
      if (!rec.gpr.empty()) {
        check_cover(rec.gpr.front().time_s, "gpr");
        check_cover(rec.gpr.back().time_s, "gpr");
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

SplitResult split(const std::vector<std::string>& trajectory_names, const SplitSpec& spec) {
  const std::set<std::string> known(trajectory_names.begin(), trajectory_names.end());
  for (const auto& list : {spec.train, spec.test}) {
    for (const auto& n : list) {
      if (!known.count(n)) throw std::invalid_argument("unknown trajectory in split: " + n);
    }
  }
  std::set<std::string> train_set(spec.train.begin(), spec.train.end());
  for (const auto& n : spec.test) {
    if (train_set.count(n)) {
      throw std::invalid_argument("trajectory in both train and test split: " + n);
    }
  }
  const std::set<std::string> test_set(spec.test.begin(), spec.test.end());
  SplitResult out;
  for (const auto& n : trajectory_names) {
    if (test_set.count(n)) {
      out.test.push_back(n);
    } else if (spec.train.empty() || train_set.count(n)) {
      out.train.push_back(n);
    }
  }
  return out;
}

void save_pair_dataset(const std::string& dir, const std::vector<net::OdomPair>& pairs,
                       const PairGridConfig& grid) {
  fs::create_directories(dir);
  std::vector<nn::NamedTensor> records;
  std::vector<std::string> traj_names;
  std::vector<std::vector<double>> rows;
  char name[32];
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    auto traj_it = std::find(traj_names.begin(), traj_names.end(), p.trajectory);
    if (traj_it == traj_names.end()) {
      traj_names.push_back(p.trajectory);
      traj_it = traj_names.end() - 1;
    }
    const auto traj_index = static_cast<double>(traj_it - traj_names.begin());
    std::snprintf(name, sizeof(name), "pair%06zu", i);
    records.push_back({std::string(name) + "/prev",
                       nn::Tensor::from_data({p.prev.height, p.prev.width}, p.prev.data)});
    records.push_back({std::string(name) + "/cur",
                       nn::Tensor::from_data({p.cur.height, p.cur.width}, p.cur.data)});
    rows.push_back({static_cast<double>(i), p.label, traj_index, p.prev.start_position,
                    p.cur.start_position});
  }
  nn::write_container((fs::path(dir) / "bscans.gpz").string(), records);
  io::write_csv((fs::path(dir) / "pairs.csv").string(),
                {"index", "label_m", "trajectory_index", "prev_start_m", "cur_start_m"}, rows);
  nlohmann::json meta;
  meta["dt"] = grid.dt;
  meta["trace_spacing"] = grid.trace_spacing;
  meta["bscan_width"] = grid.bscan_width;
  meta["n_samples"] = grid.n_samples;
  meta["trajectories"] = traj_names;
  io::write_text((fs::path(dir) / "meta.json").string(), meta.dump(2) + "\n");
}

std::vector<net::OdomPair> load_pair_dataset(const std::string& dir) {
  const auto meta = nlohmann::json::parse(io::read_text((fs::path(dir) / "meta.json").string()));
  const double dt = meta.at("dt").get<double>();
  const double spacing = meta.at("trace_spacing").get<double>();
  const auto traj_names = meta.at("trajectories").get<std::vector<std::string>>();

  const auto records = nn::read_container((fs::path(dir) / "bscans.gpz").string());
  std::map<std::string, const nn::Tensor*> by_name;
  for (const auto& r : records) by_name[r.name] = &r.tensor;

  const io::Csv pairs_csv = io::read_csv((fs::path(dir) / "pairs.csv").string());
  std::vector<net::OdomPair> pairs;
  char name[32];
  for (const auto& row : pairs_csv.rows) {
    const auto index = static_cast<std::size_t>(row[0]);
    std::snprintf(name, sizeof(name), "pair%06zu", index);
    auto fetch = [&](const std::string& key, double start) {
      auto it = by_name.find(key);
      if (it == by_name.end()) throw std::runtime_error("dataset missing record " + key);
      const nn::Tensor& t = *it->second;
      pre::BScan b;
      b.height = t.extent(0);
      b.width = t.extent(1);
      b.data = t.values();
      b.dt = dt;
      b.trace_spacing = spacing;
      b.start_position = start;
      return b;
    };
    net::OdomPair p;
    p.prev = fetch(std::string(name) + "/prev", row[3]);
    p.cur = fetch(std::string(name) + "/cur", row[4]);
    p.label = row[1];
    const auto ti = static_cast<std::size_t>(row[2]);
    if (ti >= traj_names.size()) throw std::runtime_error("bad trajectory index in pairs.csv");
    p.trajectory = traj_names[ti];
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace gprodom::sim
