#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gprodom/odomnet.hpp"
#include "gprodom/optim.hpp"

namespace gprodom::train {

struct TrainConfig {
  int epochs = 60;
  int batch_size = 16;
  nn::OptimizerConfig optimizer;  // adam, lr 1e-3
  std::uint64_t seed = 42;
  int eval_every = 1;   // epochs between evaluations
  int patience = 10;    // stop after this many evaluations without improvement
  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_rmse = 0.0;
  double eval_rmse = -1.0;  // -1 when this epoch was not evaluated
  double best_eval_rmse = 0.0;
};

struct EvalReport {
  std::string variant_label;
  std::string unit = "m";  // labels and predictions are meters throughout
  std::vector<std::pair<std::string, double>> per_trajectory;  // name -> RMSE
  double overall_rmse = 0.0;  // pooled over all test pairs, not a mean of rows
  std::int64_t sample_count = 0;
};

struct TrainResult {
  nn::ParamStore best_params;  // snapshot at the best evaluation
  std::vector<EpochStats> history;
  double best_eval_rmse = 0.0;
  int best_epoch = -1;
  bool diverged = false;
};

// Batched eval-mode inference; prediction order matches the input order.
// Thread count is capped by the GPR_ODOM_THREADS environment variable.
std::vector<double> predict(net::OdomNet& model, const std::vector<net::OdomPair>& pairs,
                            int batch_size);

EvalReport evaluate_relative(net::OdomNet& model, const std::vector<net::OdomPair>& test_set,
                             int batch_size = 16);
// Report from externally supplied predictions (oracle hooks in tests).
EvalReport report_from_predictions(const std::vector<net::OdomPair>& pairs,
                                   const std::vector<double>& predictions,
                                   const std::string& variant_label);

// Mini-batch training on the RMSE objective; evaluates on eval_set at the
// configured cadence and keeps the best-on-eval parameter snapshot. A
// non-finite loss aborts and returns the last good snapshot (diverged=true).
TrainResult train(const std::vector<net::OdomPair>& train_set,
                  const std::vector<net::OdomPair>& eval_set, const net::NetConfig& net_cfg,
                  const TrainConfig& cfg);

// RMSE on the test labels of the constant predictor fitted to the train
// label mean (the baseline the trained model must beat).
double mean_predictor_rmse(const std::vector<net::OdomPair>& train_set,
                           const std::vector<net::OdomPair>& test_set);

struct AblationOutcome {
  net::Variant variant;
  EvalReport report;
  TrainResult result;
};

// Trains and evaluates all four variants with identical seeds and data
// order. Row order matches the report table: Feature Concatenation,
// Similarity Only, Difference Only, GPR-OdomNet.
std::vector<AblationOutcome> run_ablation(const std::vector<net::OdomPair>& train_set,
                                          const std::vector<net::OdomPair>& eval_set,
                                          const net::NetConfig& base_cfg, const TrainConfig& cfg);

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);
void write_reports_csv(const std::string& path, const std::vector<EvalReport>& reports);

int worker_thread_cap();  // from GPR_ODOM_THREADS, default hardware concurrency

}  // namespace gprodom::train
