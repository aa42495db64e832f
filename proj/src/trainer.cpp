#include "gprodom/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "gprodom/ioutil.hpp"

namespace gprodom::train {

using net::OdomNet;
using net::OdomPair;
using nn::Tensor;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("eval cadence must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
}

int worker_thread_cap() {
  if (const char* env = std::getenv("GPR_ODOM_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

// batch of pairs -> (prev, cur, labels); B-scans are normalized to zero
// mean / unit variance before entering the network
void batch_tensors(const std::vector<OdomPair>& pairs, const std::vector<int>& indices,
                   std::size_t start, std::size_t count, Tensor& prev, Tensor& cur,
                   Tensor& labels) {
  std::vector<const pre::BScan*> prev_scans, cur_scans;
  std::vector<double> label_vals;
  std::vector<pre::BScan> normalized;
  normalized.reserve(2 * count);
  for (std::size_t k = 0; k < count; ++k) {
    const OdomPair& p = pairs[static_cast<std::size_t>(indices[start + k])];
    normalized.push_back(p.prev);
    pre::normalize_inplace(normalized.back());
    normalized.push_back(p.cur);
    pre::normalize_inplace(normalized.back());
    label_vals.push_back(p.label);
  }
  for (std::size_t k = 0; k < count; ++k) {
    prev_scans.push_back(&normalized[2 * k]);
    cur_scans.push_back(&normalized[2 * k + 1]);
  }
  prev = net::bscans_to_tensor(prev_scans);
  cur = net::bscans_to_tensor(cur_scans);
  labels = Tensor::from_data({static_cast<int>(count)}, std::move(label_vals));
}

std::vector<int> iota_indices(std::size_t n) {
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  return idx;
}

}  // namespace

std::vector<double> predict(OdomNet& model, const std::vector<OdomPair>& pairs, int batch_size) {
  std::vector<double> preds(pairs.size(), 0.0);
  const auto idx = iota_indices(pairs.size());
  std::vector<std::pair<std::size_t, std::size_t>> batches;
  for (std::size_t at = 0; at < pairs.size(); at += static_cast<std::size_t>(batch_size)) {
    batches.emplace_back(at, std::min<std::size_t>(batch_size, pairs.size() - at));
  }
  auto run_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b) {
      Tensor prev, cur, labels;
      batch_tensors(pairs, idx, batches[b].first, batches[b].second, prev, cur, labels);
      Tensor out = model.forward_pair(prev, cur, false, nullptr, nullptr);
      for (std::size_t k = 0; k < batches[b].second; ++k) {
        preds[batches[b].first + k] = out.values()[k];
      }
    }
  };
  const int want = std::min<int>(worker_thread_cap(), static_cast<int>(batches.size()));
  if (want <= 1) {
    run_range(0, batches.size());
  } else {
    // read-only model, disjoint output slots: deterministic for any thread count
    std::vector<std::thread> workers;
    const std::size_t chunk = (batches.size() + static_cast<std::size_t>(want) - 1) / static_cast<std::size_t>(want);
    for (int t = 0; t < want; ++t) {
      const std::size_t lo = static_cast<std::size_t>(t) * chunk;
      const std::size_t hi = std::min(batches.size(), lo + chunk);
      if (lo < hi) workers.emplace_back(run_range, lo, hi);
    }
    for (auto& w : workers) w.join();
  }
  return preds;
}

EvalReport report_from_predictions(const std::vector<OdomPair>& pairs,
                                   const std::vector<double>& predictions,
                                   const std::string& variant_label) {
  if (pairs.empty()) throw std::invalid_argument("evaluation on an empty test set");
  if (pairs.size() != predictions.size()) {
    throw std::invalid_argument("prediction count does not match pair count");
  }
  EvalReport report;
  report.variant_label = variant_label;
  report.sample_count = static_cast<std::int64_t>(pairs.size());
  std::map<std::string, std::pair<double, std::int64_t>> per_traj;  // sum of squares, count
  double total_sq = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double err = predictions[i] - pairs[i].label;
    total_sq += err * err;
    auto& acc = per_traj[pairs[i].trajectory];
    acc.first += err * err;
    acc.second += 1;
  }
  for (const auto& [name, acc] : per_traj) {
    report.per_trajectory.emplace_back(name, std::sqrt(acc.first / static_cast<double>(acc.second)));
  }
  report.overall_rmse = std::sqrt(total_sq / static_cast<double>(pairs.size()));
  return report;
}

EvalReport evaluate_relative(OdomNet& model, const std::vector<OdomPair>& test_set,
                             int batch_size) {
  if (test_set.empty()) throw std::invalid_argument("evaluation on an empty test set");
  const auto preds = predict(model, test_set, batch_size);
  return report_from_predictions(test_set, preds, net::variant_label(model.config().variant));
}

double mean_predictor_rmse(const std::vector<OdomPair>& train_set,
                           const std::vector<OdomPair>& test_set) {
  if (train_set.empty() || test_set.empty()) {
    throw std::invalid_argument("mean predictor needs non-empty train and test sets");
  }
  double mean = 0.0;
  for (const auto& p : train_set) mean += p.label;
  mean /= static_cast<double>(train_set.size());
  double sq = 0.0;
  for (const auto& p : test_set) sq += (p.label - mean) * (p.label - mean);
  return std::sqrt(sq / static_cast<double>(test_set.size()));
}

TrainResult train(const std::vector<OdomPair>& train_set, const std::vector<OdomPair>& eval_set,
                  const net::NetConfig& net_cfg, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("training on an empty dataset");
  if (eval_set.empty()) throw std::invalid_argument("training requires a non-empty eval set");

  OdomNet model(net_cfg, io::derive_seed(cfg.seed, 0x696e6974ULL, 0));
  nn::Optimizer opt(model.params(), cfg.optimizer);
  std::mt19937_64 dropout_rng(io::derive_seed(cfg.seed, 0x64726f70ULL, 0));

  TrainResult result;
  result.best_params = model.params().clone();
  double best = std::numeric_limits<double>::infinity();
  int evals_since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = iota_indices(train_set.size());
    std::mt19937_64 shuffle_rng(io::derive_seed(cfg.seed, 0x73687566ULL,
                                                static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double sq_sum = 0.0;
    bool finite = true;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - at);
      Tensor prev, cur, labels;
      batch_tensors(train_set, order, at, count, prev, cur, labels);
      nn::Tape tape;
      Tensor out = model.forward_pair(prev, cur, true, &tape, &dropout_rng);
      Tensor loss = nn::rmse_loss(out, labels, &tape);
      const double loss_val = loss.item();
      if (!std::isfinite(loss_val)) {
        finite = false;
        break;
      }
      sq_sum += loss_val * loss_val * static_cast<double>(count);
      model.params().zero_grads();
      tape.backward(loss);
      opt.step();
    }
    if (!finite) {
      result.diverged = true;
      break;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_rmse = std::sqrt(sq_sum / static_cast<double>(train_set.size()));
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs - 1) {
      const EvalReport report = evaluate_relative(model, eval_set, cfg.batch_size);
      stats.eval_rmse = report.overall_rmse;
      if (report.overall_rmse < best) {
        best = report.overall_rmse;
        result.best_params = model.params().clone();
        result.best_epoch = epoch;
        evals_since_best = 0;
      } else {
        ++evals_since_best;
      }
    }
    stats.best_eval_rmse = best;
    result.history.push_back(stats);
    if (evals_since_best >= cfg.patience) break;
  }
  result.best_eval_rmse = best;
  return result;
}

std::vector<AblationOutcome> run_ablation(const std::vector<OdomPair>& train_set,
                                          const std::vector<OdomPair>& eval_set,
                                          const net::NetConfig& base_cfg, const TrainConfig& cfg) {
  const net::Variant order[] = {net::Variant::kFeatureConcat, net::Variant::kSimilarityOnly,
                                net::Variant::kDifferenceOnly, net::Variant::kFull};
  std::vector<AblationOutcome> outcomes;
  for (net::Variant v : order) {
    net::NetConfig net_cfg = base_cfg;
    net_cfg.variant = v;
    AblationOutcome outcome;
    outcome.variant = v;
    outcome.result = train(train_set, eval_set, net_cfg, cfg);
    OdomNet model(net_cfg, io::derive_seed(cfg.seed, 0x696e6974ULL, 0));
    model.params().load_values_from(outcome.result.best_params);
    outcome.report = evaluate_relative(model, eval_set, cfg.batch_size);
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::vector<std::vector<double>> rows;
  for (const auto& h : history) {
    rows.push_back({static_cast<double>(h.epoch), h.train_rmse, h.eval_rmse, h.best_eval_rmse});
  }
  io::write_csv(path, {"epoch", "train_rmse_m", "eval_rmse_m", "best_eval_rmse_m"}, rows);
}

void write_reports_csv(const std::string& path, const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("no reports to write");
  // union of trajectory names, sorted
  std::vector<std::string> trajs;
  for (const auto& r : reports) {
    for (const auto& [name, rmse] : r.per_trajectory) {
      if (std::find(trajs.begin(), trajs.end(), name) == trajs.end()) trajs.push_back(name);
    }
  }
  std::sort(trajs.begin(), trajs.end());
  std::ostringstream os;
  os << "variant";
  for (const auto& t : trajs) os << ',' << t << "_rmse";
  os << ",overall_rmse,overall_rmse_cm,sample_count,unit\n";
  for (const auto& r : reports) {
    os << r.variant_label;
    for (const auto& t : trajs) {
      double v = std::nan("");
      for (const auto& [name, rmse] : r.per_trajectory) {
        if (name == t) v = rmse;
      }
      os << ',' << io::format_double(v);
    }
    os << ',' << io::format_double(r.overall_rmse) << ',' << io::format_double(100.0 * r.overall_rmse)
       << ',' << r.sample_count << ',' << r.unit << '\n';
  }
  io::write_text(path, os.str());
}

}  // namespace gprodom::train
