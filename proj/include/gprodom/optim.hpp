#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gprodom/params.hpp"

namespace gprodom::nn {

struct OptimizerConfig {
  std::string kind = "adam";  // "sgd" | "adam"
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// SGD / Adam over the trainable entries of a ParamStore. Moment state is
/// keyed by parameter name and carried between steps.
class Optimizer {
 public:
  Optimizer(ParamStore& store, OptimizerConfig cfg);

  void step();  // applies grads, then leaves them in place (caller zeroes)
  const OptimizerConfig& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  ParamStore& store_;
  OptimizerConfig cfg_;
  std::map<std::string, Moments> state_;
  std::int64_t t_ = 0;
};

}  // namespace gprodom::nn
