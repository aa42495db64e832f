#include "gprodom/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace gprodom::nn {

Optimizer::Optimizer(ParamStore& store, OptimizerConfig cfg) : store_(store), cfg_(std::move(cfg)) {
  if (cfg_.lr <= 0.0) throw std::invalid_argument("optimizer learning rate must be positive");
  if (cfg_.kind != "sgd" && cfg_.kind != "adam") {
    throw std::invalid_argument("unknown optimizer kind: " + cfg_.kind);
  }
}

void Optimizer::step() {
  ++t_;
  for (const auto& name : store_.trainable_names()) {
    Tensor& p = store_.at(name);
    if (!p.has_grad()) continue;
    auto& w = p.values();
    const auto& g = p.grad();
    if (cfg_.kind == "sgd") {
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] -= cfg_.lr * (g[i] + cfg_.weight_decay * w[i]);
      }
      continue;
    }
    auto& mom = state_[name];
    if (mom.m.empty()) {
      mom.m.assign(w.size(), 0.0);
      mom.v.assign(w.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = g[i] + cfg_.weight_decay * w[i];
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * grad;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * grad * grad;
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      w[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

}  // namespace gprodom::nn
