#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <vector>

#include "gprodom/ops.hpp"
#include "gprodom/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

inline gprodom::nn::Tensor random_tensor(gprodom::nn::Shape shape, std::mt19937_64& rng,
                                         bool requires_grad = false, double lo = -1.0,
                                         double hi = 1.0) {
  auto n = static_cast<std::size_t>(gprodom::nn::shape_numel(shape));
  return gprodom::nn::Tensor::from_data(std::move(shape), random_values(n, rng, lo, hi),
                                        requires_grad);
}

// Central finite differences against reverse-mode gradients. `forward` must
// evaluate the scalar loss from the current parameter values; it receives a
// tape only for the reverse-mode pass.
struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};

inline GradCheckResult check_gradients(
    const std::function<gprodom::nn::Tensor(gprodom::nn::Tape*)>& forward,
    std::vector<gprodom::nn::Tensor> params, int samples_per_param, std::uint64_t seed,
    double h = 1e-5) {
  using gprodom::nn::Tape;
  using gprodom::nn::Tensor;
  for (auto& p : params) p.zero_grad();
  Tape tape;
  Tensor loss = forward(&tape);
  tape.backward(loss);

  std::vector<std::vector<double>> grads;
  for (auto& p : params) grads.push_back(p.grad());

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    const int n = static_cast<int>(vals.size());
    const int count = std::min(samples_per_param, n);
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int k = 0; k < count; ++k) {
      const int i = idx[static_cast<std::size_t>(k)];
      const double saved = vals[static_cast<std::size_t>(i)];
      const double step = h * std::max(1.0, std::abs(saved));
      vals[static_cast<std::size_t>(i)] = saved + step;
      const double up = forward(nullptr).item();
      vals[static_cast<std::size_t>(i)] = saved - step;
      const double down = forward(nullptr).item();
      vals[static_cast<std::size_t>(i)] = saved;
      const double fd = (up - down) / (2.0 * step);
      result.max_rel_err = std::max(result.max_rel_err,
                                    rel_err(grads[pi][static_cast<std::size_t>(i)], fd));
      ++result.checked;
    }
  }
  return result;
}

// Discrete-time frequency response of a real impulse response at f (Hz).
inline double response_magnitude(const std::vector<double>& impulse, double f, double sample_rate) {
  std::complex<double> acc(0.0, 0.0);
  const double w = 2.0 * 3.14159265358979323846 * f / sample_rate;
  for (std::size_t n = 0; n < impulse.size(); ++n) {
    acc += impulse[n] * std::exp(std::complex<double>(0.0, -w * static_cast<double>(n)));
  }
  return std::abs(acc);
}

inline double to_db(double magnitude) { return 20.0 * std::log10(magnitude); }

}  // namespace testutil
