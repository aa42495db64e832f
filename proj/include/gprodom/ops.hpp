#pragma once

#include <random>
#include <span>

#include "gprodom/tensor.hpp"

// Differentiable tensor operations. Every op returns a fresh tensor; when a
// tape is supplied and any input is tracked, the op records a backward
// closure that adds into the input gradients (so reuse of a tensor by
// several consumers accumulates naturally).
namespace gprodom::nn {

struct Conv2dSpec {
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
};

// input NCHW, kernel OIHW, optional bias of length O (pass an undefined
// Tensor for none). Cross-correlation, no kernel flip.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const Conv2dSpec& spec, Tape* tape = nullptr);

// Normalizes over all axes but axis 1. Accepts NCHW or NF inputs.
// Training mode uses batch statistics and updates running_mean/running_var
// in place (no gradient flows through them); eval mode reads them.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, double eps,
                  double momentum, bool training, Tape* tape = nullptr);

Tensor relu(const Tensor& input, Tape* tape = nullptr);
Tensor sigmoid(const Tensor& input, Tape* tape = nullptr);

// input N x F, weights G x F, bias length G (or undefined for none).
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias,
              Tape* tape = nullptr);

// Inverted-scaling dropout: eval mode is the identity, train mode zeroes
// with probability p and scales survivors by 1/(1-p). Training requires an
// rng so masks are reproducible per seed.
Tensor dropout(const Tensor& input, double p, bool training,
               std::mt19937_64* rng, Tape* tape = nullptr);

enum class PoolKind { kMax, kAvg, kGlobalAvg };

Tensor pool(const Tensor& input, PoolKind kind, int window_h, int window_w,
            int stride_h, int stride_w, Tape* tape = nullptr);
Tensor max_pool(const Tensor& input, int window, int stride, Tape* tape = nullptr);
Tensor avg_pool(const Tensor& input, int window, int stride, Tape* tape = nullptr);
Tensor global_avg_pool(const Tensor& input, Tape* tape = nullptr);  // NCHW -> NC11

enum class EwOp { kAdd, kSub, kMul, kAbsDiff };

Tensor elementwise(const Tensor& a, const Tensor& b, EwOp op, Tape* tape = nullptr);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor abs_diff(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// Elementwise product where each extent of b equals a's or 1 (same rank).
// Covers attention weighting with NC11 / N1HW gates.
Tensor mul_bcast(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

Tensor scale(const Tensor& a, double factor, Tape* tape = nullptr);

Tensor concat(std::span<const Tensor> parts, int axis, Tape* tape = nullptr);

Tensor reshape(const Tensor& input, Shape shape, Tape* tape = nullptr);  // copies

// Cosine similarity across the channel axis per spatial position:
// a, b are NCHW; result is N1HW with values in [-1, 1]. Positions where
// either channel vector has norm < 1e-12 yield 0 (gradient 0 there).
Tensor cosine_similarity_map(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// sqrt(mean((preds - labels)^2)) over flattened inputs of equal length.
// At exactly zero error the subgradient 0 is used.
Tensor rmse_loss(const Tensor& preds, const Tensor& labels, Tape* tape = nullptr);

}  // namespace gprodom::nn
