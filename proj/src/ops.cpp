#include "gprodom/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gprodom::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

bool want_grad(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->tracked()) return true;
  }
  return false;
}

void check_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(what) + " expects rank " + std::to_string(rank) +
                                ", got shape " + shape_str(t.shape()));
  }
}

// spatial size = product of extents after axis 1 (1 for rank-2 inputs)
std::int64_t spatial_size(const Tensor& t) {
  std::int64_t s = 1;
  for (int a = 2; a < t.rank(); ++a) s *= t.extent(a);
  return s;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const Conv2dSpec& spec, Tape* tape) {
  check_rank(input, 4, "conv2d input");
  check_rank(kernel, 4, "conv2d kernel");
  const int n_batch = input.extent(0), c_in = input.extent(1);
  const int h_in = input.extent(2), w_in = input.extent(3);
  const int c_out = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
  if (kernel.extent(1) != c_in) {
    throw std::invalid_argument("conv2d channel mismatch: input " + shape_str(input.shape()) +
                                " vs kernel " + shape_str(kernel.shape()));
  }
  if (spec.stride_h < 1 || spec.stride_w < 1 || spec.pad_h < 0 || spec.pad_w < 0) {
    throw std::invalid_argument("conv2d requires positive strides and non-negative padding");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.extent(0) != c_out)) {
    throw std::invalid_argument("conv2d bias shape " + shape_str(bias.shape()) +
                                " does not match kernel " + shape_str(kernel.shape()));
  }
  const int h_out = (h_in + 2 * spec.pad_h - kh) / spec.stride_h + 1;
  const int w_out = (w_in + 2 * spec.pad_w - kw) / spec.stride_w + 1;
  if (h_in + 2 * spec.pad_h < kh || w_in + 2 * spec.pad_w < kw || h_out < 1 || w_out < 1) {
    throw std::invalid_argument("conv2d output would be empty: input " + shape_str(input.shape()) +
                                " vs kernel " + shape_str(kernel.shape()));
  }

  const std::int64_t k_rows = static_cast<std::int64_t>(c_in) * kh * kw;
  const std::int64_t out_hw = static_cast<std::int64_t>(h_out) * w_out;

  auto fill_col = [&](const std::vector<double>& x, int n, RowMat& col) {
    const double* xn = x.data() + static_cast<std::int64_t>(n) * c_in * h_in * w_in;
    for (int c = 0; c < c_in; ++c) {
      const double* xc = xn + static_cast<std::int64_t>(c) * h_in * w_in;
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          double* row = col.data() + ((static_cast<std::int64_t>(c) * kh + u) * kw + v) * out_hw;
          for (int i = 0; i < h_out; ++i) {
            const int hi = i * spec.stride_h + u - spec.pad_h;
            double* dst = row + static_cast<std::int64_t>(i) * w_out;
            if (hi < 0 || hi >= h_in) {
              std::fill(dst, dst + w_out, 0.0);
              continue;
            }
            const double* src = xc + static_cast<std::int64_t>(hi) * w_in;
            for (int j = 0; j < w_out; ++j) {
              const int wi = j * spec.stride_w + v - spec.pad_w;
              dst[j] = (wi >= 0 && wi < w_in) ? src[wi] : 0.0;
            }
          }
        }
      }
    }
  };

  Tensor out = Tensor::zeros({n_batch, c_out, h_out, w_out});
  {
    MapConstMat w_mat(kernel.values().data(), c_out, k_rows);
    RowMat col(k_rows, out_hw);
    for (int n = 0; n < n_batch; ++n) {
      fill_col(input.values(), n, col);
      MapMat y_n(out.values().data() + static_cast<std::int64_t>(n) * c_out * out_hw, c_out, out_hw);
      y_n.noalias() = w_mat * col;
    }
    if (bias.defined()) {
      double* o = out.values().data();
      for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < c_out; ++c) {
          const double b = bias.values()[static_cast<std::size_t>(c)];
          for (std::int64_t s = 0; s < out_hw; ++s) *o++ += b;
        }
      }
    }
  }

  if (want_grad(tape, {&input, &kernel, &bias})) {
    out.set_tracked(true);
    Tensor in_c = input, k_c = kernel, b_c = bias, out_c = out;
    Conv2dSpec sp = spec;
    tape->record([in_c, k_c, b_c, out_c, sp, fill_col, n_batch, c_in, h_in, w_in, c_out, kh, kw,
                  h_out, w_out, k_rows, out_hw]() mutable {
      if (!out_c.has_grad()) return;
      const std::vector<double>& gout = out_c.grad();
      MapConstMat w_mat(k_c.values().data(), c_out, k_rows);
      RowMat col(k_rows, out_hw);
      RowMat dcol(k_rows, out_hw);
      const bool need_dw = k_c.tracked();
      const bool need_dx = in_c.tracked();
      for (int n = 0; n < n_batch; ++n) {
        MapConstMat dy_n(gout.data() + static_cast<std::int64_t>(n) * c_out * out_hw, c_out, out_hw);
        if (need_dw) {
          fill_col(in_c.values(), n, col);
          MapMat dw(k_c.grad().data(), c_out, k_rows);
          dw.noalias() += dy_n * col.transpose();
        }
        if (need_dx) {
          dcol.noalias() = w_mat.transpose() * dy_n;
          double* gx = in_c.grad().data() + static_cast<std::int64_t>(n) * c_in * h_in * w_in;
          for (int c = 0; c < c_in; ++c) {
            for (int u = 0; u < kh; ++u) {
              for (int v = 0; v < kw; ++v) {
                const double* row = dcol.data() + ((static_cast<std::int64_t>(c) * kh + u) * kw + v) * out_hw;
                for (int i = 0; i < h_out; ++i) {
                  const int hi = i * sp.stride_h + u - sp.pad_h;
                  if (hi < 0 || hi >= h_in) continue;
                  double* gr = gx + (static_cast<std::int64_t>(c) * h_in + hi) * w_in;
                  const double* rr = row + static_cast<std::int64_t>(i) * w_out;
                  for (int j = 0; j < w_out; ++j) {
                    const int wi = j * sp.stride_w + v - sp.pad_w;
                    if (wi >= 0 && wi < w_in) gr[wi] += rr[j];
                  }
                }
              }
            }
          }
        }
      }
      if (b_c.defined() && b_c.tracked()) {
        auto& gb = b_c.grad();
        const double* g = gout.data();
        for (int n = 0; n < n_batch; ++n) {
          for (int c = 0; c < c_out; ++c) {
            double acc = 0.0;
            for (std::int64_t s = 0; s < out_hw; ++s) acc += *g++;
            gb[static_cast<std::size_t>(c)] += acc;
          }
        }
      }
    });
  }
  return out;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, double eps,
                  double momentum, bool training, Tape* tape) {
  if (eps <= 0.0) throw std::invalid_argument("batch_norm eps must be positive");
  if (input.rank() != 2 && input.rank() != 4) {
    throw std::invalid_argument("batch_norm expects rank 2 or 4 input, got " + shape_str(input.shape()));
  }
  const int n_batch = input.extent(0);
  const int channels = input.extent(1);
  const std::int64_t sp = spatial_size(input);
  for (const Tensor* p : {&gamma, &beta, static_cast<const Tensor*>(&running_mean),
                          static_cast<const Tensor*>(&running_var)}) {
    if (p->rank() != 1 || p->extent(0) != channels) {
      throw std::invalid_argument("batch_norm parameter shape " + shape_str(p->shape()) +
                                  " does not match channel count " + std::to_string(channels));
    }
  }
  const std::int64_t m = static_cast<std::int64_t>(n_batch) * sp;  // elements per channel

  std::vector<double> mean(static_cast<std::size_t>(channels));
  std::vector<double> invstd(static_cast<std::size_t>(channels));
  const auto& x = input.values();
  auto channel_offset = [&](int n, int c) {
    return (static_cast<std::int64_t>(n) * channels + c) * sp;
  };

  if (training) {
    for (int c = 0; c < channels; ++c) {
      double s = 0.0;
      for (int n = 0; n < n_batch; ++n) {
        const double* p = x.data() + channel_offset(n, c);
        for (std::int64_t i = 0; i < sp; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (int n = 0; n < n_batch; ++n) {
        const double* p = x.data() + channel_offset(n, c);
        for (std::int64_t i = 0; i < sp; ++i) {
          const double d = p[i] - mu;
          v += d * d;
        }
      }
      const double var = v / static_cast<double>(m);
      mean[static_cast<std::size_t>(c)] = mu;
      invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + eps);
      const double var_unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      running_mean.values()[static_cast<std::size_t>(c)] =
          (1.0 - momentum) * running_mean.values()[static_cast<std::size_t>(c)] + momentum * mu;
      running_var.values()[static_cast<std::size_t>(c)] =
          (1.0 - momentum) * running_var.values()[static_cast<std::size_t>(c)] + momentum * var_unbiased;
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      mean[static_cast<std::size_t>(c)] = running_mean.values()[static_cast<std::size_t>(c)];
      invstd[static_cast<std::size_t>(c)] =
          1.0 / std::sqrt(running_var.values()[static_cast<std::size_t>(c)] + eps);
    }
  }

  Tensor out = Tensor::zeros(input.shape());
  auto& y = out.values();
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const double mu = mean[static_cast<std::size_t>(c)];
      const double is = invstd[static_cast<std::size_t>(c)];
      const double g = gamma.values()[static_cast<std::size_t>(c)];
      const double b = beta.values()[static_cast<std::size_t>(c)];
      const double* p = x.data() + channel_offset(n, c);
      double* q = y.data() + channel_offset(n, c);
      for (std::int64_t i = 0; i < sp; ++i) q[i] = g * (p[i] - mu) * is + b;
    }
  }

  if (want_grad(tape, {&input, &gamma, &beta})) {
    out.set_tracked(true);
    Tensor in_c = input, g_c = gamma, b_c = beta, out_c = out;
    tape->record([in_c, g_c, b_c, out_c, mean, invstd, training, n_batch, channels, sp, m,
                  channel_offset]() mutable {
      if (!out_c.has_grad()) return;
      const auto& gy = out_c.grad();
      const auto& xv = in_c.values();
      std::vector<double> sum_dy(static_cast<std::size_t>(channels), 0.0);
      std::vector<double> sum_dy_xhat(static_cast<std::size_t>(channels), 0.0);
      for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < channels; ++c) {
          const double mu = mean[static_cast<std::size_t>(c)];
          const double is = invstd[static_cast<std::size_t>(c)];
          const double* p = xv.data() + channel_offset(n, c);
          const double* dy = gy.data() + channel_offset(n, c);
          double s0 = 0.0, s1 = 0.0;
          for (std::int64_t i = 0; i < sp; ++i) {
            s0 += dy[i];
            s1 += dy[i] * (p[i] - mu) * is;
          }
          sum_dy[static_cast<std::size_t>(c)] += s0;
          sum_dy_xhat[static_cast<std::size_t>(c)] += s1;
        }
      }
      if (g_c.tracked()) {
        for (int c = 0; c < channels; ++c) g_c.grad()[static_cast<std::size_t>(c)] += sum_dy_xhat[static_cast<std::size_t>(c)];
      }
      if (b_c.tracked()) {
        for (int c = 0; c < channels; ++c) b_c.grad()[static_cast<std::size_t>(c)] += sum_dy[static_cast<std::size_t>(c)];
      }
      if (in_c.tracked()) {
        auto& gx = in_c.grad();
        const double inv_m = 1.0 / static_cast<double>(m);
        for (int n = 0; n < n_batch; ++n) {
          for (int c = 0; c < channels; ++c) {
            const double mu = mean[static_cast<std::size_t>(c)];
            const double is = invstd[static_cast<std::size_t>(c)];
            const double g = g_c.values()[static_cast<std::size_t>(c)];
            const double* p = xv.data() + channel_offset(n, c);
            const double* dy = gy.data() + channel_offset(n, c);
            double* dx = gx.data() + channel_offset(n, c);
            if (training) {
              const double mdy = sum_dy[static_cast<std::size_t>(c)] * inv_m;
              const double mdyx = sum_dy_xhat[static_cast<std::size_t>(c)] * inv_m;
              for (std::int64_t i = 0; i < sp; ++i) {
                const double xh = (p[i] - mu) * is;
                dx[i] += g * is * (dy[i] - mdy - xh * mdyx);
              }
            } else {
              for (std::int64_t i = 0; i < sp; ++i) dx[i] += g * is * dy[i];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& input, Tape* tape) {
  Tensor out = Tensor::zeros(input.shape());
  const auto& x = input.values();
  auto& y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (want_grad(tape, {&input})) {
    out.set_tracked(true);
    Tensor in_c = input, out_c = out;
    tape->record([in_c, out_c]() mutable {
      if (!out_c.has_grad()) return;
      const auto& gy = out_c.grad();
      const auto& x = in_c.values();
      auto& gx = in_c.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (x[i] > 0.0) gx[i] += gy[i];
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& input, Tape* tape) {
  Tensor out = Tensor::zeros(input.shape());
  const auto& x = input.values();
  auto& y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
  if (want_grad(tape, {&input})) {
    out.set_tracked(true);
    Tensor in_c = input, out_c = out;
    tape->record([in_c, out_c]() mutable {
      if (!out_c.has_grad()) return;
      const auto& gy = out_c.grad();
      const auto& y = out_c.values();
      auto& gx = in_c.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias, Tape* tape) {
  check_rank(input, 2, "linear input");
  check_rank(weights, 2, "linear weights");
  const int n = input.extent(0), f = input.extent(1);
  const int g = weights.extent(0);
  if (weights.extent(1) != f) {
    throw std::invalid_argument("linear shape mismatch: input " + shape_str(input.shape()) +
                                " vs weights " + shape_str(weights.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.extent(0) != g)) {
    throw std::invalid_argument("linear bias shape " + shape_str(bias.shape()) +
                                " does not match weights " + shape_str(weights.shape()));
  }
  Tensor out = Tensor::zeros({n, g});
  {
    MapConstMat xm(input.values().data(), n, f);
    MapConstMat wm(weights.values().data(), g, f);
    MapMat ym(out.values().data(), n, g);
    ym.noalias() = xm * wm.transpose();
    if (bias.defined()) {
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < g; ++c) out.values()[static_cast<std::size_t>(r) * g + c] += bias.values()[static_cast<std::size_t>(c)];
      }
    }
  }
  if (want_grad(tape, {&input, &weights, &bias})) {
    out.set_tracked(true);
    Tensor in_c = input, w_c = weights, b_c = bias, out_c = out;
    tape->record([in_c, w_c, b_c, out_c, n, f, g]() mutable {
      if (!out_c.has_grad()) return;
      MapConstMat dy(out_c.grad().data(), n, g);
      if (in_c.tracked()) {
        MapConstMat wm(w_c.values().data(), g, f);
        MapMat dx(in_c.grad().data(), n, f);
        dx.noalias() += dy * wm;
      }
      if (w_c.tracked()) {
        MapConstMat xm(in_c.values().data(), n, f);
        MapMat dw(w_c.grad().data(), g, f);
        dw.noalias() += dy.transpose() * xm;
      }
      if (b_c.defined() && b_c.tracked()) {
        auto& gb = b_c.grad();
        for (int c = 0; c < g; ++c) {
          double acc = 0.0;
          for (int r = 0; r < n; ++r) acc += out_c.grad()[static_cast<std::size_t>(r) * g + c];
          gb[static_cast<std::size_t>(c)] += acc;
        }
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& input, double p, bool training, std::mt19937_64* rng, Tape* tape) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout rate must lie in [0,1)");
  if (!training || p == 0.0) {
    Tensor out = input.clone();
    if (want_grad(tape, {&input})) {
      out.set_tracked(true);
      Tensor in_c = input, out_c = out;
      tape->record([in_c, out_c]() mutable {
        if (!out_c.has_grad()) return;
        in_c.accumulate_grad(out_c.grad());
      });
    }
    return out;
  }
  if (!rng) throw std::invalid_argument("dropout in training mode requires a seeded rng");
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(input.values().size());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (auto& v : *mask) v = uni(*rng) >= p ? keep_scale : 0.0;
  Tensor out = Tensor::zeros(input.shape());
  for (std::size_t i = 0; i < mask->size(); ++i) out.values()[i] = input.values()[i] * (*mask)[i];
  if (want_grad(tape, {&input})) {
    out.set_tracked(true);
    Tensor in_c = input, out_c = out;
    tape->record([in_c, out_c, mask]() mutable {
      if (!out_c.has_grad()) return;
      const auto& gy = out_c.grad();
      auto& gx = in_c.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor pool(const Tensor& input, PoolKind kind, int window_h, int window_w,
            int stride_h, int stride_w, Tape* tape) {
  check_rank(input, 4, "pool input");
  const int n_batch = input.extent(0), channels = input.extent(1);
  const int h = input.extent(2), w = input.extent(3);
  if (kind == PoolKind::kGlobalAvg) {
    window_h = h;
    window_w = w;
    stride_h = h;
    stride_w = w;
  }
  if (window_h < 1 || window_w < 1 || window_h > h || window_w > w || stride_h < 1 || stride_w < 1) {
    throw std::invalid_argument("pool window " + std::to_string(window_h) + "x" + std::to_string(window_w) +
                                " invalid for input " + shape_str(input.shape()));
  }
  const int h_out = (h - window_h) / stride_h + 1;
  const int w_out = (w - window_w) / stride_w + 1;
  Tensor out = Tensor::zeros({n_batch, channels, h_out, w_out});
  const auto& x = input.values();
  auto& y = out.values();
  const bool is_max = kind == PoolKind::kMax;
  auto argmax = is_max ? std::make_shared<std::vector<std::int64_t>>(y.size()) : nullptr;
  const double inv_win = 1.0 / (static_cast<double>(window_h) * window_w);
  std::int64_t oi = 0;
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const double* plane = x.data() + (static_cast<std::int64_t>(n) * channels + c) * h * w;
      for (int i = 0; i < h_out; ++i) {
        for (int j = 0; j < w_out; ++j, ++oi) {
          const int h0 = i * stride_h, w0 = j * stride_w;
          if (is_max) {
            double best = plane[static_cast<std::int64_t>(h0) * w + w0];
            std::int64_t best_at = static_cast<std::int64_t>(h0) * w + w0;
            for (int u = 0; u < window_h; ++u) {
              for (int v = 0; v < window_w; ++v) {
                const std::int64_t at = static_cast<std::int64_t>(h0 + u) * w + (w0 + v);
                if (plane[at] > best) {
                  best = plane[at];
                  best_at = at;
                }
              }
            }
            y[static_cast<std::size_t>(oi)] = best;
            (*argmax)[static_cast<std::size_t>(oi)] = (static_cast<std::int64_t>(n) * channels + c) * h * w + best_at;
          } else {
            double acc = 0.0;
            for (int u = 0; u < window_h; ++u) {
              for (int v = 0; v < window_w; ++v) acc += plane[static_cast<std::int64_t>(h0 + u) * w + (w0 + v)];
            }
            y[static_cast<std::size_t>(oi)] = acc * inv_win;
          }
        }
      }
    }
  }
  if (want_grad(tape, {&input})) {
    out.set_tracked(true);
    Tensor in_c = input, out_c = out;
    const int wh = window_h, ww = window_w, sh = stride_h, sw = stride_w;
    tape->record([in_c, out_c, argmax, is_max, n_batch, channels, h, w, h_out, w_out, wh, ww, sh, sw,
                  inv_win]() mutable {
      if (!out_c.has_grad()) return;
      const auto& gy = out_c.grad();
      auto& gx = in_c.grad();
      if (is_max) {
        for (std::size_t i = 0; i < gy.size(); ++i) gx[static_cast<std::size_t>((*argmax)[i])] += gy[i];
        return;
      }
      std::int64_t oi = 0;
      for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < channels; ++c) {
          double* plane = gx.data() + (static_cast<std::int64_t>(n) * channels + c) * h * w;
          for (int i = 0; i < h_out; ++i) {
            for (int j = 0; j < w_out; ++j, ++oi) {
              const double g = gy[static_cast<std::size_t>(oi)] * inv_win;
              for (int u = 0; u < wh; ++u) {
                for (int v = 0; v < ww; ++v) plane[static_cast<std::int64_t>(i * sh + u) * w + (j * sw + v)] += g;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor max_pool(const Tensor& input, int window, int stride, Tape* tape) {
  return pool(input, PoolKind::kMax, window, window, stride, stride, tape);
}

Tensor avg_pool(const Tensor& input, int window, int stride, Tape* tape) {
  return pool(input, PoolKind::kAvg, window, window, stride, stride, tape);
}

Tensor global_avg_pool(const Tensor& input, Tape* tape) {
  return pool(input, PoolKind::kGlobalAvg, 0, 0, 0, 0, tape);
}

Tensor elementwise(const Tensor& a, const Tensor& b, EwOp op, Tape* tape) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("elementwise shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& y = out.values();
  switch (op) {
    case EwOp::kAdd:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
      break;
    case EwOp::kSub:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
      break;
    case EwOp::kMul:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
      break;
    case EwOp::kAbsDiff:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::abs(av[i] - bv[i]);
      break;
  }
  if (want_grad(tape, {&a, &b})) {
    out.set_tracked(true);
    Tensor a_c = a, b_c = b, out_c = out;
    tape->record([a_c, b_c, out_c, op]() mutable {
      if (!out_c.has_grad()) return;
      const auto& gy = out_c.grad();
      const auto& av = a_c.values();
      const auto& bv = b_c.values();
      const bool ga = a_c.tracked(), gb = b_c.tracked();
      switch (op) {
        case EwOp::kAdd:
          if (ga) a_c.accumulate_grad(gy);
          if (gb) b_c.accumulate_grad(gy);
          break;
        case EwOp::kSub:
          if (ga) a_c.accumulate_grad(gy);
          if (gb) {
            auto& g = b_c.grad();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
          }
          break;
        case EwOp::kMul:
          if (ga) {
            auto& g = a_c.grad();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * bv[i];
          }
          if (gb) {
            auto& g = b_c.grad();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * av[i];
          }
          break;
        case EwOp::kAbsDiff:
          // subgradient 0 at a == b
          for (std::size_t i = 0; i < gy.size(); ++i) {
            const double d = av[i] - bv[i];
            const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (ga) a_c.grad()[i] += gy[i] * s;
            if (gb) b_c.grad()[i] -= gy[i] * s;
          }
          break;
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) { return elementwise(a, b, EwOp::kAdd, tape); }
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) { return elementwise(a, b, EwOp::kSub, tape); }
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) { return elementwise(a, b, EwOp::kMul, tape); }
Tensor abs_diff(const Tensor& a, const Tensor& b, Tape* tape) { return elementwise(a, b, EwOp::kAbsDiff, tape); }

namespace {

// flat index of `b` corresponding to flat index of `a`, with 0-stride on
// broadcast (extent 1) axes of b
struct BcastIndexer {
  std::array<std::int64_t, 4> a_ext{1, 1, 1, 1};
  std::array<std::int64_t, 4> b_stride{0, 0, 0, 0};
  int rank = 0;

  BcastIndexer(const Shape& a, const Shape& b) {
    rank = static_cast<int>(a.size());
    std::array<std::int64_t, 4> b_ext{1, 1, 1, 1};
    for (int i = 0; i < rank; ++i) {
      a_ext[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)];
      b_ext[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)];
    }
    std::int64_t s = 1;
    for (int i = rank - 1; i >= 0; --i) {
      b_stride[static_cast<std::size_t>(i)] = b_ext[static_cast<std::size_t>(i)] == 1 ? 0 : s;
      s *= b_ext[static_cast<std::size_t>(i)];
    }
  }

  template <typename F>
  void for_each(F&& f) const {
    std::int64_t ai = 0;
    for (std::int64_t i0 = 0; i0 < a_ext[0]; ++i0) {
      for (std::int64_t i1 = 0; i1 < a_ext[1]; ++i1) {
        for (std::int64_t i2 = 0; i2 < a_ext[2]; ++i2) {
          for (std::int64_t i3 = 0; i3 < a_ext[3]; ++i3, ++ai) {
            const std::int64_t bi = i0 * b_stride[0] + i1 * b_stride[1] + i2 * b_stride[2] + i3 * b_stride[3];
            f(ai, bi);
          }
        }
      }
    }
  }
};

}  // namespace

Tensor mul_bcast(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.rank() != b.rank() || a.rank() > 4) {
    throw std::invalid_argument("mul_bcast rank mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  for (int i = 0; i < a.rank(); ++i) {
    if (b.extent(i) != a.extent(i) && b.extent(i) != 1) {
      throw std::invalid_argument("mul_bcast incompatible shapes: " + shape_str(a.shape()) + " vs " +
                                  shape_str(b.shape()));
    }
  }
  Tensor out = Tensor::zeros(a.shape());
  BcastIndexer ix(a.shape(), b.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& y = out.values();
  ix.for_each([&](std::int64_t ai, std::int64_t bi) {
    y[static_cast<std::size_t>(ai)] = av[static_cast<std::size_t>(ai)] * bv[static_cast<std::size_t>(bi)];
  });
  if (want_grad(tape, {&a, &b})) {
    out.set_tracked(true);
    Tensor a_c = a, b_c = b, out_c = out;
    tape->record([a_c, b_c, out_c, ix]() mutable {
      if (!out_c.has_grad()) return;
      const auto& gy = out_c.grad();
      const auto& av = a_c.values();
      const auto& bv = b_c.values();
      const bool ga = a_c.tracked(), gb = b_c.tracked();
      if (ga) {
        auto& g = a_c.grad();
        ix.for_each([&](std::int64_t ai, std::int64_t bi) {
          g[static_cast<std::size_t>(ai)] += gy[static_cast<std::size_t>(ai)] * bv[static_cast<std::size_t>(bi)];
        });
      }
      if (gb) {
        auto& g = b_c.grad();
        ix.for_each([&](std::int64_t ai, std::int64_t bi) {
          g[static_cast<std::size_t>(bi)] += gy[static_cast<std::size_t>(ai)] * av[static_cast<std::size_t>(ai)];
        });
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] = a.values()[i] * factor;
  if (want_grad(tape, {&a})) {
    out.set_tracked(true);
    Tensor a_c = a, out_c = out;
    tape->record([a_c, out_c, factor]() mutable {
      if (!out_c.has_grad()) return;
      const auto& gy = out_c.grad();
      auto& g = a_c.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * factor;
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, int axis, Tape* tape) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat axis out of range");
  Shape out_shape = parts[0].shape();
  std::int64_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) throw std::invalid_argument("concat rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && p.extent(i) != out_shape[static_cast<std::size_t>(i)]) {
        throw std::invalid_argument("concat extent mismatch on axis " + std::to_string(i) + ": " +
                                    shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
      }
    }
    axis_total += p.extent(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = static_cast<int>(axis_total);

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<std::size_t>(i)];

  Tensor out = Tensor::zeros(out_shape);
  std::vector<std::int64_t> offsets;  // per-part start along the axis
  {
    std::int64_t off = 0;
    for (const Tensor& p : parts) {
      offsets.push_back(off);
      const std::int64_t pa = p.extent(axis);
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = p.values().data() + o * pa * inner;
        double* dst = out.values().data() + (o * axis_total + off) * inner;
        std::copy(src, src + pa * inner, dst);
      }
      off += pa;
    }
  }

  bool any_tracked = false;
  for (const Tensor& p : parts) any_tracked = any_tracked || p.tracked();
  if (tape && any_tracked) {
    out.set_tracked(true);
    std::vector<Tensor> parts_c(parts.begin(), parts.end());
    Tensor out_c = out;
    tape->record([parts_c, out_c, offsets, outer, inner, axis_total, axis]() mutable {
      if (!out_c.has_grad()) return;
      const auto& gy = out_c.grad();
      for (std::size_t k = 0; k < parts_c.size(); ++k) {
        if (!parts_c[k].tracked()) continue;
        auto& g = parts_c[k].grad();
        const std::int64_t pa = parts_c[k].extent(axis);
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* src = gy.data() + (o * axis_total + offsets[k]) * inner;
          double* dst = g.data() + o * pa * inner;
          for (std::int64_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& input, Shape shape, Tape* tape) {
  if (shape_numel(shape) != input.size()) {
    throw std::invalid_argument("reshape from " + shape_str(input.shape()) + " to " + shape_str(shape) +
                                " changes element count");
  }
  Tensor out = Tensor::from_data(std::move(shape), input.values());
  if (want_grad(tape, {&input})) {
    out.set_tracked(true);
    Tensor in_c = input, out_c = out;
    tape->record([in_c, out_c]() mutable {
      if (!out_c.has_grad()) return;
      in_c.accumulate_grad(out_c.grad());
    });
  }
  return out;
}

Tensor cosine_similarity_map(const Tensor& a, const Tensor& b, Tape* tape) {
  check_rank(a, 4, "cosine_similarity_map input");
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("cosine_similarity_map shape mismatch: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  constexpr double kNormFloor = 1e-12;
  const int n_batch = a.extent(0), channels = a.extent(1), h = a.extent(2), w = a.extent(3);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  Tensor out = Tensor::zeros({n_batch, 1, h, w});
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& y = out.values();
  for (int n = 0; n < n_batch; ++n) {
    const std::int64_t base = static_cast<std::int64_t>(n) * channels * hw;
    for (std::int64_t s = 0; s < hw; ++s) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (int c = 0; c < channels; ++c) {
        const double x = av[static_cast<std::size_t>(base + c * hw + s)];
        const double z = bv[static_cast<std::size_t>(base + c * hw + s)];
        dot += x * z;
        na += x * x;
        nb += z * z;
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      y[static_cast<std::size_t>(static_cast<std::int64_t>(n) * hw + s)] =
          (na < kNormFloor || nb < kNormFloor) ? 0.0 : dot / (na * nb);
    }
  }
  if (want_grad(tape, {&a, &b})) {
    out.set_tracked(true);
    Tensor a_c = a, b_c = b, out_c = out;
    tape->record([a_c, b_c, out_c, n_batch, channels, hw]() mutable {
      if (!out_c.has_grad()) return;
      const auto& gy = out_c.grad();
      const auto& av = a_c.values();
      const auto& bv = b_c.values();
      const bool ga = a_c.tracked(), gb = b_c.tracked();
      for (int n = 0; n < n_batch; ++n) {
        const std::int64_t base = static_cast<std::int64_t>(n) * channels * hw;
        for (std::int64_t s = 0; s < hw; ++s) {
          const double g = gy[static_cast<std::size_t>(static_cast<std::int64_t>(n) * hw + s)];
          if (g == 0.0) continue;
          double dot = 0.0, na2 = 0.0, nb2 = 0.0;
          for (int c = 0; c < channels; ++c) {
            const double x = av[static_cast<std::size_t>(base + c * hw + s)];
            const double z = bv[static_cast<std::size_t>(base + c * hw + s)];
            dot += x * z;
            na2 += x * x;
            nb2 += z * z;
          }
          const double na = std::sqrt(na2), nb = std::sqrt(nb2);
          if (na < kNormFloor || nb < kNormFloor) continue;  // output pinned to 0
          const double inv = 1.0 / (na * nb);
          const double cosv = dot * inv;
          for (int c = 0; c < channels; ++c) {
            const std::size_t at = static_cast<std::size_t>(base + c * hw + s);
            if (ga) a_c.grad()[at] += g * (bv[at] * inv - cosv * av[at] / na2);
            if (gb) b_c.grad()[at] += g * (av[at] * inv - cosv * bv[at] / nb2);
          }
        }
      }
    });
  }
  return out;
}

Tensor rmse_loss(const Tensor& preds, const Tensor& labels, Tape* tape) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("rmse_loss length mismatch: " + shape_str(preds.shape()) + " vs " +
                                shape_str(labels.shape()));
  }
  const std::int64_t n = preds.size();
  if (n < 1) throw std::invalid_argument("rmse_loss on empty batch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = preds.values()[static_cast<std::size_t>(i)] - labels.values()[static_cast<std::size_t>(i)];
    acc += d * d;
  }
  const double loss = std::sqrt(acc / static_cast<double>(n));
  Tensor out = Tensor::scalar(loss);
  if (want_grad(tape, {&preds, &labels})) {
    out.set_tracked(true);
    Tensor p_c = preds, l_c = labels, out_c = out;
    tape->record([p_c, l_c, out_c, n]() mutable {
      if (!out_c.has_grad()) return;
      const double g = out_c.grad()[0];
      const double loss = out_c.values()[0];
      if (loss == 0.0) return;  // subgradient 0 at exactly zero error
      const double k = g / (static_cast<double>(n) * loss);
      for (std::int64_t i = 0; i < n; ++i) {
        const double d = p_c.values()[static_cast<std::size_t>(i)] - l_c.values()[static_cast<std::size_t>(i)];
        if (p_c.tracked()) p_c.grad()[static_cast<std::size_t>(i)] += k * d;
        if (l_c.tracked()) l_c.grad()[static_cast<std::size_t>(i)] -= k * d;
      }
    });
  }
  return out;
}

}  // namespace gprodom::nn
