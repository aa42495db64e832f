#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "gprodom/checkpoint.hpp"
#include "gprodom/ops.hpp"
#include "gprodom/optim.hpp"
#include "gprodom/params.hpp"
#include "gprodom/tensor.hpp"
#include "testutil.hpp"

using namespace gprodom;
using nn::Tape;
using nn::Tensor;

namespace {

// direct-summation cross-correlation, independent of the im2col path
Tensor conv2d_oracle(const Tensor& x, const Tensor& k, const Tensor& bias, int sh, int sw, int ph,
                     int pw) {
  const int n = x.extent(0), ci = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int co = k.extent(0), kh = k.extent(2), kw = k.extent(3);
  const int ho = (h + 2 * ph - kh) / sh + 1;
  const int wo = (w + 2 * pw - kw) / sw + 1;
  Tensor out = Tensor::zeros({n, co, ho, wo});
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < co; ++o) {
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) {
          double acc = bias.defined() ? bias.values()[o] : 0.0;
          for (int c = 0; c < ci; ++c) {
            for (int u = 0; u < kh; ++u) {
              for (int v = 0; v < kw; ++v) {
                const int hi = i * sh + u - ph, wi = j * sw + v - pw;
                if (hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
                acc += x.values()[((b * ci + c) * h + hi) * w + wi] *
                       k.values()[((o * ci + c) * kh + u) * kw + v];
              }
            }
          }
          out.values()[((b * co + o) * ho + i) * wo + j] = acc;
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("conv2d basics") {
  Tensor ones_in = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor ones_k = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor out = nn::conv2d(ones_in, ones_k, {}, {1, 1, 0, 0});
  CHECK(out.shape() == nn::Shape{1, 1, 1, 1});
  CHECK(out.item() == doctest::Approx(4.0).epsilon(1e-15));

  std::mt19937_64 rng(7);
  Tensor x = testutil::random_tensor({2, 3, 5, 4}, rng);
  Tensor ident = Tensor::full({3, 3, 1, 1}, 0.0);
  for (int c = 0; c < 3; ++c) ident.values()[c * 3 + c] = 1.0;
  Tensor same = nn::conv2d(x, ident, {}, {1, 1, 0, 0});
  for (std::size_t i = 0; i < x.values().size(); ++i) CHECK(same.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d matches the direct-summation oracle") {
  std::mt19937_64 rng(11);
  Tensor x = testutil::random_tensor({1, 2, 5, 5}, rng);
  Tensor k = testutil::random_tensor({3, 2, 3, 3}, rng);
  Tensor got = nn::conv2d(x, k, {}, {1, 1, 0, 0});
  Tensor want = conv2d_oracle(x, k, {}, 1, 1, 0, 0);
  REQUIRE(got.shape() == want.shape());
  for (std::size_t i = 0; i < got.values().size(); ++i) {
    CHECK(testutil::rel_err(got.values()[i], want.values()[i], 1e-9) <= 1e-12);
  }

  // strided, padded, biased case
  Tensor b = testutil::random_tensor({4}, rng);
  Tensor x2 = testutil::random_tensor({2, 3, 7, 6}, rng);
  Tensor k2 = testutil::random_tensor({4, 3, 3, 3}, rng);
  Tensor got2 = nn::conv2d(x2, k2, b, {2, 2, 1, 1});
  Tensor want2 = conv2d_oracle(x2, k2, b, 2, 2, 1, 1);
  REQUIRE(got2.shape() == want2.shape());
  for (std::size_t i = 0; i < got2.values().size(); ++i) {
    CHECK(testutil::rel_err(got2.values()[i], want2.values()[i], 1e-9) <= 1e-12);
  }
}

TEST_CASE("conv2d is linear in its input") {
  std::mt19937_64 rng(13);
  Tensor k = testutil::random_tensor({2, 2, 3, 3}, rng);
  Tensor x = testutil::random_tensor({1, 2, 6, 6}, rng);
  Tensor y = testutil::random_tensor({1, 2, 6, 6}, rng);
  const double a = 1.7, c = -0.4;
  Tensor combo = nn::add(nn::scale(x, a), nn::scale(y, c));
  Tensor lhs = nn::conv2d(combo, k, {}, {1, 1, 1, 1});
  Tensor rhs = nn::add(nn::scale(nn::conv2d(x, k, {}, {1, 1, 1, 1}), a),
                       nn::scale(nn::conv2d(y, k, {}, {1, 1, 1, 1}), c));
  for (std::size_t i = 0; i < lhs.values().size(); ++i) {
    CHECK(testutil::rel_err(lhs.values()[i], rhs.values()[i], 1e-6) <= 1e-10);
  }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor k = Tensor::zeros({1, 3, 3, 3});
  CHECK_THROWS_WITH_AS(nn::conv2d(x, k, {}, {1, 1, 0, 0}),
                       doctest::Contains("channel mismatch"), std::invalid_argument);
  Tensor huge = Tensor::zeros({1, 2, 9, 9, });
  CHECK_THROWS_AS(nn::conv2d(x, Tensor::zeros({1, 2, 6, 6}), {}, {1, 1, 0, 0}),
                  std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937_64 rng(17);
  Tensor x = testutil::random_tensor({2, 2, 5, 5}, rng, true);
  Tensor k = testutil::random_tensor({3, 2, 3, 3}, rng, true);
  Tensor b = testutil::random_tensor({3}, rng, true);
  Tensor labels = testutil::random_tensor({2 * 3 * 2 * 2}, rng);
  auto forward = [&](Tape* tape) {
    Tensor y = nn::conv2d(x, k, b, {2, 2, 1, 1}, tape);
    return nn::rmse_loss(nn::reshape(y, {static_cast<int>(y.size())}, tape), labels, tape);
  };
  auto res = testutil::check_gradients(forward, {x, k, b}, 12, 23);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("batch_norm normalizes per channel in train mode") {
  std::mt19937_64 rng(19);
  Tensor x = testutil::random_tensor({4, 3, 5, 5}, rng, false, -2.0, 3.0);
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta = Tensor::zeros({3});
  Tensor rm = Tensor::zeros({3});
  Tensor rv = Tensor::full({3}, 1.0);
  Tensor y = nn::batch_norm(x, gamma, beta, rm, rv, 1e-12, 0.1, true);
  const std::int64_t sp = 25, m = 4 * sp;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int n = 0; n < 4; ++n) {
      for (int i = 0; i < sp; ++i) mean += y.values()[(n * 3 + c) * sp + i];
    }
    mean /= static_cast<double>(m);
    for (int n = 0; n < 4; ++n) {
      for (int i = 0; i < sp; ++i) {
        const double d = y.values()[(n * 3 + c) * sp + i] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(m);
    CHECK(std::abs(mean) < 1e-8);
    CHECK(std::abs(var - 1.0) < 1e-8);
  }
}

TEST_CASE("batch_norm collapses constant channels to beta") {
  Tensor x = Tensor::full({2, 1, 3, 3}, 5.0);
  Tensor gamma = Tensor::full({1}, 2.0);
  Tensor beta = Tensor::full({1}, -0.7);
  Tensor rm = Tensor::zeros({1});
  Tensor rv = Tensor::full({1}, 1.0);
  Tensor y = nn::batch_norm(x, gamma, beta, rm, rv, 1e-5, 0.1, true);
  for (double v : y.values()) CHECK(v == doctest::Approx(-0.7).epsilon(1e-12));
}

TEST_CASE("batch_norm matches the explicit formula oracle") {
  std::mt19937_64 rng(29);
  Tensor x = testutil::random_tensor({3, 2, 4, 4}, rng, false, -1.0, 4.0);
  Tensor gamma = testutil::random_tensor({2}, rng, false, 0.5, 2.0);
  Tensor beta = testutil::random_tensor({2}, rng);
  Tensor rm = Tensor::zeros({2});
  Tensor rv = Tensor::full({2}, 1.0);
  const double eps = 1e-5;
  Tensor y = nn::batch_norm(x, gamma, beta, rm, rv, eps, 0.1, true);
  const std::int64_t sp = 16;
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (int n = 0; n < 3; ++n) {
      for (int i = 0; i < sp; ++i) mean += x.values()[(n * 2 + c) * sp + i];
    }
    mean /= 48.0;
    double var = 0.0;
    for (int n = 0; n < 3; ++n) {
      for (int i = 0; i < sp; ++i) {
        const double d = x.values()[(n * 2 + c) * sp + i] - mean;
        var += d * d;
      }
    }
    var /= 48.0;
    for (int n = 0; n < 3; ++n) {
      for (int i = 0; i < sp; ++i) {
        const double want =
            gamma.values()[c] * (x.values()[(n * 2 + c) * sp + i] - mean) / std::sqrt(var + eps) +
            beta.values()[c];
        CHECK(testutil::rel_err(y.values()[(n * 2 + c) * sp + i], want, 1e-9) <= 1e-10);
      }
    }
    // running stats moved toward the batch statistics
    CHECK(rm.values()[c] == doctest::Approx(0.1 * mean).epsilon(1e-10));
  }
  CHECK_THROWS_AS(nn::batch_norm(x, gamma, beta, rm, rv, 0.0, 0.1, true), std::invalid_argument);
}

TEST_CASE("batch_norm gradients, train and eval") {
  std::mt19937_64 rng(31);
  Tensor x = testutil::random_tensor({3, 2, 3, 3}, rng, true);
  Tensor gamma = testutil::random_tensor({2}, rng, true, 0.5, 1.5);
  Tensor beta = testutil::random_tensor({2}, rng, true);
  Tensor rm = testutil::random_tensor({2}, rng);
  Tensor rv = testutil::random_tensor({2}, rng, false, 0.5, 2.0);
  Tensor labels = testutil::random_tensor({3 * 2 * 9}, rng);
  for (bool training : {true, false}) {
    auto forward = [&](Tape* tape) {
      Tensor y = nn::batch_norm(x, gamma, beta, rm, rv, 1e-5, 0.1, training, tape);
      return nn::rmse_loss(nn::reshape(y, {static_cast<int>(y.size())}, tape), labels, tape);
    };
    auto res = testutil::check_gradients(forward, {x, gamma, beta}, 10, 37);
    CHECK(res.max_rel_err <= 1e-4);
  }
}

TEST_CASE("relu and sigmoid") {
  Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});
  Tensor r = nn::relu(x);
  CHECK(r.values() == std::vector<double>{0.0, 0.0, 2.0});
  CHECK(nn::sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-15));

  // gradient of sigmoid at 0 is 1/4
  Tensor z = Tensor::scalar(0.0, true);
  Tape tape;
  Tensor y = nn::sigmoid(z, &tape);
  tape.backward(y);
  CHECK(z.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
  const double h = 1e-6;
  const double fd = (1.0 / (1.0 + std::exp(-h)) - 1.0 / (1.0 + std::exp(h))) / (2.0 * h);
  CHECK(std::abs(z.grad()[0] - fd) <= 1e-6);
}

TEST_CASE("linear layer") {
  std::mt19937_64 rng(41);
  Tensor ident = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) ident.values()[i * 3 + i] = 1.0;
  Tensor x = testutil::random_tensor({2, 3}, rng);
  Tensor same = nn::linear(x, ident, Tensor::zeros({3}));
  for (std::size_t i = 0; i < x.values().size(); ++i) CHECK(same.values()[i] == x.values()[i]);

  Tensor bias = testutil::random_tensor({4}, rng);
  Tensor zero_in = Tensor::zeros({2, 3});
  Tensor w = testutil::random_tensor({4, 3}, rng);
  Tensor out = nn::linear(zero_in, w, bias);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(out.values()[r * 4 + c] == bias.values()[c]);
  }

  // dot-product oracle
  Tensor xr = testutil::random_tensor({3, 5}, rng);
  Tensor wr = testutil::random_tensor({2, 5}, rng);
  Tensor br = testutil::random_tensor({2}, rng);
  Tensor got = nn::linear(xr, wr, br);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 2; ++c) {
      double want = br.values()[c];
      for (int f = 0; f < 5; ++f) want += xr.values()[r * 5 + f] * wr.values()[c * 5 + f];
      CHECK(testutil::rel_err(got.values()[r * 2 + c], want, 1e-9) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(nn::linear(xr, Tensor::zeros({2, 4}), {}), std::invalid_argument);

  Tensor xg = testutil::random_tensor({2, 4}, rng, true);
  Tensor wg = testutil::random_tensor({3, 4}, rng, true);
  Tensor bg = testutil::random_tensor({3}, rng, true);
  Tensor labels = testutil::random_tensor({6}, rng);
  auto forward = [&](Tape* tape) {
    Tensor y = nn::linear(xg, wg, bg, tape);
    return nn::rmse_loss(nn::reshape(y, {6}, tape), labels, tape);
  };
  CHECK(testutil::check_gradients(forward, {xg, wg, bg}, 12, 43).max_rel_err <= 1e-4);
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(47);
  Tensor x = testutil::random_tensor({4, 5}, rng);
  Tensor eval_out = nn::dropout(x, 0.7, false, nullptr);
  CHECK(eval_out.values() == x.values());
  Tensor p0 = nn::dropout(x, 0.0, true, &rng);
  CHECK(p0.values() == x.values());

  Tensor ones = Tensor::full({100000}, 1.0);
  std::mt19937_64 drop_rng(1234);
  Tensor dropped = nn::dropout(ones, 0.5, true, &drop_rng);
  double mean = 0.0;
  for (double v : dropped.values()) mean += v;
  mean /= 1e5;
  CHECK(std::abs(mean - 1.0) < 0.01);

  CHECK_THROWS_AS(nn::dropout(x, 1.0, true, &rng), std::invalid_argument);
  CHECK_THROWS_AS(nn::dropout(x, 0.5, true, nullptr), std::invalid_argument);

  // same seed, same mask
  std::mt19937_64 a(99), b(99);
  Tensor da = nn::dropout(ones, 0.3, true, &a);
  Tensor db = nn::dropout(ones, 0.3, true, &b);
  CHECK(da.values() == db.values());

  // gradient equals the applied mask
  Tensor xg = Tensor::full({50}, 1.0, true);
  std::mt19937_64 g(5);
  Tape tape;
  Tensor y = nn::dropout(xg, 0.4, true, &g, &tape);
  Tensor loss = nn::rmse_loss(y, Tensor::zeros({50}), &tape);
  tape.backward(loss);
  for (std::size_t i = 0; i < 50; ++i) {
    if (y.values()[i] == 0.0) CHECK(xg.grad()[i] == 0.0);
  }
}

TEST_CASE("pooling") {
  Tensor c = Tensor::full({1, 2, 3, 3}, 2.5);
  Tensor g = nn::global_avg_pool(c);
  CHECK(g.shape() == nn::Shape{1, 2, 1, 1});
  CHECK(g.values()[0] == doctest::Approx(2.5).epsilon(1e-15));

  Tensor m = Tensor::from_data({1, 1, 2, 2}, {1.0, 3.0, 5.0, 7.0});
  CHECK(nn::global_avg_pool(m).item() == doctest::Approx(4.0).epsilon(1e-15));

  std::mt19937_64 rng(53);
  Tensor x = testutil::random_tensor({2, 3, 6, 6}, rng);
  Tensor mp = nn::max_pool(x, 2, 2);
  for (int n = 0; n < 2; ++n) {
    for (int ch = 0; ch < 3; ++ch) {
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          double best = -1e300;
          for (int u = 0; u < 2; ++u) {
            for (int v = 0; v < 2; ++v) {
              best = std::max(best, x.values()[((n * 3 + ch) * 6 + 2 * i + u) * 6 + 2 * j + v]);
            }
          }
          CHECK(mp.values()[((n * 3 + ch) * 3 + i) * 3 + j] == best);
        }
      }
    }
  }
  CHECK_THROWS_AS(nn::max_pool(x, 7, 1), std::invalid_argument);

  Tensor xg = testutil::random_tensor({1, 2, 4, 4}, rng, true);
  Tensor labels = testutil::random_tensor({2 * 4}, rng);
  for (auto kind : {nn::PoolKind::kMax, nn::PoolKind::kAvg}) {
    auto forward = [&](Tape* tape) {
      Tensor y = nn::pool(xg, kind, 2, 2, 2, 2, tape);
      return nn::rmse_loss(nn::reshape(y, {static_cast<int>(y.size())}, tape), labels, tape);
    };
    CHECK(testutil::check_gradients(forward, {xg}, 16, 59).max_rel_err <= 1e-4);
  }
}

TEST_CASE("elementwise ops, concat and broadcasting") {
  std::mt19937_64 rng(61);
  Tensor x = testutil::random_tensor({2, 6}, rng);
  Tensor zero = nn::abs_diff(x, x);
  for (double v : zero.values()) CHECK(v == 0.0);

  Tensor a = testutil::random_tensor({1, 8}, rng);
  Tensor b = testutil::random_tensor({1, 4}, rng);
  const Tensor parts[] = {a, b};
  Tensor cat = nn::concat(parts, 1);
  CHECK(cat.shape() == nn::Shape{1, 12});
  CHECK(cat.values()[3] == a.values()[3]);
  CHECK(cat.values()[9] == b.values()[1]);

  Tensor full = testutil::random_tensor({1, 3, 4, 4}, rng);
  Tensor gate_c = testutil::random_tensor({1, 3, 1, 1}, rng);
  Tensor got = nn::mul_bcast(full, gate_c);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 16; ++i) {
      CHECK(got.values()[c * 16 + i] == full.values()[c * 16 + i] * gate_c.values()[c]);
    }
  }
  Tensor gate_s = testutil::random_tensor({1, 1, 4, 4}, rng);
  Tensor got_s = nn::mul_bcast(full, gate_s);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 16; ++i) {
      CHECK(got_s.values()[c * 16 + i] == full.values()[c * 16 + i] * gate_s.values()[i]);
    }
  }
  CHECK_THROWS_AS(nn::add(x, a), std::invalid_argument);
  CHECK_THROWS_AS(nn::mul_bcast(full, testutil::random_tensor({1, 2, 1, 1}, rng)),
                  std::invalid_argument);

  Tensor xg = testutil::random_tensor({1, 2, 3, 3}, rng, true);
  Tensor gg = testutil::random_tensor({1, 2, 1, 1}, rng, true);
  Tensor labels = testutil::random_tensor({18}, rng);
  auto forward = [&](Tape* tape) {
    Tensor y = nn::mul_bcast(xg, gg, tape);
    return nn::rmse_loss(nn::reshape(y, {18}, tape), labels, tape);
  };
  CHECK(testutil::check_gradients(forward, {xg, gg}, 12, 67).max_rel_err <= 1e-4);
}

TEST_CASE("tape seeds the loss and accumulates over shared consumers") {
  // z = x*x + 3x at x=2 -> dz/dx = 2x + 3 = 7
  Tensor x = Tensor::scalar(2.0, true);
  Tape tape;
  Tensor z = nn::add(nn::mul(x, x, &tape), nn::scale(x, 3.0, &tape), &tape);
  tape.backward(z);
  CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-14));

  // loss = x^2 at x=3 -> 6
  Tensor x3 = Tensor::scalar(3.0, true);
  Tape t2;
  Tensor l = nn::mul(x3, x3, &t2);
  t2.backward(l);
  CHECK(x3.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));

  // gradient of an unused parameter stays zero
  Tensor unused = Tensor::scalar(1.0, true);
  CHECK_FALSE(unused.has_grad());

  // non-scalar loss and empty tape are rejected
  Tape t3;
  Tensor vec = Tensor::zeros({3}, true);
  CHECK_THROWS_AS(t3.backward(vec), std::runtime_error);
  Tensor tracked_vec = nn::scale(vec, 2.0, &t3);
  CHECK_THROWS_AS(t3.backward(tracked_vec), std::invalid_argument);
}

TEST_CASE("rmse loss") {
  Tensor p = Tensor::from_data({2}, {1.0, 2.0});
  Tensor l = Tensor::from_data({2}, {3.0, 2.0});
  CHECK(nn::rmse_loss(p, l).item() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(nn::rmse_loss(p, p).item() == 0.0);
  CHECK(nn::rmse_loss(Tensor::scalar(2.0), Tensor::scalar(3.5)).item() ==
        doctest::Approx(1.5).epsilon(1e-12));

  // subgradient at zero error is zero
  Tensor pz = Tensor::from_data({2}, {1.0, 1.0}, true);
  Tape tape;
  Tensor loss = nn::rmse_loss(pz, Tensor::from_data({2}, {1.0, 1.0}), &tape);
  tape.backward(loss);
  CHECK(pz.grad() == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(nn::rmse_loss(p, Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("optimizers") {
  std::mt19937_64 rng(1);
  nn::ParamStore store;
  Tensor w = store.create("w", {1}, "zeros", 0, rng);
  w.values()[0] = 1.0;
  nn::Optimizer sgd(store, {.kind = "sgd", .lr = 0.1});
  w.grad()[0] = 2.0;
  sgd.step();
  CHECK(w.values()[0] == doctest::Approx(0.8).epsilon(1e-14));

  nn::ParamStore store2;
  Tensor w2 = store2.create("w", {1}, "zeros", 0, rng);
  nn::Optimizer adam(store2, {.kind = "adam", .lr = 1e-3});
  w2.grad()[0] = 0.37;
  adam.step();
  CHECK(std::abs(std::abs(w2.values()[0]) - 1e-3) < 1e-7);  // bias-corrected first step ~ lr

  // 200 adam steps on (w-3)^2 from w=0
  nn::ParamStore store3;
  Tensor w3 = store3.create("w", {1}, "zeros", 0, rng);
  nn::Optimizer adam2(store3, {.kind = "adam", .lr = 0.1});
  for (int i = 0; i < 200; ++i) {
    w3.zero_grad();
    w3.grad()[0] = 2.0 * (w3.values()[0] - 3.0);
    adam2.step();
  }
  CHECK(std::abs(w3.values()[0] - 3.0) < 0.05);

  CHECK_THROWS_AS(nn::Optimizer(store, {.kind = "sgd", .lr = 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(nn::Optimizer(store, {.kind = "rmsprop"}), std::invalid_argument);
}

TEST_CASE("checkpoint container round-trips exactly") {
  std::mt19937_64 rng(71);
  nn::ParamStore store;
  store.create("conv.w", {2, 3, 3, 3}, "he", 27, rng);
  store.create("head.b", {5}, "zeros", 0, rng);
  store.create_buffer("bn.running_var", {4}, 1.0);
  store.at("head.b").values() = {0.1, -2.5e-17, 3e300, -0.0, 7.25};

  const std::string path = (std::filesystem::temp_directory_path() / "gprodom_ckpt_test.gpck").string();
  nn::save_checkpoint(path, store);

  // header bytes
  std::ifstream is(path, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  CHECK(std::string(magic, 8) == "GPRODOM1");

  nn::ParamStore reload;
  std::mt19937_64 rng2(999);
  reload.create("conv.w", {2, 3, 3, 3}, "zeros", 0, rng2);
  reload.create("head.b", {5}, "zeros", 0, rng2);
  reload.create_buffer("bn.running_var", {4}, 0.0);
  nn::load_checkpoint(path, reload);
  for (const auto& name : store.names()) {
    const auto& a = store.at(name).values();
    const auto& b = reload.at(name).values();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::memcmp(&a[i], &b[i], sizeof(double)) == 0);
    }
  }

  nn::ParamStore wrong;
  wrong.create("conv.w", {2, 3, 3, 3}, "zeros", 0, rng2);
  CHECK_THROWS_AS(nn::load_checkpoint(path, wrong), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("deterministic forward and backward") {
  auto run = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor x = testutil::random_tensor({2, 2, 8, 8}, rng, true);
    Tensor k = testutil::random_tensor({3, 2, 3, 3}, rng, true);
    Tape tape;
    Tensor y = nn::conv2d(x, k, {}, {1, 1, 1, 1}, &tape);
    Tensor s = nn::sigmoid(y, &tape);
    Tensor loss = nn::rmse_loss(nn::reshape(s, {static_cast<int>(s.size())}, &tape),
                                Tensor::zeros({static_cast<int>(s.size())}), &tape);
    tape.backward(loss);
    return std::make_pair(loss.item(), k.grad());
  };
  const auto a = run(12345);
  const auto b = run(12345);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
