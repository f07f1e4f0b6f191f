#include <cmath>
#include <numbers>

#include <doctest.h>

#include "patchda/error.hpp"
#include "patchda/nn.hpp"
#include "patchda/ops.hpp"
#include "patchda/optim.hpp"
#include "support.hpp"

using namespace patchda;

TEST_CASE("tape gradients of dense ops") {
  const Tensor x = test::random_tensor({4, 5}, 1);
  const Tensor w = test::random_tensor({3, 5}, 2);
  const Tensor b = test::random_tensor({3}, 3);
  CHECK(test::grad_check(x, [&] { return ops::linear(x, w, b); }) < 1e-2);
  CHECK(test::grad_check(w, [&] { return ops::linear(x, w, b); }) < 1e-2);
  CHECK(test::grad_check(b, [&] { return ops::linear(x, w, b); }) < 1e-2);

  const Tensor m = test::random_tensor({5, 2}, 4);
  CHECK(test::grad_check(x, [&] { return ops::matmul(x, m); }) < 1e-2);
  CHECK(test::grad_check(m, [&] { return ops::matmul(x, m); }) < 1e-2);
}

TEST_CASE("tape gradients of shape ops") {
  const Tensor a = test::random_tensor({4, 3}, 5);
  const Tensor b = test::random_tensor({4, 2}, 6);
  const std::vector<Tensor> cols{a, b};
  CHECK(test::grad_check(b, [&] { return ops::concat_cols(cols); }) < 1e-2);
  const Tensor c = test::random_tensor({2, 3}, 7);
  const std::vector<Tensor> rows{a, c};
  CHECK(test::grad_check(c, [&] { return ops::concat_rows(rows); }) < 1e-2);
  CHECK(test::grad_check(a, [&] { return ops::slice_cols(a, 1, 2); }) < 1e-2);
  const std::vector<int> idx{3, 0, 3};
  CHECK(test::grad_check(a, [&] { return ops::gather_rows(a, idx); }) < 1e-2);
  CHECK(test::grad_check(a, [&] { return ops::mean_row_groups(a, 2); }) < 1e-2);
  const std::vector<float> f{0.5f, 2.0f, -1.0f, 3.0f};
  CHECK(test::grad_check(a, [&] { return ops::scale_rows(a, f); }) < 1e-2);
  const std::vector<Tensor> same{a, a, a};
  CHECK(test::grad_check(a, [&] { return ops::add_n(same); }) < 1e-2);
}

TEST_CASE("tape gradients of convolution and pooling") {
  const Tensor x = test::random_tensor({2, 3, 7, 6}, 8);
  const Tensor w = test::random_tensor({4, 3, 3, 3}, 9);
  const Tensor b = test::random_tensor({4}, 10);
  for (int stride : {1, 2}) {
    CHECK(test::grad_check(x, [&] { return ops::conv2d(x, w, b, stride, 1); }, 20) < 1e-2);
    CHECK(test::grad_check(w, [&] { return ops::conv2d(x, w, b, stride, 1); }, 20) < 1e-2);
    CHECK(test::grad_check(b, [&] { return ops::conv2d(x, w, b, stride, 1); }) < 1e-2);
  }
  CHECK(test::grad_check(x, [&] { return ops::global_avg_pool(x); }) < 1e-2);
}

TEST_CASE("conv2d matches a direct loop") {
  const Tensor x = test::random_tensor({1, 2, 5, 5}, 11, false);
  const Tensor w = test::random_tensor({3, 2, 3, 3}, 12, false);
  const Tensor b = test::random_tensor({3}, 13, false);
  const Tensor y = ops::conv2d(x, w, b, 2, 1);
  REQUIRE(y.shape() == Shape{1, 3, 3, 3});
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = b.values()[o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = 2 * i - 1 + ky, xx = 2 * j - 1 + kx;
              if (yy < 0 || yy >= 5 || xx < 0 || xx >= 5) continue;
              acc += double(w.values()[((o * 2 + c) * 3 + ky) * 3 + kx]) * x.values()[(c * 5 + yy) * 5 + xx];
            }
        CHECK(y.values()[(o * 3 + i) * 3 + j] == doctest::Approx(acc).epsilon(1e-5));
      }
}

TEST_CASE("relu and its gradient away from the kink") {
  Tensor x = test::random_tensor({3, 4}, 14);
  for (auto& v : x.mutable_values()) v = (v >= 0 ? 0.1f : -0.1f) + v;
  CHECK(test::grad_check(x, [&] { return ops::relu(x); }) < 1e-2);
  const auto y = ops::relu(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == std::max(0.0f, x.values()[i]));
}

TEST_CASE("cross entropy and entropy") {
  const Tensor logits = test::random_tensor({5, 4}, 15, true, -2.0f, 2.0f);
  const std::vector<int> labels{0, 3, -1, 2, 1};
  CHECK(test::grad_check(logits, [&] { return ops::cross_entropy(logits, labels); }) < 1e-2);
  const std::vector<float> weights{1.0f, 2.0f, 0.5f, 1.5f, 1.0f};
  CHECK(test::grad_check(logits, [&] { return ops::weighted_softmax_entropy(logits, weights); }) < 1e-2);

  const Tensor flat = Tensor::zeros({2, 4});
  const std::vector<int> both{1, 2};
  CHECK(ops::cross_entropy(flat, both).item() == doctest::Approx(std::log(4.0)));
  const std::vector<int> none{-1, -1};
  CHECK(ops::cross_entropy(flat, none).item() == 0.0f);
  const std::vector<int> bad{0, 4};
  CHECK_THROWS_AS(ops::cross_entropy(flat, bad), InvalidInput);

  const auto p = ops::softmax_rows(logits);
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int k = 0; k < 4; ++k) s += p[r * 4 + k];
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("gradient reversal") {
  Tensor x = test::random_tensor({3, 2}, 16);
  for (float lambda : {0.0f, 0.5f, 1.0f}) {
    const Tensor y = ops::gradient_reversal(x, lambda);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
    x.zero_grad();
    const std::vector<float> up{1, -2, 3, 0.5f, -0.25f, 4};
    y.backward(up);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == -lambda * up[i]);
  }
  CHECK_THROWS_AS(ops::gradient_reversal(x, -0.1f), InvalidInput);
}

TEST_CASE("no-grad guard keeps the tape empty") {
  const Tensor x = test::random_tensor({2, 2}, 17);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Tensor y = ops::relu(x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
  }
  CHECK(grad_enabled());
  CHECK(ops::relu(x).requires_grad());
}

TEST_CASE("gradients accumulate across uses of a tensor") {
  const Tensor x = Tensor::from({1}, {2.0f}, true);
  const std::vector<Tensor> terms{x, x, ops::scale(x, 3.0f)};
  ops::sum(ops::add_n(terms)).backward();
  CHECK(x.grad()[0] == doctest::Approx(5.0));
}

TEST_CASE("shape errors") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 3});
  CHECK_THROWS_AS(ops::add(a, b), InvalidInput);
  CHECK_THROWS_AS(ops::matmul(a, b), InvalidInput);
  CHECK_THROWS_AS(ops::reshape(a, {5}), InvalidInput);
  CHECK_THROWS_AS(Tensor::zeros({2}).backward(), InvalidInput);
}

TEST_CASE("sgd with momentum and weight decay") {
  Tensor w = Tensor::from({2}, {1.0f, -2.0f}, true);
  Sgd opt({{"w", {w}, 0.1f}}, 0.9f, 0.01f);
  std::vector<double> ref{1.0, -2.0}, vel{0.0, 0.0};
  for (int step = 0; step < 3; ++step) {
    opt.zero_grad();
    ops::sum(ops::scale(w, 2.0f)).backward();
    opt.step();
    for (int i = 0; i < 2; ++i) {
      vel[i] = 0.9 * vel[i] + 2.0 + 0.01 * ref[i];
      ref[i] -= 0.1 * vel[i];
      CHECK(w.values()[i] == doctest::Approx(ref[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Tensor w = test::random_tensor({4}, 18);
  const std::vector<float> before(w.values().begin(), w.values().end());
  Sgd opt({{"w", {w}, 0.0f}}, 0.9f, 5e-4f);
  for (int i = 0; i < 3; ++i) {
    opt.zero_grad();
    ops::sum(w).backward();
    opt.step();
  }
  for (int i = 0; i < 4; ++i) CHECK(w.values()[i] == before[i]);
}

TEST_CASE("step decay schedule") {
  const std::vector<int> milestones{10, 20};
  CHECK(step_decay_lr(3e-3f, 0.1f, milestones, 1) == doctest::Approx(3e-3));
  CHECK(step_decay_lr(3e-3f, 0.1f, milestones, 10) == doctest::Approx(3e-3));
  CHECK(step_decay_lr(3e-3f, 0.1f, milestones, 11) == doctest::Approx(3e-4));
  CHECK(step_decay_lr(3e-3f, 0.1f, milestones, 20) == doctest::Approx(3e-4));
  CHECK(step_decay_lr(3e-3f, 0.1f, milestones, 21) == doctest::Approx(3e-5));
  CHECK(grl_warmup(0.0f) == doctest::Approx(0.0));
  CHECK(grl_warmup(1.0f) == doctest::Approx(2.0 / (1.0 + std::exp(-10.0)) - 1.0));
  CHECK(grl_warmup(0.3f) < grl_warmup(0.6f));
}

TEST_CASE("layer initialization is seeded") {
  std::mt19937_64 a(5), b(5);
  const nn::Linear la(8, 4, a), lb(8, 4, b);
  for (std::size_t i = 0; i < la.weight().numel(); ++i) CHECK(la.weight().values()[i] == lb.weight().values()[i]);
  nn::NamedTensors params;
  la.collect("fc", params);
  CHECK(params.size() == 2);
  CHECK(nn::parameter_count(params) == 8 * 4 + 4);
}
