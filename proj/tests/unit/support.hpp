#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "patchda/sampler.hpp"
#include "patchda/tensor.hpp"

namespace test {

// Sum of a few random low-frequency sinusoids per channel.
template <typename T>
patchda::sampler::BasicImageGrid<T> smooth_image(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(static_cast<std::size_t>(c) * h * w);
  for (int ch = 0; ch < c; ++ch) {
    const double a = u(rng), b = u(rng), fx = 0.3 + 0.2 * u(rng), fy = 0.3 + 0.2 * u(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        v[(static_cast<std::size_t>(ch) * h + y) * w + x] =
            static_cast<T>(a * std::sin(fx * x + b) + b * std::cos(fy * y - a) + 0.3 * std::sin(0.2 * x * y / h));
  }
  return patchda::sampler::BasicImageGrid<T>(c, h, w, std::move(v));
}

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline patchda::Tensor random_tensor(patchda::Shape shape, std::uint64_t seed, bool requires_grad = true,
                                     float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(patchda::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return patchda::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Max relative error between the tape vector-Jacobian product of `f` at x
// (random upstream u) and central differences of <u, f(x)>, over `probes`
// entries of x.
inline double grad_check(patchda::Tensor x, const std::function<patchda::Tensor()>& f, int probes = 12,
                         float h = 1e-2f, std::uint64_t seed = 99) {
  x.zero_grad();
  const patchda::Tensor y = f();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> up(y.numel());
  for (auto& v : up) v = u(rng);
  y.backward(up);
  const std::vector<float> analytic(x.grad().begin(), x.grad().end());
  const auto dot = [&]() {
    patchda::NoGradGuard guard;
    const patchda::Tensor out = f();
    const auto v = out.values();
    double acc = 0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += double(up[i]) * v[i];
    return acc;
  };
  double worst = 0;
  const std::size_t n = x.numel();
  for (int k = 0; k < probes && k < static_cast<int>(n); ++k) {
    const std::size_t i = (k * 7919u) % n;
    const float keep = x.values()[i];
    x.mutable_values()[i] = keep + h;
    const double plus = dot();
    x.mutable_values()[i] = keep - h;
    const double minus = dot();
    x.mutable_values()[i] = keep;
    const double numeric = (plus - minus) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max({std::abs(double(analytic[i])), std::abs(numeric), 1e-2});
    worst = std::max(worst, err);
  }
  return worst;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("patchda_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test
