#include "patchda/nn.hpp"

#include <cmath>

#include "patchda/error.hpp"

namespace patchda::nn {

namespace {

Tensor uniform_tensor(Shape shape, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

// He-uniform weights for ReLU nets; bias bound 1/sqrt(fan_in).
Linear::Linear(int in_features, int out_features, std::mt19937_64& rng) {
  if (in_features < 1 || out_features < 1) throw InvalidConfig("linear layer needs positive dims");
  const float fan_in = static_cast<float>(in_features);
  weight_ = uniform_tensor({out_features, in_features}, std::sqrt(6.0f / fan_in), rng);
  bias_ = uniform_tensor({out_features}, 1.0f / std::sqrt(fan_in), rng);
}

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad,
               std::mt19937_64& rng)
    : stride_(stride), pad_(pad) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1)
    throw InvalidConfig("conv layer needs positive dims");
  const float fan_in = static_cast<float>(in_channels * kernel * kernel);
  weight_ = uniform_tensor({out_channels, in_channels, kernel, kernel}, std::sqrt(6.0f / fan_in), rng);
  bias_ = uniform_tensor({out_channels}, 1.0f / std::sqrt(fan_in), rng);
}

void Conv2d::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

void Mlp::collect(const std::string& prefix, NamedTensors& out) const {
  first_.collect(prefix + ".0", out);
  second_.collect(prefix + ".1", out);
}

ConvStack::ConvStack(int in_channels, const std::vector<int>& widths,
                     const std::vector<int>& strides, std::mt19937_64& rng) {
  if (widths.empty() || widths.size() != strides.size())
    throw InvalidConfig("conv stack needs one stride per layer");
  int c = in_channels;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    layers_.emplace_back(c, widths[i], 3, strides[i], 1, rng);
    c = widths[i];
  }
}

Tensor ConvStack::operator()(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = ops::relu(layer(h));
  return h;
}

void ConvStack::collect(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i].collect(prefix + "." + std::to_string(i), out);
}

std::size_t parameter_count(const NamedTensors& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

void set_requires_grad(const NamedTensors& params, bool on) {
  for (const auto& [name, t] : params) {
    t.node()->requires_grad = on;
    if (!on) t.node()->grad.clear();
  }
}

}  // namespace patchda::nn
