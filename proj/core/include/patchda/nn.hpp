#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "patchda/ops.hpp"
#include "patchda/tensor.hpp"

namespace patchda::nn {

using NamedTensor = std::pair<std::string, Tensor>;
using NamedTensors = std::vector<NamedTensor>;

class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight_, bias_); }

  int in_features() const { return weight_.dim(1); }
  int out_features() const { return weight_.dim(0); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  void collect(const std::string& prefix, NamedTensors& out) const;

 private:
  Tensor weight_;
  Tensor bias_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad,
         std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const {
    return ops::conv2d(x, weight_, bias_, stride_, pad_);
  }

  int in_channels() const { return weight_.dim(1); }
  int out_channels() const { return weight_.dim(0); }
  void collect(const std::string& prefix, NamedTensors& out) const;

 private:
  Tensor weight_;
  Tensor bias_;
  int stride_ = 1;
  int pad_ = 0;
};

// Linear -> ReLU -> Linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int in_features, int hidden, int out_features, std::mt19937_64& rng)
      : first_(in_features, hidden, rng), second_(hidden, out_features, rng) {}

  Tensor operator()(const Tensor& x) const { return second_(ops::relu(first_(x))); }

  int in_features() const { return first_.in_features(); }
  int out_features() const { return second_.out_features(); }
  void collect(const std::string& prefix, NamedTensors& out) const;

 private:
  Linear first_;
  Linear second_;
};

// Stack of 3x3 conv + ReLU blocks with configurable strides.
class ConvStack {
 public:
  ConvStack() = default;
  ConvStack(int in_channels, const std::vector<int>& widths, const std::vector<int>& strides,
            std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const;

  int in_channels() const { return layers_.front().in_channels(); }
  int out_channels() const { return layers_.back().out_channels(); }
  std::size_t depth() const { return layers_.size(); }
  void collect(const std::string& prefix, NamedTensors& out) const;

 private:
  std::vector<Conv2d> layers_;
};

std::size_t parameter_count(const NamedTensors& params);
void set_requires_grad(const NamedTensors& params, bool on);

}  // namespace patchda::nn
