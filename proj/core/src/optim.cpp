#include "patchda/optim.hpp"

#include <algorithm>
#include <cmath>

#include "patchda/error.hpp"

namespace patchda {

Sgd::Sgd(std::vector<Group> groups, float momentum, float weight_decay)
    : groups_(std::move(groups)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& g : groups_) {
    base_lr_.push_back(g.lr);
    auto& vel = velocity_.emplace_back();
    for (const auto& p : g.params) vel.emplace_back(p.numel(), 0.0f);
  }
}

void Sgd::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p.zero_grad();
}

void Sgd::step() {
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& group = groups_[gi];
    for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
      Tensor& p = group.params[pi];
      if (!p.requires_grad()) continue;
      auto w = p.mutable_values();
      const auto g = p.grad();
      auto& v = velocity_[gi][pi];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const float grad = (g.empty() ? 0.0f : g[i]) + weight_decay_ * w[i];
        v[i] = momentum_ * v[i] + grad;
        w[i] -= group.lr * v[i];
      }
    }
  }
}

Sgd::Group& Sgd::find(const std::string& name) {
  auto it = std::find_if(groups_.begin(), groups_.end(), [&](const Group& g) { return g.name == name; });
  if (it == groups_.end()) throw InvalidInput("unknown parameter group " + name);
  return *it;
}

const Sgd::Group& Sgd::find(const std::string& name) const {
  auto it = std::find_if(groups_.begin(), groups_.end(), [&](const Group& g) { return g.name == name; });
  if (it == groups_.end()) throw InvalidInput("unknown parameter group " + name);
  return *it;
}

void Sgd::set_lr(const std::string& group, float lr) { find(group).lr = lr; }

void Sgd::scale_all_lr(float base_multiplier) {
  for (std::size_t i = 0; i < groups_.size(); ++i) groups_[i].lr = base_lr_[i] * base_multiplier;
}

float Sgd::lr(const std::string& group) const { return find(group).lr; }

float step_decay_lr(float base, float factor, const std::vector<int>& milestones, int epoch) {
  float lr = base;
  for (int m : milestones)
    if (epoch > m) lr *= factor;
  return lr;
}

float grl_warmup(float progress) {
  const float p = std::clamp(progress, 0.0f, 1.0f);
  return 2.0f / (1.0f + std::exp(-10.0f * p)) - 1.0f;
}

}  // namespace patchda
