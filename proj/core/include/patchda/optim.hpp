#pragma once

#include <string>
#include <vector>

#include "patchda/tensor.hpp"

namespace patchda {

// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
//   v <- mu * v + (g + wd * w);  w <- w - lr * v
class Sgd {
 public:
  struct Group {
    std::string name;
    std::vector<Tensor> params;
    float lr = 0.0f;
  };

  Sgd(std::vector<Group> groups, float momentum, float weight_decay);

  void zero_grad();
  void step();

  void set_lr(const std::string& group, float lr);
  void scale_all_lr(float base_multiplier);
  float lr(const std::string& group) const;
  const std::vector<Group>& groups() const { return groups_; }

 private:
  Group& find(const std::string& name);
  const Group& find(const std::string& name) const;

  std::vector<Group> groups_;
  std::vector<float> base_lr_;
  std::vector<std::vector<std::vector<float>>> velocity_;
  float momentum_;
  float weight_decay_;
};

// Step decay: base * factor^(number of milestones already passed). Epochs are
// 1-based, so milestone m takes effect from epoch m + 1.
float step_decay_lr(float base, float factor, const std::vector<int>& milestones, int epoch);

// Adversarial warm-up coefficient 2 / (1 + exp(-10 p)) - 1 for progress p in [0,1].
float grl_warmup(float progress);

}  // namespace patchda
