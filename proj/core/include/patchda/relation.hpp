#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "patchda/nn.hpp"

// Shared-space embedding and the multi-scale temporal relation module.
namespace patchda::relation {

struct SharedSequence {
  Tensor z;  // [clips * segments, feat_dim]
  int clips = 0;
  int segments = 0;
};

class SharedEmbedding {
 public:
  SharedEmbedding() = default;
  SharedEmbedding(int input_dim, int feat_dim, std::mt19937_64& rng) : layer_(input_dim, feat_dim, rng) {}

  // Affine map + ReLU per segment.
  SharedSequence operator()(const Tensor& e, int clips, int segments) const;

  int input_dim() const { return layer_.in_features(); }
  int feat_dim() const { return layer_.out_features(); }
  void collect(const std::string& prefix, nn::NamedTensors& out) const { layer_.collect(prefix, out); }

 private:
  nn::Linear layer_;
};

using Tuple = std::vector<int>;

// All strictly increasing n-tuples of {0..T-1} in lexicographic order when
// there are at most `cap` of them; otherwise `cap` distinct tuples drawn
// uniformly with a generator seeded by `seed`, returned in lexicographic order.
std::vector<Tuple> enumerate_ordered_subsets(int frames, int n, int cap, std::uint64_t seed);

std::uint64_t binomial(int n, int k);

struct RelationSet {
  std::map<int, Tensor> r;            // scale n -> [clips, feat_dim]
  std::map<int, int> subset_counts;   // scale n -> tuples averaged
  int clips = 0;
};

class TemporalRelation {
 public:
  TemporalRelation() = default;
  TemporalRelation(int segments, int feat_dim, int hidden, std::mt19937_64& rng);

  // r^n = mean over tuples of g_n(concat of z rows at the tuple indices).
  RelationSet operator()(const SharedSequence& z, int cap, std::uint64_t seed) const;

  int segments() const { return segments_; }
  std::vector<int> scales() const;
  void collect(const std::string& prefix, nn::NamedTensors& out) const;

 private:
  int segments_ = 0;
  int feat_dim_ = 0;
  std::map<int, nn::Mlp> g_;
};

// Element-wise sum over scales; the scale set must equal the relation set's.
Tensor aggregate_video(const std::map<int, Tensor>& attended, const RelationSet& reference);

}  // namespace patchda::relation
