#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "patchda/data.hpp"

namespace patchda {

struct TopK {
  double top1 = 0;  // percent
  double top5 = 0;
};

struct MetricsReport {
  std::string split;
  int clips = 0;
  TopK verb, noun, action;
  std::map<std::string, int> counts;  // per domain/split clip counts

  std::string to_json() const;
};

// Rank of `label` when classes are ordered by descending score, ties broken
// by lower index first. 0 is the best rank.
int rank_of(std::span<const float> scores, int label);

// verb_probs: clips x V, noun_probs: clips x N (row-major softmax outputs).
// Action top-k ranks all (verb, noun) pairs by p_v * p_n.
MetricsReport compute_metrics(std::span<const float> verb_probs, std::span<const float> noun_probs,
                              std::span<const data::Labels> labels, int verbs, int nouns,
                              const std::string& split);

}  // namespace patchda
