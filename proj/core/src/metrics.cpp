#include "patchda/metrics.hpp"

#include <json.hpp>

#include "patchda/error.hpp"

namespace patchda {

int rank_of(std::span<const float> scores, int label) {
  int rank = 0;
  const float s = scores[label];
  for (int k = 0; k < static_cast<int>(scores.size()); ++k)
    if (scores[k] > s || (scores[k] == s && k < label)) ++rank;
  return rank;
}

MetricsReport compute_metrics(std::span<const float> verb_probs, std::span<const float> noun_probs,
                              std::span<const data::Labels> labels, int verbs, int nouns,
                              const std::string& split) {
  const int clips = static_cast<int>(labels.size());
  if (clips == 0) throw InvalidInput("cannot evaluate an empty split");
  if (verb_probs.size() != static_cast<std::size_t>(clips) * verbs ||
      noun_probs.size() != static_cast<std::size_t>(clips) * nouns)
    throw InvalidInput("prediction sizes do not match the label count");

  int v1 = 0, v5 = 0, n1 = 0, n5 = 0, a1 = 0, a5 = 0;
  std::vector<float> pair(static_cast<std::size_t>(verbs) * nouns);
  for (int c = 0; c < clips; ++c) {
    const auto pv = verb_probs.subspan(static_cast<std::size_t>(c) * verbs, verbs);
    const auto pn = noun_probs.subspan(static_cast<std::size_t>(c) * nouns, nouns);
    const auto& y = labels[c];
    const int rv = rank_of(pv, y.verb), rn = rank_of(pn, y.noun);
    v1 += rv < 1;
    v5 += rv < 5;
    n1 += rn < 1;
    n5 += rn < 5;
    a1 += (rv == 0 && rn == 0);
    for (int v = 0; v < verbs; ++v)
      for (int n = 0; n < nouns; ++n) pair[v * nouns + n] = pv[v] * pn[n];
    a5 += rank_of(pair, y.verb * nouns + y.noun) < 5;
  }
  const auto pct = [clips](int hits) { return 100.0 * hits / clips; };
  MetricsReport r;
  r.split = split;
  r.clips = clips;
  r.verb = {pct(v1), pct(v5)};
  r.noun = {pct(n1), pct(n5)};
  r.action = {pct(a1), pct(a5)};
  r.counts[split] = clips;
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["clips"] = clips;
  for (const auto& [name, m] : {std::pair{"verb", verb}, std::pair{"noun", noun}, std::pair{"action", action}})
    j[name] = {{"top1", m.top1}, {"top5", m.top5}};
  j["counts"] = counts;
  return j.dump(2);
}

}  // namespace patchda
