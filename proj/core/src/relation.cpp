#include "patchda/relation.hpp"

#include <algorithm>

#include "patchda/error.hpp"

namespace patchda::relation {

SharedSequence SharedEmbedding::operator()(const Tensor& e, int clips, int segments) const {
  if (e.rank() != 2 || e.dim(1) != input_dim()) {
    throw InvalidInput("shared embedding expects D_e = " + std::to_string(input_dim()) +
                       ", got shape " + shape_string(e.shape()));
  }
  if (e.dim(0) != clips * segments) throw InvalidInput("shared embedding row count mismatch");
  return {ops::relu(layer_(e)), clips, segments};
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

std::vector<Tuple> enumerate_ordered_subsets(int frames, int n, int cap, std::uint64_t seed) {
  if (n < 2 || n > frames)
    throw InvalidInput("relation scale " + std::to_string(n) + " outside [2, " + std::to_string(frames) + "]");
  if (cap < 1) throw InvalidInput("relation tuple cap must be >= 1");

  std::vector<Tuple> all;
  Tuple t(n);
  for (int i = 0; i < n; ++i) t[i] = i;
  while (true) {
    all.push_back(t);
    int i = n - 1;
    while (i >= 0 && t[i] == frames - n + i) --i;
    if (i < 0) break;
    ++t[i];
    for (int j = i + 1; j < n; ++j) t[j] = t[j - 1] + 1;
  }
  if (all.size() <= static_cast<std::size_t>(cap)) return all;

  // Partial Fisher-Yates picks `cap` distinct positions.
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pos(all.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  for (int i = 0; i < cap; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pos.size() - 1);
    std::swap(pos[i], pos[pick(rng)]);
  }
  pos.resize(cap);
  std::sort(pos.begin(), pos.end());
  std::vector<Tuple> out;
  for (auto p : pos) out.push_back(all[p]);
  return out;
}

TemporalRelation::TemporalRelation(int segments, int feat_dim, int hidden, std::mt19937_64& rng)
    : segments_(segments), feat_dim_(feat_dim) {
  if (segments < 2) throw InvalidConfig("temporal relation needs at least 2 segments");
  for (int n = 2; n <= segments; ++n) g_.emplace(n, nn::Mlp(n * feat_dim, hidden, feat_dim, rng));
}

std::vector<int> TemporalRelation::scales() const {
  std::vector<int> s;
  for (const auto& [n, g] : g_) s.push_back(n);
  return s;
}

RelationSet TemporalRelation::operator()(const SharedSequence& z, int cap, std::uint64_t seed) const {
  if (z.segments != segments_)
    throw InvalidInput("relation module built for " + std::to_string(segments_) + " segments, got " +
                       std::to_string(z.segments));
  if (z.z.dim(1) != feat_dim_) throw InvalidInput("relation module feature width mismatch");
  RelationSet out;
  out.clips = z.clips;
  for (const auto& [n, g] : g_) {
    const auto tuples = enumerate_ordered_subsets(segments_, n, cap, seed + static_cast<std::uint64_t>(n));
    const int count = static_cast<int>(tuples.size());
    // Rows ordered clip-major, then tuple; each row concatenates n frames.
    std::vector<Tensor> columns;
    for (int k = 0; k < n; ++k) {
      std::vector<int> rows;
      rows.reserve(static_cast<std::size_t>(z.clips) * count);
      for (int c = 0; c < z.clips; ++c)
        for (const auto& t : tuples) rows.push_back(c * segments_ + t[k]);
      columns.push_back(ops::gather_rows(z.z, rows));
    }
    const Tensor stacked = ops::concat_cols(columns);
    out.r[n] = ops::mean_row_groups(g(stacked), count);
    out.subset_counts[n] = count;
  }
  return out;
}

void TemporalRelation::collect(const std::string& prefix, nn::NamedTensors& out) const {
  for (const auto& [n, g] : g_) g.collect(prefix + ".g" + std::to_string(n), out);
}

Tensor aggregate_video(const std::map<int, Tensor>& attended, const RelationSet& reference) {
  if (attended.size() != reference.r.size())
    throw InvalidInput("aggregate_video: scale set does not match the relation set");
  std::vector<Tensor> parts;
  for (const auto& [n, r] : reference.r) {
    auto it = attended.find(n);
    if (it == attended.end())
      throw InvalidInput("aggregate_video: missing scale " + std::to_string(n));
    parts.push_back(it->second);
  }
  return ops::add_n(parts);
}

}  // namespace patchda::relation
