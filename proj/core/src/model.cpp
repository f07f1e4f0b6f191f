#include "patchda/model.hpp"

#include <random>

#include "patchda/error.hpp"

namespace patchda {

ActionModel::ActionModel(const Config& config) : config_(config) {
  validate(config_);
  std::mt19937_64 rng(config_.train.seed * 0x9e3779b97f4a7c15ULL + 1);
  const auto& m = config_.model;
  const auto& d = config_.data;
  extractor_ = streams::TwoStreamExtractor(m, d.audio_dim, rng);
  const int de = extractor_.layout().total;
  aux_ = adaptation::ActionClassifier(de, d.verbs, d.nouns, rng);
  embed_ = relation::SharedEmbedding(de, m.feat_dim, rng);
  relation_ = relation::TemporalRelation(m.segments, m.feat_dim, m.relation_hidden, rng);
  const int disc_hidden = std::max(1, m.feat_dim / 4);
  frame_disc_ = adaptation::DomainClassifier(m.feat_dim, disc_hidden, rng);
  for (int n : relation_.scales()) relation_disc_.emplace(n, adaptation::DomainClassifier(m.feat_dim, disc_hidden, rng));
  video_disc_ = adaptation::DomainClassifier(m.feat_dim, disc_hidden, rng);
  classifier_ = adaptation::ActionClassifier(m.feat_dim, d.verbs, d.nouns, rng);
}

adaptation::ActionPrediction ActionModel::aux_classify(const streams::SegmentFeatures& f) const {
  return aux_(ops::mean_row_groups(f.e, f.segments));
}

ActionModel::AdaptPass ActionModel::adapt_forward(const Tensor& e, int clips,
                                                  std::span<const int> clip_domains,
                                                  float grl_lambda, std::uint64_t tuple_seed) const {
  if (static_cast<int>(clip_domains.size()) != clips)
    throw InvalidInput("adapt_forward: one domain tag per clip required");
  AdaptPass p;
  p.z = embed_(e, clips, config_.model.segments);
  p.relations = relation_(p.z, config_.model.relation_tuples, tuple_seed);
  p.relation_domains = adaptation::relation_domain_losses(relation_disc_, p.relations, clip_domains, grl_lambda);
  p.attention = adaptation::domain_attention(p.relations, p.relation_domains.prediction);
  p.video = relation::aggregate_video(p.attention.attended, p.relations);
  p.prediction = classifier_(p.video);
  return p;
}

nn::NamedTensors ActionModel::extractor_parameters() const {
  nn::NamedTensors out;
  extractor_.collect(out);
  return out;
}

nn::NamedTensors ActionModel::aux_parameters() const {
  nn::NamedTensors out;
  aux_.collect("aux", out);
  return out;
}

nn::NamedTensors ActionModel::adaptation_parameters() const {
  nn::NamedTensors out;
  embed_.collect("embed", out);
  relation_.collect("relation", out);
  frame_disc_.collect("disc.frame", out);
  for (const auto& [n, d] : relation_disc_) d.collect("disc.relation" + std::to_string(n), out);
  video_disc_.collect("disc.video", out);
  classifier_.collect("classifier", out);
  return out;
}

nn::NamedTensors ActionModel::all_parameters() const {
  nn::NamedTensors out = extractor_parameters();
  for (auto group : {aux_parameters(), adaptation_parameters()}) out.insert(out.end(), group.begin(), group.end());
  return out;
}

namespace {

template <typename T>
bool same(const char* name, const T& a, const T& b, std::string* why) {
  if (a == b) return true;
  if (why) *why = std::string(name) + " differs";
  return false;
}

}  // namespace

bool extractor_compatible(const Config& a, const Config& b, std::string* why) {
  const auto& x = a.model;
  const auto& y = b.model;
  return same("model.segments", x.segments, y.segments, why) &&
         same("model.glance_segments", glance_count(x), glance_count(y), why) &&
         same("model.patch_size", x.patch_size, y.patch_size, why) &&
         same("model.use_local", x.use_local, y.use_local, why) &&
         same("model.global_source", x.global_source, y.global_source, why) &&
         same("model.global_dim", x.global_dim, y.global_dim, why) &&
         same("model.local_dim", x.local_dim, y.local_dim, why) &&
         same("model.glancer_widths", x.glancer_widths, y.glancer_widths, why) &&
         same("model.focuser_widths", x.focuser_widths, y.focuser_widths, why) &&
         same("model.encoder_widths", x.encoder_widths, y.encoder_widths, why) &&
         same("model.policy_temperature", x.policy_temperature, y.policy_temperature, why) &&
         same("data.audio_dim", a.data.audio_dim, b.data.audio_dim, why) &&
         same("data.frame_size", a.data.frame_size, b.data.frame_size, why) &&
         same("data.verbs", a.data.verbs, b.data.verbs, why) &&
         same("data.nouns", a.data.nouns, b.data.nouns, why);
}

bool model_compatible(const Config& a, const Config& b, std::string* why) {
  return extractor_compatible(a, b, why) &&
         same("model.feat_dim", a.model.feat_dim, b.model.feat_dim, why) &&
         same("model.relation_hidden", a.model.relation_hidden, b.model.relation_hidden, why);
}

}  // namespace patchda
