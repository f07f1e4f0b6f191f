#include "patchda/adaptation.hpp"

#include <cmath>
#include <numbers>

#include "patchda/error.hpp"

namespace patchda::adaptation {

Tensor grl(const Tensor& feature, float lambda) { return ops::gradient_reversal(feature, lambda); }

namespace {

template <typename T>
double entropy_impl(std::span<const T> probs) {
  double total = 0.0, h = 0.0;
  for (T p : probs) {
    if (!(p >= 0)) throw InvalidInput("entropy: probabilities must be non-negative");
    total += p;
    if (p > 0) h -= static_cast<double>(p) * std::log(static_cast<double>(p));
  }
  if (std::abs(total - 1.0) > 1e-6) throw InvalidInput("entropy: probabilities do not sum to 1");
  return h;
}

}  // namespace

double entropy(std::span<const double> probs) { return entropy_impl(probs); }
double entropy(std::span<const float> probs) { return entropy_impl(probs); }

double normalized_domain_entropy(double p_source, double p_target) {
  double h = 0.0;
  for (double p : {p_source, p_target})
    if (p > 0) h -= p * std::log(p);
  return std::clamp(h / std::numbers::ln2, 0.0, 1.0);
}

int domain_label(data::Domain d) { return d == data::Domain::Source ? kSourceLabel : kTargetLabel; }

DomainPrediction DomainClassifier::operator()(const Tensor& features, float grl_lambda) const {
  Tensor logits = mlp_(grl(features, grl_lambda));
  return {logits, ops::softmax_rows(logits)};
}

DomainLoss domain_classification_loss(const DomainPrediction& prediction,
                                      std::span<const int> domain_labels) {
  bool seen[2] = {false, false};
  for (int d : domain_labels) {
    if (d != kSourceLabel && d != kTargetLabel) throw InvalidInput("domain label must be 0 or 1");
    seen[d] = true;
  }
  return {ops::cross_entropy(prediction.logits, domain_labels), prediction, !(seen[0] && seen[1])};
}

DomainLoss frame_domain_loss(const DomainClassifier& classifier, const relation::SharedSequence& z,
                             std::span<const int> clip_domains, float grl_lambda) {
  if (static_cast<int>(clip_domains.size()) != z.clips)
    throw InvalidInput("frame_domain_loss: one domain tag per clip required");
  std::vector<int> rows;
  for (int d : clip_domains)
    for (int s = 0; s < z.segments; ++s) rows.push_back(d);
  return domain_classification_loss(classifier(z.z, grl_lambda), rows);
}

RelationDomainLosses relation_domain_losses(const std::map<int, DomainClassifier>& classifiers,
                                            const relation::RelationSet& relations,
                                            std::span<const int> clip_domains, float grl_lambda) {
  if (classifiers.size() != relations.r.size())
    throw InvalidInput("relation_domain_losses: one classifier per scale required");
  RelationDomainLosses out;
  for (const auto& [n, r] : relations.r) {
    auto it = classifiers.find(n);
    if (it == classifiers.end())
      throw InvalidInput("relation_domain_losses: no classifier for scale " + std::to_string(n));
    auto dl = domain_classification_loss(it->second(r, grl_lambda), clip_domains);
    out.loss[n] = dl.loss;
    out.prediction[n] = dl.prediction;
    out.degenerate = out.degenerate || dl.degenerate;
  }
  return out;
}

AttentionResult domain_attention(const relation::RelationSet& relations,
                                 const std::map<int, DomainPrediction>& predictions) {
  if (predictions.size() != relations.r.size())
    throw InvalidInput("domain_attention: predictions do not cover the relation scales");
  AttentionResult out;
  for (const auto& [n, r] : relations.r) {
    auto it = predictions.find(n);
    if (it == predictions.end())
      throw InvalidInput("domain_attention: no prediction for scale " + std::to_string(n));
    const auto& probs = it->second.probs;
    const int clips = r.dim(0);
    if (static_cast<int>(probs.size()) != 2 * clips)
      throw InvalidInput("domain_attention: prediction rows do not match clips");
    std::vector<float> w(clips), factor(clips);
    for (int c = 0; c < clips; ++c) {
      w[c] = static_cast<float>(1.0 - normalized_domain_entropy(probs[2 * c], probs[2 * c + 1]));
      factor[c] = 1.0f + w[c];
    }
    out.attended[n] = ops::scale_rows(r, factor);
    out.weights[n] = std::move(w);
  }
  return out;
}

DomainLoss video_domain_loss(const DomainClassifier& classifier, const Tensor& video,
                             std::span<const int> clip_domains, float grl_lambda) {
  if (static_cast<int>(clip_domains.size()) != video.dim(0))
    throw InvalidInput("video_domain_loss: one domain tag per clip required");
  return domain_classification_loss(classifier(video, grl_lambda), clip_domains);
}

ActionPrediction ActionClassifier::operator()(const Tensor& video) const {
  if (video.rank() != 2 || video.dim(1) != feat_dim())
    throw InvalidInput("classifier expects FeatDim " + std::to_string(feat_dim()) + ", got " +
                       shape_string(video.shape()));
  return {verb_(video), noun_(video)};
}

void ActionClassifier::collect(const std::string& prefix, nn::NamedTensors& out) const {
  verb_.collect(prefix + ".verb", out);
  noun_.collect(prefix + ".noun", out);
}

ClassificationLoss classification_loss(const ActionPrediction& prediction,
                                       std::span<const TrainingLabel> labels) {
  if (static_cast<int>(labels.size()) != prediction.verb_logits.dim(0))
    throw InvalidInput("classification_loss: one label per prediction row required");
  std::vector<int> verbs, nouns;
  for (const auto& l : labels) {
    if (l.domain != data::Domain::Source)
      throw ContractViolation("classification_loss received a target-domain clip");
    verbs.push_back(l.labels.verb);
    nouns.push_back(l.labels.noun);
  }
  return {ops::cross_entropy(prediction.verb_logits, verbs),
          ops::cross_entropy(prediction.noun_logits, nouns)};
}

AttentiveEntropy attentive_entropy(const ActionPrediction& prediction,
                                   std::span<const float> video_domain_probs) {
  const int clips = prediction.verb_logits.dim(0);
  if (static_cast<int>(video_domain_probs.size()) != 2 * clips)
    throw InvalidInput("attentive_entropy: domain prediction rows do not match clips");
  std::vector<float> weight(clips);
  for (int c = 0; c < clips; ++c)
    weight[c] = 1.0f + static_cast<float>(normalized_domain_entropy(video_domain_probs[2 * c],
                                                                     video_domain_probs[2 * c + 1]));
  return {ops::weighted_softmax_entropy(prediction.verb_logits, weight),
          ops::weighted_softmax_entropy(prediction.noun_logits, weight)};
}

namespace {

void check_finite(const Tensor& t, const std::string& name, int epoch) {
  if (!t.defined()) throw InvalidInput("loss component " + name + " was not computed");
  if (!std::isfinite(t.item())) throw TrainingAbort(epoch, name);
}

}  // namespace

Tensor total_loss(const LossBreakdown& p, const LossWeights& w, int epoch) {
  check_finite(p.y_verb, "L_y_verb", epoch);
  check_finite(p.y_noun, "L_y_noun", epoch);
  check_finite(p.sd, "L_sd", epoch);
  for (const auto& [n, t] : p.rd) check_finite(t, "L_rd[" + std::to_string(n) + "]", epoch);
  check_finite(p.td, "L_td", epoch);
  check_finite(p.ae_verb, "L_ae_verb", epoch);
  check_finite(p.ae_noun, "L_ae_noun", epoch);

  std::vector<Tensor> terms{p.y_verb, p.y_noun, ops::scale(p.sd, w.lambda_sd)};
  if (!p.rd.empty()) {
    std::vector<Tensor> rd;
    for (const auto& [n, t] : p.rd) rd.push_back(t);
    terms.push_back(ops::scale(ops::add_n(rd), w.lambda_rd / static_cast<float>(rd.size())));
  }
  terms.push_back(ops::scale(p.td, w.lambda_td));
  terms.push_back(ops::scale(ops::add(p.ae_verb, p.ae_noun), w.gamma));
  Tensor total = ops::add_n(terms);
  check_finite(total, "total", epoch);
  return total;
}

LossValues loss_values(const LossBreakdown& p, const Tensor& total) {
  LossValues v;
  v.y_verb = p.y_verb.item();
  v.y_noun = p.y_noun.item();
  v.sd = p.sd.item();
  for (const auto& [n, t] : p.rd) v.rd[n] = t.item();
  v.td = p.td.item();
  v.ae_verb = p.ae_verb.item();
  v.ae_noun = p.ae_noun.item();
  v.total = total.item();
  return v;
}

}  // namespace patchda::adaptation
