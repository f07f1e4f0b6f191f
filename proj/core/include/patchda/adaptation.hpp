#pragma once

#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "patchda/config.hpp"
#include "patchda/data.hpp"
#include "patchda/nn.hpp"
#include "patchda/relation.hpp"

// Adversarial alignment stack: gradient reversal, frame/relation/video
// domain classifiers, entropy-based domain attention, verb/noun heads and
// their losses.
namespace patchda::adaptation {

// Forward identity, backward scaled by -lambda.
Tensor grl(const Tensor& feature, float lambda);

// H(p) = -sum p log p with 0 log 0 = 0. Rejects negative entries and
// distributions that do not sum to 1 within 1e-6.
double entropy(std::span<const double> probs);
double entropy(std::span<const float> probs);

// Entropy of a 2-way domain prediction divided by ln 2, in [0,1].
double normalized_domain_entropy(double p_source, double p_target);

inline constexpr int kSourceLabel = 0;
inline constexpr int kTargetLabel = 1;
int domain_label(data::Domain d);

struct DomainPrediction {
  Tensor logits;             // [rows, 2]
  std::vector<float> probs;  // rows x 2, softmax(logits)
};

// GRL -> Linear -> ReLU -> Linear -> 2 logits.
class DomainClassifier {
 public:
  DomainClassifier() = default;
  DomainClassifier(int feat_dim, int hidden, std::mt19937_64& rng) : mlp_(feat_dim, hidden, 2, rng) {}

  DomainPrediction operator()(const Tensor& features, float grl_lambda) const;
  void collect(const std::string& prefix, nn::NamedTensors& out) const { mlp_.collect(prefix, out); }

 private:
  nn::Mlp mlp_;
};

// Mean two-class cross-entropy between the prediction and the domain tags.
// A batch drawn from one domain only still yields a loss but sets `degenerate`.
struct DomainLoss {
  Tensor loss;
  DomainPrediction prediction;
  bool degenerate = false;
};

DomainLoss domain_classification_loss(const DomainPrediction& prediction,
                                      std::span<const int> domain_labels);

DomainLoss frame_domain_loss(const DomainClassifier& classifier, const relation::SharedSequence& z,
                             std::span<const int> clip_domains, float grl_lambda);

struct RelationDomainLosses {
  std::map<int, Tensor> loss;                  // scale -> L^n_rd
  std::map<int, DomainPrediction> prediction;  // scale -> per-clip prediction
  bool degenerate = false;
};

RelationDomainLosses relation_domain_losses(const std::map<int, DomainClassifier>& classifiers,
                                            const relation::RelationSet& relations,
                                            std::span<const int> clip_domains, float grl_lambda);

struct AttentionResult {
  std::map<int, Tensor> attended;             // scale -> (1 + w) r
  std::map<int, std::vector<float>> weights;  // scale -> per-clip w in [0,1]
};

// w = 1 - H(domain probs)/ln 2, used as a constant; r~ = (1 + w) r.
AttentionResult domain_attention(const relation::RelationSet& relations,
                                 const std::map<int, DomainPrediction>& predictions);

DomainLoss video_domain_loss(const DomainClassifier& classifier, const Tensor& video,
                             std::span<const int> clip_domains, float grl_lambda);

struct ActionPrediction {
  Tensor verb_logits;  // [clips, V]
  Tensor noun_logits;  // [clips, N]
};

class ActionClassifier {
 public:
  ActionClassifier() = default;
  ActionClassifier(int feat_dim, int verbs, int nouns, std::mt19937_64& rng)
      : verb_(feat_dim, verbs, rng), noun_(feat_dim, nouns, rng) {}

  ActionPrediction operator()(const Tensor& video) const;
  int feat_dim() const { return verb_.in_features(); }
  void collect(const std::string& prefix, nn::NamedTensors& out) const;

 private:
  nn::Linear verb_;
  nn::Linear noun_;
};

// Labels that a training loss may consume. Target rows are a contract
// violation: their labels never enter training.
struct TrainingLabel {
  data::Domain domain = data::Domain::Source;
  data::Labels labels;
};

struct ClassificationLoss {
  Tensor verb;
  Tensor noun;
};

ClassificationLoss classification_loss(const ActionPrediction& prediction,
                                       std::span<const TrainingLabel> labels);

struct AttentiveEntropy {
  Tensor verb;
  Tensor noun;
};

// Per clip (1 + H_d/ln 2) * H(class probs), averaged over clips, per head.
// The domain weight is a constant.
AttentiveEntropy attentive_entropy(const ActionPrediction& prediction,
                                   std::span<const float> video_domain_probs);

struct LossBreakdown {
  Tensor y_verb, y_noun;
  Tensor sd;
  std::map<int, Tensor> rd;
  Tensor td;
  Tensor ae_verb, ae_noun;
};

// Scalars of a breakdown, for logging.
struct LossValues {
  double y_verb = 0, y_noun = 0, sd = 0, td = 0, ae_verb = 0, ae_noun = 0, total = 0;
  std::map<int, double> rd;
};

// total = y_verb + y_noun + l_sd*sd + l_rd*mean_n(rd) + l_td*td + gamma*(ae_verb + ae_noun).
// Throws TrainingAbort naming the first non-finite component.
Tensor total_loss(const LossBreakdown& parts, const LossWeights& weights, int epoch = 0);
LossValues loss_values(const LossBreakdown& parts, const Tensor& total);

}  // namespace patchda::adaptation
