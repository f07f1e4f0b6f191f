#pragma once

#include <cstdint>
#include <map>
#include <span>

#include "patchda/adaptation.hpp"
#include "patchda/config.hpp"
#include "patchda/relation.hpp"
#include "patchda/streams.hpp"

namespace patchda {

// Everything trainable: the two-stream extractor with its phase-1 auxiliary
// heads, and the relation + adaptation stack trained in phase 2.
class ActionModel {
 public:
  explicit ActionModel(const Config& config);

  const Config& config() const { return config_; }
  const streams::TwoStreamExtractor& extractor() const { return extractor_; }
  const relation::SharedEmbedding& embedding() const { return embed_; }
  const relation::TemporalRelation& relation() const { return relation_; }
  const adaptation::DomainClassifier& frame_discriminator() const { return frame_disc_; }
  const std::map<int, adaptation::DomainClassifier>& relation_discriminators() const { return relation_disc_; }
  const adaptation::DomainClassifier& video_discriminator() const { return video_disc_; }
  const adaptation::ActionClassifier& classifier() const { return classifier_; }

  // Phase-1 auxiliary verb/noun heads on the clip-mean fused feature.
  adaptation::ActionPrediction aux_classify(const streams::SegmentFeatures& features) const;

  struct AdaptPass {
    relation::SharedSequence z;
    relation::RelationSet relations;
    adaptation::RelationDomainLosses relation_domains;
    adaptation::AttentionResult attention;
    Tensor video;
    adaptation::ActionPrediction prediction;
  };
  // e: [clips*segments, D_e] -> video-level prediction. Relation-level
  // domain predictions feed the attention, so they are always computed.
  AdaptPass adapt_forward(const Tensor& e, int clips, std::span<const int> clip_domains,
                          float grl_lambda, std::uint64_t tuple_seed) const;

  nn::NamedTensors extractor_parameters() const;
  nn::NamedTensors aux_parameters() const;
  nn::NamedTensors adaptation_parameters() const;
  nn::NamedTensors all_parameters() const;

 private:
  Config config_;
  streams::TwoStreamExtractor extractor_;
  adaptation::ActionClassifier aux_;
  relation::SharedEmbedding embed_;
  relation::TemporalRelation relation_;
  adaptation::DomainClassifier frame_disc_;
  std::map<int, adaptation::DomainClassifier> relation_disc_;
  adaptation::DomainClassifier video_disc_;
  adaptation::ActionClassifier classifier_;
};

// Tuple seed used whenever the relation module runs outside training.
inline constexpr std::uint64_t kEvalTupleSeed = 0x5eed;

// True when two configs produce extractors with identical parameter shapes
// and input contracts.
bool extractor_compatible(const Config& a, const Config& b, std::string* why = nullptr);
bool model_compatible(const Config& a, const Config& b, std::string* why = nullptr);

}  // namespace patchda
