#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace patchda {

// Per-domain styling knobs of the synthetic generator. Everything here is
// nuisance: none of it changes what a clip's verb or noun means.
struct DomainStyle {
  int palette = 0;       // background color palette id
  int texture = 0;       // background texture id (0 stripes, 1 checker, 2 blobs, 3 noise)
  float brightness = 0;  // additive RGB offset
  int distractors = 2;   // out-of-vocabulary shapes per clip
  float distractor_speed = 1.0f;  // max |velocity| of distractors, px/frame
  float audio_shift = 0;  // norm of the domain mean offset in audio space
};

struct DatasetConfig {
  int verbs = 4;  // motion directions
  int nouns = 4;  // sprite shapes
  int train_clips = 200;  // per domain
  int val_clips = 300;    // per domain
  int frames = 6;
  int frame_size = 64;
  int sprite_size = 14;
  float min_speed = 2.0f;
  float max_speed = 3.5f;
  int audio_dim = 16;
  float audio_separation = 1.0f;  // distance between class means
  float audio_noise = 2.0f;       // per-dimension std
  float pixel_noise = 0.03f;
  DomainStyle source{0, 0, 0.0f, 2, 1.0f, 0.0f};
  DomainStyle target{1, 1, 0.15f, 3, 1.0f, 6.0f};
  std::uint64_t seed = 7;
};

enum class GlobalSource { Encode, Ingest };

struct ModelConfig {
  int segments = 6;         // T_f: frames per clip fed to focuser and global branch
  int glance_segments = 0;  // T_g: frames fed to glancer/policy; 0 means T_f
  int patch_size = 24;
  bool use_local = true;
  GlobalSource global_source = GlobalSource::Encode;
  std::string feature_dir;  // for GlobalSource::Ingest
  int global_dim = 64;
  int local_dim = 32;
  std::vector<int> glancer_widths{8, 16, 16};
  std::vector<int> focuser_widths{8, 16, 32};  // a 4th layer emits local_dim
  std::vector<int> encoder_widths{8, 16, 32};  // a 4th layer emits global_dim
  float policy_temperature = 1.0f;
  int feat_dim = 512;
  int relation_hidden = 256;
  int relation_tuples = 3;  // per-scale tuple cap S
};

struct LossWeights {
  float lambda_sd = 0.5f;
  float lambda_rd = 0.5f;
  float lambda_td = 0.5f;
  float gamma = 0.01f;
};

struct TrainConfig {
  float lr_glancer = 0.005f;
  float lr_focuser = 0.01f;
  float lr_policy = 1e-4f;
  float lr_global = 0.01f;
  float lr_aux_head = 0.01f;
  float lr_adapt = 3e-3f;
  float lr_decay = 0.1f;
  std::vector<int> lr_milestones{10, 20};
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  int epochs_local = 30;
  int epochs_adapt = 30;
  int batch_size = 8;
  LossWeights weights;
  bool grl_warmup = true;
  std::uint64_t seed = 0;
};

struct Config {
  DatasetConfig data;
  ModelConfig model;
  TrainConfig train;
};

// Throws InvalidConfig on out-of-range values.
void validate(const DatasetConfig& c);
void validate(const ModelConfig& c);
void validate(const TrainConfig& c);
void validate(const Config& c);

// JSON round trip. Every field is addressable; unknown keys are rejected.
// Absent keys keep their defaults.
Config config_from_json(const std::string& text);
std::string config_to_json(const Config& config);
Config load_config(const std::string& path);

// Segment layout derived from a model config.
int glance_count(const ModelConfig& c);

}  // namespace patchda
