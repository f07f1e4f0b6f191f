#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "patchda/config.hpp"
#include "patchda/data.hpp"
#include "patchda/nn.hpp"
#include "patchda/sampler.hpp"

// Two-stream glance -> select -> focus feature extraction and fusion.
namespace patchda::streams {

enum class Stream { Spatial, Temporal };

int stream_channels(Stream s);
std::string to_string(Stream s);

// Spatial softmax over a score map followed by the expected cell center:
// scores [N, h*w] -> centers [N, 2] = (cx, cy), each inside (0, 1).
Tensor soft_argmax(const Tensor& scores, int height, int width, float temperature);

// Networks of one stream. The glancer maps a frame to a coarse map, the
// policy turns that map into a patch center, the focuser encodes the crop
// and the global encoder encodes the whole frame.
class StreamNetworks {
 public:
  StreamNetworks() = default;
  StreamNetworks(Stream stream, const ModelConfig& config, std::mt19937_64& rng);

  Stream stream() const { return stream_; }
  int patch_size() const { return patch_size_; }
  bool has_global_encoder() const { return has_encoder_; }

  // frames [N,C,H,W] -> coarse maps [N,Cg,H/8,W/8]
  Tensor glance(const Tensor& frames) const;
  // coarse maps -> centers [N,2] in [0,1]^2
  Tensor select_patch(const Tensor& coarse) const;
  // patches [N,C,P,P] -> [N, D_L]
  Tensor focus(const Tensor& patches) const;
  // frames [N,C,H,W] -> [N, D_G]
  Tensor encode_global(const Tensor& frames) const;

  void collect_glancer(const std::string& prefix, nn::NamedTensors& out) const;
  void collect_policy(const std::string& prefix, nn::NamedTensors& out) const;
  void collect_focuser(const std::string& prefix, nn::NamedTensors& out) const;
  void collect_global(const std::string& prefix, nn::NamedTensors& out) const;

 private:
  void check_frames(const Tensor& frames, const char* op) const;

  Stream stream_ = Stream::Spatial;
  int patch_size_ = 0;
  float temperature_ = 1.0f;
  bool has_encoder_ = true;
  nn::ConvStack glancer_;
  nn::Conv2d policy_;
  nn::ConvStack focuser_;
  nn::ConvStack encoder_;
};

std::vector<sampler::PatchSpec> to_patch_specs(const Tensor& centers, int size_px);

// Order of the fused blocks inside e.
enum Block { kSpatialGlobal = 0, kSpatialLocal, kTemporalGlobal, kTemporalLocal, kAudio };
inline constexpr int kBlockCount = 5;

struct FusionLayout {
  std::array<int, kBlockCount> dims{};
  std::array<int, kBlockCount> offsets{};
  std::array<bool, kBlockCount> enabled{};
  int total = 0;

  static FusionLayout from_config(const ModelConfig& model, int audio_dim);
};

struct SegmentFeatures {
  Tensor e;  // [clips * segments, D_e]
  FusionLayout layout;
  int clips = 0;
  int segments = 0;
};

// Concatenates per-segment blocks in fixed order. Audio arrives per clip
// ([clips, D_a]) and is broadcast to every segment. Every enabled block must
// be present and every disabled block absent.
SegmentFeatures fuse(const std::array<std::optional<Tensor>, kBlockCount>& blocks,
                     const FusionLayout& layout, int clips, int segments);

// Precomputed per-clip features, one `<clip_id>.<modality>.feat` file per
// clip and modality (rgb, flow, audio).
class FeatureStore {
 public:
  FeatureStore() = default;
  FeatureStore(std::filesystem::path dir, int segments, int rgb_dim, int flow_dim, int audio_dim);

  // T x D row-major matrix; throws IngestionError naming the clip.
  std::vector<float> load_precomputed(const std::string& clip_id, const std::string& modality) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  int expected_dim(const std::string& modality) const;

  std::filesystem::path dir_;
  int segments_ = 0;
  int rgb_dim_ = 0, flow_dim_ = 0, audio_dim_ = 0;
};

// Segment frame indices: T_f frames spread uniformly over a T-frame clip.
std::vector<int> segment_indices(int clip_frames, int segments);
// Segments (among T_f) that the glancer sees.
std::vector<int> glance_indices(int segments, int glanced);
// For every segment, the position in glance_indices of the nearest glanced one.
std::vector<int> nearest_glanced(int segments, int glanced);

// Frames of several clips stacked segment-major per clip.
struct ClipBatch {
  int clips = 0;
  int segments = 0;
  Tensor rgb;    // [clips*segments, 3, H, W]
  Tensor flow;   // [clips*segments, 2, H, W]
  Tensor audio;  // [clips, D_a]
  std::vector<std::string> clip_ids;
};

ClipBatch make_batch(std::span<const data::Clip* const> clips, const ModelConfig& model);

struct ExtractorOutput {
  SegmentFeatures features;
  Tensor spatial_centers;   // [clips*segments, 2]; undefined without local branch
  Tensor temporal_centers;
};

class TwoStreamExtractor {
 public:
  TwoStreamExtractor() = default;
  TwoStreamExtractor(const ModelConfig& model, int audio_dim, std::mt19937_64& rng);

  ExtractorOutput forward(const ClipBatch& batch, const FeatureStore* store = nullptr) const;

  const StreamNetworks& spatial() const { return spatial_; }
  const StreamNetworks& temporal() const { return temporal_; }
  const FusionLayout& layout() const { return layout_; }
  const ModelConfig& config() const { return model_; }

  void collect(nn::NamedTensors& out) const;
  // Named parameter groups used by the phase-1 optimizer.
  nn::NamedTensors glancer_parameters() const;
  nn::NamedTensors policy_parameters() const;
  nn::NamedTensors focuser_parameters() const;
  nn::NamedTensors global_parameters() const;

 private:
  ModelConfig model_;
  FusionLayout layout_;
  StreamNetworks spatial_;
  StreamNetworks temporal_;
};

}  // namespace patchda::streams
