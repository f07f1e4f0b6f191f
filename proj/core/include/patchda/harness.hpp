#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "patchda/checkpoint.hpp"
#include "patchda/data.hpp"
#include "patchda/metrics.hpp"

// Two-phase training, evaluation and patch visualization.
namespace patchda::harness {

// Loads dataset splits on first use and keeps them in memory.
class DatasetView {
 public:
  explicit DatasetView(data::DatasetManifest manifest) : manifest_(std::move(manifest)) {}
  static DatasetView open(const std::filesystem::path& root) { return DatasetView(data::load_manifest(root)); }

  const data::DatasetManifest& manifest() const { return manifest_; }
  const std::vector<data::Clip>& split(data::Domain domain, data::Split split);

 private:
  data::DatasetManifest manifest_;
  std::map<std::pair<data::Domain, data::Split>, std::vector<data::Clip>> cache_;
};

struct EpochLog {
  std::string phase;
  int epoch = 0;
  std::map<std::string, double> lr;
  double grl_lambda = 0;
  adaptation::LossValues losses;

  std::string to_json() const;
};

struct TrainOptions {
  std::filesystem::path log_path;  // JSON lines appended per epoch; empty disables
  std::vector<EpochLog>* history = nullptr;
  std::function<void(const EpochLog&)> on_epoch;
};

// Phase 1: glancer, policy, focuser and global encoders of both streams plus
// an auxiliary verb/noun head, trained on labeled source clips only.
Checkpoint train_local(DatasetView& dataset, const Config& config, const TrainOptions& options = {});

// Phase 2: extractor frozen; relation and adaptation stacks trained on source
// labels plus adversarial and entropy losses over both domains.
Checkpoint train_adapt(DatasetView& dataset, const Checkpoint& init, const Config& config,
                       const TrainOptions& options = {});

// Fused segment features of each clip ([segments, D_e] row-major), no tape.
std::vector<std::vector<float>> extract_features(const ActionModel& model,
                                                 std::span<const data::Clip> clips,
                                                 int batch_size = 16);

MetricsReport evaluate(const Checkpoint& checkpoint, DatasetView& dataset, data::Domain domain,
                       data::Split split);
MetricsReport evaluate_clips(const Checkpoint& checkpoint, std::span<const data::Clip> clips,
                             const std::string& split_name);

// Writes `<clip_id>_f<n>.ppm` (frame with the selected patch outlined) and
// `<clip_id>_f<n>_crop.ppm` (the crop) for every segment n of each clip.
std::vector<std::filesystem::path> visualize_patches(const Checkpoint& checkpoint,
                                                     std::span<const data::Clip> clips,
                                                     const std::filesystem::path& out_dir);

// Spatial patch centers per segment for each clip, clamped to the frame.
std::vector<std::vector<sampler::PatchSpec>> spatial_patches(const ActionModel& model,
                                                             std::span<const data::Clip> clips);

struct PatchLocalization {
  double policy_iou = 0;  // mean IoU of selected patch vs sprite box
  double random_iou = 0;  // same for uniformly random centers
  double center_iou = 0;  // same for a patch fixed at the frame center
  int frames = 0;
};

PatchLocalization patch_localization(const ActionModel& model, std::span<const data::Clip> clips,
                                     std::uint64_t seed, int random_draws = 16);

void write_ppm(const std::filesystem::path& path, int height, int width, std::span<const float> chw);

}  // namespace patchda::harness
