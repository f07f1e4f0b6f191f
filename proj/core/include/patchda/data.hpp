#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchda/config.hpp"

// Synthetic two-domain "moving sprites" videos. A clip shows one sprite whose
// shape is the noun and whose motion direction is the verb, over a
// domain-styled background with out-of-vocabulary distractor shapes.
namespace patchda::data {

enum class Domain { Source, Target };
enum class Split { Train, Val };

std::string to_string(Domain d);
std::string to_string(Split s);
Domain parse_domain(const std::string& s);
Split parse_split(const std::string& s);
// "target/val" -> {Target, Val}
std::pair<Domain, Split> parse_domain_split(const std::string& s);

// Axis-aligned box in pixel-area coordinates (pixel i spans [i, i+1)).
struct Box {
  float x0, y0, x1, y1;
};

float iou(const Box& a, const Box& b);

struct Labels {
  int verb = 0;
  int noun = 0;
};

struct ClipRecord {
  std::string clip_id;
  Domain domain = Domain::Source;
  Split split = Split::Train;
  Labels labels;
  std::string rgb_file;  // relative to the dataset root
  std::string flow_file;
  std::string audio_file;
  std::vector<Box> sprite_boxes;  // one per frame
};

struct DatasetManifest {
  DatasetConfig config;
  std::filesystem::path root;
  std::vector<ClipRecord> clips;

  const ClipRecord& find(const std::string& clip_id) const;
  std::vector<const ClipRecord*> select(Domain domain, Split split) const;
};

// One labeled clip in memory. Labels of target-domain clips are only
// reachable through evaluation_labels(); training code calls
// training_labels(), which refuses target clips.
class Clip {
 public:
  Clip() = default;
  Clip(std::string clip_id, Domain domain, Split split, int frames, int height, int width,
       std::vector<float> rgb, std::vector<float> flow, std::vector<float> audio, Labels labels,
       std::vector<Box> sprite_boxes = {});

  const std::string& clip_id() const { return clip_id_; }
  Domain domain() const { return domain_; }
  Split split() const { return split_; }
  int frames() const { return frames_; }
  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<float>& rgb() const { return rgb_; }    // T x 3 x H x W
  const std::vector<float>& flow() const { return flow_; }  // T x 2 x H x W
  const std::vector<float>& audio() const { return audio_; }
  const std::vector<Box>& sprite_boxes() const { return sprite_boxes_; }

  Labels training_labels() const;
  Labels evaluation_labels() const { return labels_; }

 private:
  std::string clip_id_;
  Domain domain_ = Domain::Source;
  Split split_ = Split::Train;
  int frames_ = 0, height_ = 0, width_ = 0;
  std::vector<float> rgb_, flow_, audio_;
  Labels labels_;
  std::vector<Box> sprite_boxes_;
};

// Renders clip `index` of a domain/split deterministically from the config seed.
Clip render_clip(const DatasetConfig& config, Domain domain, Split split, int index);

std::string make_clip_id(Domain domain, Split split, int index);

// Writes root/{source,target}/{train,val}/<id>.{rgb,flow}.bin,
// root/audio/<id>.audio.bin and root/manifest.json.
DatasetManifest generate(const DatasetConfig& config, const std::filesystem::path& root);

DatasetManifest load_manifest(const std::filesystem::path& root);
Clip load_clip(const DatasetManifest& manifest, const std::string& clip_id);
std::vector<Clip> load_split(const DatasetManifest& manifest, Domain domain, Split split);

// Order-sensitive hash over manifest and every clip file.
std::uint64_t dataset_hash(const DatasetManifest& manifest);

// Names of the noun shapes and distractor shapes, for reports.
const std::vector<std::string>& noun_names();
const std::vector<std::string>& verb_names();

}  // namespace patchda::data
