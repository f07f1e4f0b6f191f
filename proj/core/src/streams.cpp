#include "patchda/streams.hpp"

#include <cmath>
#include <limits>

#include "patchda/error.hpp"
#include "patchda/io.hpp"

namespace patchda::streams {

int stream_channels(Stream s) { return s == Stream::Spatial ? 3 : 2; }
std::string to_string(Stream s) { return s == Stream::Spatial ? "spatial" : "temporal"; }

Tensor soft_argmax(const Tensor& scores, int height, int width, float temperature) {
  if (scores.rank() != 2 || scores.dim(1) != height * width)
    throw InvalidInput("soft_argmax scores must be [N, h*w]");
  const int n = scores.dim(0), cells = height * width;
  const float inv_t = 1.0f / temperature;
  std::vector<float> probs(static_cast<std::size_t>(n) * cells);
  std::vector<float> out(static_cast<std::size_t>(n) * 2);
  const auto s = scores.values();
  for (int r = 0; r < n; ++r) {
    const float* row = s.data() + static_cast<std::size_t>(r) * cells;
    float* p = probs.data() + static_cast<std::size_t>(r) * cells;
    const float mx = *std::max_element(row, row + cells);
    double z = 0.0;
    for (int k = 0; k < cells; ++k) z += std::exp(static_cast<double>((row[k] - mx) * inv_t));
    double cx = 0.0, cy = 0.0;
    for (int k = 0; k < cells; ++k) {
      p[k] = static_cast<float>(std::exp(static_cast<double>((row[k] - mx) * inv_t)) / z);
      cx += p[k] * ((k % width) + 0.5) / width;
      cy += p[k] * ((k / width) + 0.5) / height;
    }
    out[2 * r] = static_cast<float>(cx);
    out[2 * r + 1] = static_cast<float>(cy);
  }
  return make_result({n, 2}, out, {scores},
                     [probs = std::move(probs), out, n, cells, height, width, inv_t](Node& self) {
                       // d c / d s_k = p_k (u_k - c) / temperature
                       auto& g = self.parents[0]->ensure_grad();
                       for (int r = 0; r < n; ++r) {
                         const float gx = self.grad[2 * r], gy = self.grad[2 * r + 1];
                         const float cx = out[2 * r], cy = out[2 * r + 1];
                         for (int k = 0; k < cells; ++k) {
                           const float p = probs[static_cast<std::size_t>(r) * cells + k];
                           const float ux = ((k % width) + 0.5f) / width;
                           const float uy = ((k / width) + 0.5f) / height;
                           g[static_cast<std::size_t>(r) * cells + k] +=
                               inv_t * p * (gx * (ux - cx) + gy * (uy - cy));
                         }
                       }
                     });
}

StreamNetworks::StreamNetworks(Stream stream, const ModelConfig& c, std::mt19937_64& rng)
    : stream_(stream), patch_size_(c.patch_size), temperature_(c.policy_temperature),
      has_encoder_(c.global_source == GlobalSource::Encode) {
  const int ch = stream_channels(stream);
  glancer_ = nn::ConvStack(ch, c.glancer_widths, {2, 2, 2}, rng);
  policy_ = nn::Conv2d(c.glancer_widths.back(), 1, 1, 1, 0, rng);
  std::vector<int> fw = c.focuser_widths;
  fw.push_back(c.local_dim);
  focuser_ = nn::ConvStack(ch, fw, {2, 2, 2, 1}, rng);
  if (has_encoder_) {
    std::vector<int> ew = c.encoder_widths;
    ew.push_back(c.global_dim);
    encoder_ = nn::ConvStack(ch, ew, {2, 2, 2, 2}, rng);
  }
}

void StreamNetworks::check_frames(const Tensor& frames, const char* op) const {
  if (frames.rank() != 4 || frames.dim(1) != stream_channels(stream_)) {
    throw InvalidInput(std::string(op) + ": " + to_string(stream_) + " stream expects " +
                       std::to_string(stream_channels(stream_)) + " channels, got shape " +
                       shape_string(frames.shape()));
  }
}

Tensor StreamNetworks::glance(const Tensor& frames) const {
  check_frames(frames, "glance");
  return glancer_(frames);
}

Tensor StreamNetworks::select_patch(const Tensor& coarse) const {
  if (coarse.rank() != 4) throw InvalidInput("select_patch expects a coarse map batch");
  const Tensor scores = policy_(coarse);
  const int n = scores.dim(0), h = scores.dim(2), w = scores.dim(3);
  return soft_argmax(ops::reshape(scores, {n, h * w}), h, w, temperature_);
}

Tensor StreamNetworks::focus(const Tensor& patches) const {
  check_frames(patches, "focus");
  if (patches.dim(2) != patch_size_ || patches.dim(3) != patch_size_) {
    throw InvalidInput("focus expects " + std::to_string(patch_size_) + "x" +
                       std::to_string(patch_size_) + " patches, got " + shape_string(patches.shape()));
  }
  return ops::global_avg_pool(focuser_(patches));
}

Tensor StreamNetworks::encode_global(const Tensor& frames) const {
  if (!has_encoder_) throw InvalidConfig("global encoder disabled: features are ingested");
  check_frames(frames, "encode_global");
  return ops::global_avg_pool(encoder_(frames));
}

void StreamNetworks::collect_glancer(const std::string& prefix, nn::NamedTensors& out) const {
  glancer_.collect(prefix + ".glancer", out);
}
void StreamNetworks::collect_policy(const std::string& prefix, nn::NamedTensors& out) const {
  policy_.collect(prefix + ".policy", out);
}
void StreamNetworks::collect_focuser(const std::string& prefix, nn::NamedTensors& out) const {
  focuser_.collect(prefix + ".focuser", out);
}
void StreamNetworks::collect_global(const std::string& prefix, nn::NamedTensors& out) const {
  if (has_encoder_) encoder_.collect(prefix + ".encoder", out);
}

std::vector<sampler::PatchSpec> to_patch_specs(const Tensor& centers, int size_px) {
  std::vector<sampler::PatchSpec> specs;
  const auto v = centers.values();
  for (int r = 0; r < centers.dim(0); ++r) specs.push_back({v[2 * r], v[2 * r + 1], size_px});
  return specs;
}

FusionLayout FusionLayout::from_config(const ModelConfig& m, int audio_dim) {
  FusionLayout l;
  l.dims = {m.global_dim, m.local_dim, m.global_dim, m.local_dim, audio_dim};
  l.enabled = {true, m.use_local, true, m.use_local, true};
  int offset = 0;
  for (int b = 0; b < kBlockCount; ++b) {
    if (!l.enabled[b]) l.dims[b] = 0;
    l.offsets[b] = offset;
    offset += l.dims[b];
  }
  l.total = offset;
  return l;
}

SegmentFeatures fuse(const std::array<std::optional<Tensor>, kBlockCount>& blocks,
                     const FusionLayout& layout, int clips, int segments) {
  static const char* names[kBlockCount] = {"spatial global", "spatial local", "temporal global",
                                           "temporal local", "audio"};
  std::vector<Tensor> parts;
  for (int b = 0; b < kBlockCount; ++b) {
    if (layout.enabled[b] != blocks[b].has_value()) {
      throw InvalidInput(std::string("fuse: ") + names[b] +
                         (layout.enabled[b] ? " block is missing" : " block is not in the layout"));
    }
    if (!layout.enabled[b]) continue;
    Tensor t = *blocks[b];
    const int rows = b == kAudio ? clips : clips * segments;
    if (t.rank() != 2 || t.dim(0) != rows || t.dim(1) != layout.dims[b]) {
      throw InvalidInput(std::string("fuse: ") + names[b] + " block has shape " +
                         shape_string(t.shape()) + ", expected [" + std::to_string(rows) + "x" +
                         std::to_string(layout.dims[b]) + "]");
    }
    if (b == kAudio) {
      std::vector<int> rows_for_segments;
      for (int c = 0; c < clips; ++c)
        for (int s = 0; s < segments; ++s) rows_for_segments.push_back(c);
      t = ops::gather_rows(t, rows_for_segments);
    }
    parts.push_back(t);
  }
  return {ops::concat_cols(parts), layout, clips, segments};
}

FeatureStore::FeatureStore(std::filesystem::path dir, int segments, int rgb_dim, int flow_dim,
                           int audio_dim)
    : dir_(std::move(dir)), segments_(segments), rgb_dim_(rgb_dim), flow_dim_(flow_dim),
      audio_dim_(audio_dim) {
  if (!std::filesystem::is_directory(dir_))
    throw IngestionError("feature directory " + dir_.string() + " does not exist");
}

int FeatureStore::expected_dim(const std::string& modality) const {
  if (modality == "rgb") return rgb_dim_;
  if (modality == "flow") return flow_dim_;
  if (modality == "audio") return audio_dim_;
  throw InvalidInput("unknown feature modality '" + modality + "'");
}

std::vector<float> FeatureStore::load_precomputed(const std::string& clip_id,
                                                  const std::string& modality) const {
  const int dim = expected_dim(modality);
  const auto path = dir_ / (clip_id + "." + modality + ".feat");
  io::FloatArray arr;
  try {
    arr = io::read_array_file(path);
  } catch (const IoError& e) {
    throw IngestionError("clip " + clip_id + " (" + modality + "): " + e.what());
  }
  if (arr.clip_id != clip_id)
    throw IngestionError("clip " + clip_id + " (" + modality + "): header names clip " + arr.clip_id);
  if (arr.shape.size() != 2 || arr.shape[1] != dim) {
    throw IngestionError("clip " + clip_id + " (" + modality + "): feature dim " +
                         (arr.shape.size() == 2 ? std::to_string(arr.shape[1]) : std::string("?")) +
                         " does not match configured " + std::to_string(dim));
  }
  const int rows = arr.shape[0];
  if (modality == "audio" && rows == 1) return arr.values;
  if (rows != segments_) {
    throw IngestionError("clip " + clip_id + " (" + modality + "): " + std::to_string(rows) +
                         " rows, configured " + std::to_string(segments_) + " segments");
  }
  return arr.values;
}

std::vector<int> segment_indices(int clip_frames, int segments) {
  if (segments < 1 || segments > clip_frames)
    throw InvalidConfig("cannot take " + std::to_string(segments) + " segments from " +
                        std::to_string(clip_frames) + " frames");
  std::vector<int> idx(segments);
  for (int i = 0; i < segments; ++i)
    idx[i] = static_cast<int>(std::floor((i + 0.5) * clip_frames / segments));
  return idx;
}

std::vector<int> glance_indices(int segments, int glanced) {
  return segment_indices(segments, glanced);
}

std::vector<int> nearest_glanced(int segments, int glanced) {
  const auto g = glance_indices(segments, glanced);
  std::vector<int> nearest(segments);
  for (int s = 0; s < segments; ++s) {
    int best = 0;
    for (int j = 1; j < glanced; ++j)
      if (std::abs(g[j] - s) < std::abs(g[best] - s)) best = j;
    nearest[s] = best;
  }
  return nearest;
}

ClipBatch make_batch(std::span<const data::Clip* const> clips, const ModelConfig& model) {
  if (clips.empty()) throw InvalidInput("make_batch: no clips");
  const auto* first = clips.front();
  const int h = first->height(), w = first->width(), t_clip = first->frames();
  const int segs = model.segments;
  const auto idx = segment_indices(t_clip, segs);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const int n = static_cast<int>(clips.size());
  const int audio_dim = static_cast<int>(first->audio().size());
  std::vector<float> rgb, flow, audio;
  rgb.reserve(n * segs * 3 * plane);
  flow.reserve(n * segs * 2 * plane);
  ClipBatch batch;
  for (const auto* c : clips) {
    if (c->height() != h || c->width() != w || c->frames() != t_clip ||
        static_cast<int>(c->audio().size()) != audio_dim)
      throw InvalidInput("make_batch: clip " + c->clip_id() + " has inconsistent dimensions");
    for (int s : idx) {
      rgb.insert(rgb.end(), c->rgb().begin() + s * 3 * plane, c->rgb().begin() + (s + 1) * 3 * plane);
      flow.insert(flow.end(), c->flow().begin() + s * 2 * plane, c->flow().begin() + (s + 1) * 2 * plane);
    }
    audio.insert(audio.end(), c->audio().begin(), c->audio().end());
    batch.clip_ids.push_back(c->clip_id());
  }
  batch.clips = n;
  batch.segments = segs;
  batch.rgb = Tensor::from({n * segs, 3, h, w}, std::move(rgb));
  batch.flow = Tensor::from({n * segs, 2, h, w}, std::move(flow));
  batch.audio = Tensor::from({n, audio_dim}, std::move(audio));
  return batch;
}

TwoStreamExtractor::TwoStreamExtractor(const ModelConfig& model, int audio_dim, std::mt19937_64& rng)
    : model_(model), layout_(FusionLayout::from_config(model, audio_dim)),
      spatial_(Stream::Spatial, model, rng), temporal_(Stream::Temporal, model, rng) {}

namespace {

Tensor gather_frames(const Tensor& frames, int clips, int segments, const std::vector<int>& which) {
  const std::size_t frame = frames.numel() / frames.dim(0);
  std::vector<float> out;
  out.reserve(clips * which.size() * frame);
  const auto v = frames.values();
  for (int c = 0; c < clips; ++c)
    for (int s : which) {
      const auto* src = v.data() + (static_cast<std::size_t>(c) * segments + s) * frame;
      out.insert(out.end(), src, src + frame);
    }
  Shape shape = frames.shape();
  shape[0] = clips * static_cast<int>(which.size());
  return Tensor::from(std::move(shape), std::move(out));
}

struct LocalResult {
  Tensor features;
  Tensor centers;
};

LocalResult run_local(const StreamNetworks& net, const Tensor& frames, int clips, int segments,
                      int glanced) {
  Tensor coarse_input = glanced == segments
                            ? frames
                            : gather_frames(frames, clips, segments, glance_indices(segments, glanced));
  Tensor centers = net.select_patch(net.glance(coarse_input));
  if (glanced != segments) {
    const auto nearest = nearest_glanced(segments, glanced);
    std::vector<int> rows;
    for (int c = 0; c < clips; ++c)
      for (int s = 0; s < segments; ++s) rows.push_back(c * glanced + nearest[s]);
    centers = ops::gather_rows(centers, rows);
  }
  Tensor patches = sampler::crop_patches(frames, centers, net.patch_size());
  return {net.focus(patches), centers};
}

Tensor ingest_block(const FeatureStore& store, const ClipBatch& batch, const std::string& modality,
                    int dim, int rows_per_clip) {
  std::vector<float> values;
  for (const auto& id : batch.clip_ids) {
    auto v = store.load_precomputed(id, modality);
    if (modality == "audio" && v.size() != static_cast<std::size_t>(dim)) {
      // Per-segment audio rows are averaged into one clip-level vector.
      std::vector<float> mean(dim, 0.0f);
      const int rows = static_cast<int>(v.size()) / dim;
      for (int r = 0; r < rows; ++r)
        for (int d = 0; d < dim; ++d) mean[d] += v[r * dim + d] / rows;
      v = std::move(mean);
    }
    values.insert(values.end(), v.begin(), v.end());
  }
  return Tensor::from({batch.clips * rows_per_clip, dim}, std::move(values));
}

}  // namespace

ExtractorOutput TwoStreamExtractor::forward(const ClipBatch& batch, const FeatureStore* store) const {
  if (batch.segments != model_.segments)
    throw InvalidInput("batch has " + std::to_string(batch.segments) + " segments, model expects " +
                       std::to_string(model_.segments));
  const int glanced = glance_count(model_);
  std::array<std::optional<Tensor>, kBlockCount> blocks;
  ExtractorOutput out;
  if (model_.global_source == GlobalSource::Encode) {
    blocks[kSpatialGlobal] = spatial_.encode_global(batch.rgb);
    blocks[kTemporalGlobal] = temporal_.encode_global(batch.flow);
    blocks[kAudio] = batch.audio;
  } else {
    if (!store) throw InvalidConfig("ingest mode needs a feature store");
    blocks[kSpatialGlobal] = ingest_block(*store, batch, "rgb", model_.global_dim, batch.segments);
    blocks[kTemporalGlobal] = ingest_block(*store, batch, "flow", model_.global_dim, batch.segments);
    blocks[kAudio] = ingest_block(*store, batch, "audio", layout_.dims[kAudio], 1);
  }
  if (model_.use_local) {
    auto s = run_local(spatial_, batch.rgb, batch.clips, batch.segments, glanced);
    auto t = run_local(temporal_, batch.flow, batch.clips, batch.segments, glanced);
    blocks[kSpatialLocal] = s.features;
    blocks[kTemporalLocal] = t.features;
    out.spatial_centers = s.centers;
    out.temporal_centers = t.centers;
  }
  out.features = fuse(blocks, layout_, batch.clips, batch.segments);
  return out;
}

void TwoStreamExtractor::collect(nn::NamedTensors& out) const {
  for (auto group : {glancer_parameters(), policy_parameters(), focuser_parameters(), global_parameters()})
    out.insert(out.end(), group.begin(), group.end());
}

nn::NamedTensors TwoStreamExtractor::glancer_parameters() const {
  nn::NamedTensors out;
  spatial_.collect_glancer("spatial", out);
  temporal_.collect_glancer("temporal", out);
  return out;
}

nn::NamedTensors TwoStreamExtractor::policy_parameters() const {
  nn::NamedTensors out;
  spatial_.collect_policy("spatial", out);
  temporal_.collect_policy("temporal", out);
  return out;
}

nn::NamedTensors TwoStreamExtractor::focuser_parameters() const {
  nn::NamedTensors out;
  spatial_.collect_focuser("spatial", out);
  temporal_.collect_focuser("temporal", out);
  return out;
}

nn::NamedTensors TwoStreamExtractor::global_parameters() const {
  nn::NamedTensors out;
  spatial_.collect_global("spatial", out);
  temporal_.collect_global("temporal", out);
  return out;
}

}  // namespace patchda::streams
