#include "patchda/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>

#include <json.hpp>

#include "patchda/error.hpp"
#include "patchda/io.hpp"
#include "patchda/optim.hpp"

namespace patchda::harness {

using nlohmann::ordered_json;

const std::vector<data::Clip>& DatasetView::split(data::Domain domain, data::Split split) {
  const auto key = std::make_pair(domain, split);
  auto it = cache_.find(key);
  if (it == cache_.end()) it = cache_.emplace(key, data::load_split(manifest_, domain, split)).first;
  return it->second;
}

std::string EpochLog::to_json() const {
  ordered_json j;
  j["phase"] = phase;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["grl_lambda"] = grl_lambda;
  j["L_y_verb"] = losses.y_verb;
  j["L_y_noun"] = losses.y_noun;
  j["L_sd"] = losses.sd;
  ordered_json rd = ordered_json::object();
  for (const auto& [n, v] : losses.rd) rd[std::to_string(n)] = v;
  j["L_rd"] = rd;
  j["L_td"] = losses.td;
  j["L_ae_verb"] = losses.ae_verb;
  j["L_ae_noun"] = losses.ae_noun;
  j["total"] = losses.total;
  return j.dump();
}

namespace {

std::optional<streams::FeatureStore> feature_store(const Config& config) {
  const auto& m = config.model;
  if (m.global_source != GlobalSource::Ingest) return std::nullopt;
  return streams::FeatureStore(m.feature_dir, m.segments, m.global_dim, m.global_dim, config.data.audio_dim);
}

std::vector<const data::Clip*> pointers(std::span<const data::Clip> clips) {
  std::vector<const data::Clip*> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(&c);
  return out;
}

template <typename F>
void for_batches(std::size_t count, int batch_size, F&& f) {
  for (std::size_t begin = 0; begin < count; begin += batch_size)
    f(begin, std::min(count, begin + static_cast<std::size_t>(batch_size)));
}

class EpochSink {
 public:
  explicit EpochSink(const TrainOptions& options) : options_(options) {
    if (!options_.log_path.empty()) {
      if (options_.log_path.has_parent_path()) std::filesystem::create_directories(options_.log_path.parent_path());
      log_.open(options_.log_path, std::ios::trunc);
      if (!log_) throw IoError("cannot open training log " + options_.log_path.string());
    }
  }

  void emit(const EpochLog& entry) {
    if (log_.is_open()) {
      log_ << entry.to_json() << '\n';
      log_.flush();
    }
    if (options_.history) options_.history->push_back(entry);
    if (options_.on_epoch) options_.on_epoch(entry);
  }

 private:
  const TrainOptions& options_;
  std::ofstream log_;
};

void check_finite(double value, int epoch, const std::string& component) {
  if (!std::isfinite(value)) throw TrainingAbort(epoch, component);
}

// A step that overflows the weights is reported before the next forward pass trips over it.
void check_finite(const Sgd& optimizer, int epoch) {
  for (const auto& g : optimizer.groups())
    for (const auto& p : g.params)
      for (float v : p.values())
        if (!std::isfinite(v)) throw TrainingAbort(epoch, "parameters." + g.name);
}

std::vector<adaptation::TrainingLabel> training_labels(std::span<const data::Clip* const> clips) {
  std::vector<adaptation::TrainingLabel> out;
  out.reserve(clips.size());
  for (const auto* c : clips) out.push_back({c->domain(), c->training_labels()});
  return out;
}

}  // namespace

Checkpoint train_local(DatasetView& dataset, const Config& config, const TrainOptions& options) {
  validate(config);
  const auto& t = config.train;
  const auto& clips = dataset.split(data::Domain::Source, data::Split::Train);
  if (clips.empty()) throw InvalidInput("train_local: source train split is empty");

  auto model = std::make_shared<ActionModel>(config);
  const auto store = feature_store(config);
  const auto& extractor = model->extractor();

  std::vector<Sgd::Group> groups;
  const auto add_group = [&](const std::string& name, const nn::NamedTensors& params, float lr) {
    if (params.empty()) return;
    Sgd::Group g{name, {}, lr};
    for (const auto& [n, p] : params) g.params.push_back(p);
    groups.push_back(std::move(g));
  };
  add_group("glancer", extractor.glancer_parameters(), t.lr_glancer);
  add_group("policy", extractor.policy_parameters(), t.lr_policy);
  add_group("focuser", extractor.focuser_parameters(), t.lr_focuser);
  add_group("global", extractor.global_parameters(), t.lr_global);
  add_group("aux", model->aux_parameters(), t.lr_aux_head);
  Sgd optimizer(std::move(groups), t.momentum, t.weight_decay);

  std::mt19937_64 rng(t.seed ^ 0x10ca1ULL);
  std::vector<const data::Clip*> order = pointers(clips);
  EpochSink sink(options);
  std::size_t steps = 0;

  for (int epoch = 1; epoch <= t.epochs_local; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum_v = 0, sum_n = 0;
    std::size_t seen = 0;
    for_batches(order.size(), t.batch_size, [&](std::size_t b, std::size_t e) {
      const std::span<const data::Clip* const> part(order.data() + b, e - b);
      const auto batch = streams::make_batch(part, config.model);
      std::optional<streams::ExtractorOutput> out;
      try {
        out = extractor.forward(batch, store ? &*store : nullptr);
      } catch (const InvalidInput& e) {
        // inputs were validated on load, so after a step this means the weights blew up
        if (steps == 0) throw;
        throw TrainingAbort(epoch, std::string("forward (") + e.what() + ")");
      }
      ++steps;
      const auto prediction = model->aux_classify(out->features);
      const auto labels = training_labels(part);
      const auto loss = adaptation::classification_loss(prediction, labels);
      const Tensor total = ops::add(loss.verb, loss.noun);
      check_finite(loss.verb.item(), epoch, "aux.verb");
      check_finite(loss.noun.item(), epoch, "aux.noun");
      optimizer.zero_grad();
      total.backward();
      optimizer.step();
      check_finite(optimizer, epoch);
      sum_v += loss.verb.item() * part.size();
      sum_n += loss.noun.item() * part.size();
      seen += part.size();
    });
    EpochLog entry;
    entry.phase = "local";
    entry.epoch = epoch;
    for (const auto& g : optimizer.groups()) entry.lr[g.name] = g.lr;
    entry.losses.y_verb = sum_v / seen;
    entry.losses.y_noun = sum_n / seen;
    entry.losses.total = entry.losses.y_verb + entry.losses.y_noun;
    sink.emit(entry);
  }
  return Checkpoint{"local", t.epochs_local, model};
}

std::vector<std::vector<float>> extract_features(const ActionModel& model, std::span<const data::Clip> clips,
                                                 int batch_size) {
  NoGradGuard no_grad;
  const auto store = feature_store(model.config());
  const auto ptrs = pointers(clips);
  std::vector<std::vector<float>> out;
  out.reserve(clips.size());
  for_batches(ptrs.size(), batch_size, [&](std::size_t b, std::size_t e) {
    const auto batch = streams::make_batch(std::span(ptrs.data() + b, e - b), model.config().model);
    const auto f = model.extractor().forward(batch, store ? &*store : nullptr).features;
    const std::size_t per_clip = static_cast<std::size_t>(f.segments) * f.layout.total;
    const auto v = f.e.values();
    for (int c = 0; c < f.clips; ++c)
      out.emplace_back(v.begin() + c * per_clip, v.begin() + (c + 1) * per_clip);
  });
  return out;
}

namespace {

Tensor stack_features(const std::vector<std::vector<float>>& features, std::span<const std::size_t> which,
                      int segments, int dim) {
  std::vector<float> values;
  values.reserve(which.size() * segments * dim);
  for (std::size_t i : which) values.insert(values.end(), features[i].begin(), features[i].end());
  return Tensor::from({static_cast<int>(which.size()) * segments, dim}, std::move(values));
}

adaptation::ActionPrediction first_rows(const adaptation::ActionPrediction& p, int rows) {
  std::vector<int> idx(rows);
  std::iota(idx.begin(), idx.end(), 0);
  return {ops::gather_rows(p.verb_logits, idx), ops::gather_rows(p.noun_logits, idx)};
}

}  // namespace

Checkpoint train_adapt(DatasetView& dataset, const Checkpoint& init, const Config& config,
                       const TrainOptions& options) {
  validate(config);
  if (!init.model) throw InvalidInput("train_adapt: initial checkpoint has no model");
  if (init.phase == "init") throw InvalidInput("train_adapt: initial checkpoint has not been through phase 1");
  std::string why;
  if (!extractor_compatible(init.model->config(), config, &why))
    throw InvalidConfig("phase-1 checkpoint does not match config: " + why);

  const auto& t = config.train;
  const auto& source = dataset.split(data::Domain::Source, data::Split::Train);
  const auto& target = dataset.split(data::Domain::Target, data::Split::Train);
  if (source.empty() || target.empty()) throw InvalidInput("train_adapt: both train splits must be non-empty");

  auto model = std::make_shared<ActionModel>(config);
  copy_parameters(init.model->extractor_parameters(), model->extractor_parameters());
  copy_parameters(init.model->aux_parameters(), model->aux_parameters());
  const auto frozen = model->extractor_parameters();
  nn::set_requires_grad(frozen, false);
  const std::uint64_t frozen_hash = parameter_hash(frozen);

  const auto source_features = extract_features(*model, source);
  const auto target_features = extract_features(*model, target);
  const int segments = config.model.segments;
  const int dim = model->extractor().layout().total;

  Sgd::Group group{"adapt", {}, t.lr_adapt};
  for (const auto& [n, p] : model->adaptation_parameters()) group.params.push_back(p);
  Sgd optimizer({std::move(group)}, t.momentum, t.weight_decay);

  std::mt19937_64 rng(t.seed ^ 0xada97ULL);
  std::vector<std::size_t> source_order(source.size()), target_order(target.size());
  std::iota(source_order.begin(), source_order.end(), 0);
  std::iota(target_order.begin(), target_order.end(), 0);
  const int batch = t.batch_size;
  const std::size_t steps_per_epoch = (source.size() + batch - 1) / batch;
  const double total_steps = static_cast<double>(steps_per_epoch) * t.epochs_adapt;
  std::size_t step = 0;
  EpochSink sink(options);

  for (int epoch = 1; epoch <= t.epochs_adapt; ++epoch) {
    const float lr = step_decay_lr(t.lr_adapt, t.lr_decay, t.lr_milestones, epoch);
    optimizer.set_lr("adapt", lr);
    std::shuffle(source_order.begin(), source_order.end(), rng);
    std::shuffle(target_order.begin(), target_order.end(), rng);
    adaptation::LossValues sum;
    double lambda_sum = 0;
    std::size_t target_cursor = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t b = s * batch;
      const std::size_t e = std::min(source.size(), b + batch);
      const int ns = static_cast<int>(e - b);
      std::vector<std::size_t> tgt_idx;
      for (int k = 0; k < ns; ++k) {
        if (target_cursor == target_order.size()) target_cursor = 0;
        tgt_idx.push_back(target_order[target_cursor++]);
      }
      const std::span<const std::size_t> src_idx(source_order.data() + b, e - b);
      const Tensor src_e = stack_features(source_features, src_idx, segments, dim);
      const Tensor tgt_e = stack_features(target_features, tgt_idx, segments, dim);
      const std::vector<Tensor> halves{src_e, tgt_e};
      const Tensor features = ops::concat_rows(halves);
      std::vector<int> domains(ns, adaptation::kSourceLabel);
      domains.resize(2 * ns, adaptation::kTargetLabel);

      const float lambda = t.grl_warmup ? grl_warmup(static_cast<float>(step / total_steps)) : 1.0f;
      const std::uint64_t tuple_seed = t.seed * 1000003ULL + step;
      auto pass = model->adapt_forward(features, 2 * ns, domains, lambda, tuple_seed);

      std::vector<const data::Clip*> labeled;
      for (std::size_t i : src_idx) labeled.push_back(&source[i]);
      const auto labels = training_labels(labeled);
      const auto cls = adaptation::classification_loss(first_rows(pass.prediction, ns), labels);
      const auto sd = adaptation::frame_domain_loss(model->frame_discriminator(), pass.z, domains, lambda);
      const auto td = adaptation::video_domain_loss(model->video_discriminator(), pass.video, domains, lambda);
      const auto ae = adaptation::attentive_entropy(pass.prediction, td.prediction.probs);

      adaptation::LossBreakdown parts;
      parts.y_verb = cls.verb;
      parts.y_noun = cls.noun;
      parts.sd = sd.loss;
      parts.rd = pass.relation_domains.loss;
      parts.td = td.loss;
      parts.ae_verb = ae.verb;
      parts.ae_noun = ae.noun;
      const Tensor total = adaptation::total_loss(parts, t.weights, epoch);
      optimizer.zero_grad();
      total.backward();
      optimizer.step();
      check_finite(optimizer, epoch);

      const auto v = adaptation::loss_values(parts, total);
      sum.y_verb += v.y_verb;
      sum.y_noun += v.y_noun;
      sum.sd += v.sd;
      sum.td += v.td;
      sum.ae_verb += v.ae_verb;
      sum.ae_noun += v.ae_noun;
      sum.total += v.total;
      for (const auto& [n, x] : v.rd) sum.rd[n] += x;
      lambda_sum += lambda;
    }
    const double k = static_cast<double>(steps_per_epoch);
    EpochLog entry;
    entry.phase = "adapt";
    entry.epoch = epoch;
    entry.lr["adapt"] = lr;
    entry.grl_lambda = lambda_sum / k;
    entry.losses = {sum.y_verb / k, sum.y_noun / k, sum.sd / k, sum.td / k,
                    sum.ae_verb / k, sum.ae_noun / k, sum.total / k, {}};
    for (const auto& [n, x] : sum.rd) entry.losses.rd[n] = x / k;
    sink.emit(entry);
  }

  if (parameter_hash(frozen) != frozen_hash)
    throw ContractViolation("train_adapt modified frozen extractor parameters");
  return Checkpoint{"adapt", t.epochs_adapt, model};
}

MetricsReport evaluate(const Checkpoint& checkpoint, DatasetView& dataset, data::Domain domain,
                       data::Split split) {
  const auto& clips = dataset.split(domain, split);
  if (clips.empty()) throw InvalidInput("cannot evaluate an empty split: " + data::to_string(domain) + "/" +
                                        data::to_string(split));
  return evaluate_clips(checkpoint, clips, data::to_string(domain) + "/" + data::to_string(split));
}

MetricsReport evaluate_clips(const Checkpoint& checkpoint, std::span<const data::Clip> clips,
                             const std::string& split_name) {
  if (!checkpoint.model) throw InvalidInput("evaluate: checkpoint has no model");
  if (clips.empty()) throw InvalidInput("cannot evaluate an empty split: " + split_name);
  NoGradGuard no_grad;
  const auto& model = *checkpoint.model;
  const auto& cfg = model.config();
  const auto store = feature_store(cfg);
  const auto ptrs = pointers(clips);
  std::vector<float> verb_probs, noun_probs;
  std::vector<data::Labels> labels;
  std::map<std::string, int> counts;
  const bool local_only = checkpoint.phase != "adapt";
  for_batches(ptrs.size(), 16, [&](std::size_t b, std::size_t e) {
    const std::span<const data::Clip* const> part(ptrs.data() + b, e - b);
    const auto batch = streams::make_batch(part, cfg.model);
    const auto out = model.extractor().forward(batch, store ? &*store : nullptr);
    adaptation::ActionPrediction prediction;
    if (local_only) {
      prediction = model.aux_classify(out.features);
    } else {
      std::vector<int> domains;
      for (const auto* c : part) domains.push_back(adaptation::domain_label(c->domain()));
      prediction = model.adapt_forward(out.features.e, batch.clips, domains, 0.0f, kEvalTupleSeed).prediction;
    }
    const auto pv = ops::softmax_rows(prediction.verb_logits);
    const auto pn = ops::softmax_rows(prediction.noun_logits);
    verb_probs.insert(verb_probs.end(), pv.begin(), pv.end());
    noun_probs.insert(noun_probs.end(), pn.begin(), pn.end());
    for (const auto* c : part) {
      labels.push_back(c->evaluation_labels());
      ++counts[data::to_string(c->domain()) + "/" + data::to_string(c->split())];
    }
  });
  auto report = compute_metrics(verb_probs, noun_probs, labels, cfg.data.verbs, cfg.data.nouns, split_name);
  report.counts = counts;
  return report;
}

std::vector<std::vector<sampler::PatchSpec>> spatial_patches(const ActionModel& model,
                                                             std::span<const data::Clip> clips) {
  const auto& cfg = model.config();
  if (!cfg.model.use_local) throw InvalidConfig("model has no local branch");
  NoGradGuard no_grad;
  const auto ptrs = pointers(clips);
  const auto& spatial = model.extractor().spatial();
  const int glanced = glance_count(cfg.model);
  const auto which = streams::glance_indices(cfg.model.segments, glanced);
  const auto nearest = streams::nearest_glanced(cfg.model.segments, glanced);
  std::vector<std::vector<sampler::PatchSpec>> out;
  for_batches(ptrs.size(), 16, [&](std::size_t b, std::size_t e) {
    const std::span<const data::Clip* const> part(ptrs.data() + b, e - b);
    const auto batch = streams::make_batch(part, cfg.model);
    const int n = batch.clips, segs = batch.segments;
    const std::size_t frame = batch.rgb.numel() / batch.rgb.dim(0);
    std::vector<float> glance_frames;
    for (int c = 0; c < n; ++c)
      for (int s : which) {
        const auto* src = batch.rgb.values().data() + (static_cast<std::size_t>(c) * segs + s) * frame;
        glance_frames.insert(glance_frames.end(), src, src + frame);
      }
    Shape shape = batch.rgb.shape();
    shape[0] = n * glanced;
    const Tensor centers = spatial.select_patch(spatial.glance(Tensor::from(shape, std::move(glance_frames))));
    const auto specs = streams::to_patch_specs(centers, cfg.model.patch_size);
    const int h = shape[2], w = shape[3];
    for (int c = 0; c < n; ++c) {
      std::vector<sampler::PatchSpec> per_clip;
      for (int s = 0; s < segs; ++s)
        per_clip.push_back(sampler::clamp_center(specs[c * glanced + nearest[s]], h, w));
      out.push_back(std::move(per_clip));
    }
  });
  return out;
}

namespace {

data::Box rect_box(const sampler::PixelRect& r) {
  return {static_cast<float>(r.left), static_cast<float>(r.top), static_cast<float>(r.right),
          static_cast<float>(r.bottom)};
}

}  // namespace

PatchLocalization patch_localization(const ActionModel& model, std::span<const data::Clip> clips,
                                     std::uint64_t seed, int random_draws) {
  if (clips.empty()) throw InvalidInput("patch_localization: no clips");
  const auto patches = spatial_patches(model, clips);
  const int segs = model.config().model.segments;
  const int p = model.config().model.patch_size;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PatchLocalization r;
  double policy = 0, random = 0, center = 0;
  const sampler::PatchSpec middle{0.5, 0.5, p};
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const auto& clip = clips[c];
    if (clip.sprite_boxes().size() != static_cast<std::size_t>(clip.frames()))
      throw InvalidInput("patch_localization: clip " + clip.clip_id() + " has no sprite boxes");
    const auto frames = streams::segment_indices(clip.frames(), segs);
    for (int s = 0; s < segs; ++s) {
      const auto& truth = clip.sprite_boxes()[frames[s]];
      policy += data::iou(rect_box(sampler::patch_rect(patches[c][s], clip.height(), clip.width())), truth);
      double acc = 0;
      for (int k = 0; k < random_draws; ++k) {
        const sampler::PatchSpec spec{unit(rng), unit(rng), p};
        acc += data::iou(rect_box(sampler::patch_rect(spec, clip.height(), clip.width())), truth);
      }
      random += acc / random_draws;
      center += data::iou(rect_box(sampler::patch_rect(middle, clip.height(), clip.width())), truth);
      ++r.frames;
    }
  }
  r.policy_iou = policy / r.frames;
  r.random_iou = random / r.frames;
  r.center_iou = center / r.frames;
  return r;
}

void write_ppm(const std::filesystem::path& path, int height, int width, std::span<const float> chw) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (chw.size() != 3 * plane) throw InvalidInput("write_ppm expects 3 x H x W values");
  std::string bytes = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(chw[c * plane + i], 0.0f, 1.0f);
      bytes.push_back(static_cast<char>(std::lround(v * 255.0f)));
    }
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  io::write_bytes(path, std::span(data, bytes.size()));
}

std::vector<std::filesystem::path> visualize_patches(const Checkpoint& checkpoint,
                                                     std::span<const data::Clip> clips,
                                                     const std::filesystem::path& out_dir) {
  if (!checkpoint.model) throw InvalidInput("visualize_patches: checkpoint has no model");
  const auto patches = spatial_patches(*checkpoint.model, clips);
  const int segs = checkpoint.model->config().model.segments;
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const auto& clip = clips[c];
    const int h = clip.height(), w = clip.width();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const auto frames = streams::segment_indices(clip.frames(), segs);
    for (int s = 0; s < segs; ++s) {
      const auto* src = clip.rgb().data() + frames[s] * 3 * plane;
      std::vector<float> image(src, src + 3 * plane);
      const sampler::ImageGrid grid(3, h, w, image);
      const auto crop = sampler::crop_patch(grid, patches[c][s]);

      const auto r = sampler::patch_rect(patches[c][s], h, w);
      const auto paint = [&](int y, int x) {
        if (y < 0 || y >= h || x < 0 || x >= w) return;
        image[y * w + x] = 1.0f;
        image[plane + y * w + x] = 0.0f;
        image[2 * plane + y * w + x] = 0.0f;
      };
      for (int x = r.left; x < r.right; ++x) {
        paint(r.top, x);
        paint(r.bottom - 1, x);
      }
      for (int y = r.top; y < r.bottom; ++y) {
        paint(y, r.left);
        paint(y, r.right - 1);
      }
      const std::string stem = clip.clip_id() + "_f" + std::to_string(s);
      const auto overlay = out_dir / (stem + ".ppm");
      const auto patch = out_dir / (stem + "_crop.ppm");
      write_ppm(overlay, h, w, image);
      write_ppm(patch, crop.height, crop.width, crop.data);
      written.push_back(overlay);
      written.push_back(patch);
    }
  }
  return written;
}

}  // namespace patchda::harness
