#include "patchda/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "patchda/error.hpp"

namespace patchda {

using nlohmann::json;

namespace {

// One addressable JSON field bound to a member of a config struct.
template <typename S>
struct Field {
  std::string key;
  std::function<void(S&, const json&)> read;
  std::function<json(const S&)> write;
};

template <typename S, typename M>
Field<S> field(std::string key, M S::*member) {
  return {key, [member, key](S& s, const json& j) {
            try {
              s.*member = j.get<M>();
            } catch (const json::exception&) {
              throw InvalidConfig("config key '" + key + "' has the wrong type");
            }
          },
          [member](const S& s) { return json(s.*member); }};
}

template <typename S>
void read_fields(S& s, const json& j, const std::vector<Field<S>>& fields, const std::string& where) {
  if (!j.is_object()) throw InvalidConfig("config section '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const Field<S>& f) { return f.key == key; });
    if (it == fields.end()) throw InvalidConfig("unknown config key '" + where + "." + key + "'");
    it->read(s, value);
  }
}

template <typename S>
json write_fields(const S& s, const std::vector<Field<S>>& fields) {
  json j = json::object();
  for (const auto& f : fields) j[f.key] = f.write(s);
  return j;
}

const std::vector<Field<DomainStyle>>& style_fields() {
  static const std::vector<Field<DomainStyle>> f{
      field("palette", &DomainStyle::palette),
      field("texture", &DomainStyle::texture),
      field("brightness", &DomainStyle::brightness),
      field("distractors", &DomainStyle::distractors),
      field("distractor_speed", &DomainStyle::distractor_speed),
      field("audio_shift", &DomainStyle::audio_shift),
  };
  return f;
}

template <typename S>
Field<S> style_field(std::string key, DomainStyle S::*member) {
  return {key,
          [member, key](S& s, const json& j) { read_fields(s.*member, j, style_fields(), "data." + key); },
          [member](const S& s) { return write_fields(s.*member, style_fields()); }};
}

const std::vector<Field<DatasetConfig>>& data_fields() {
  static const std::vector<Field<DatasetConfig>> f{
      field("verbs", &DatasetConfig::verbs),
      field("nouns", &DatasetConfig::nouns),
      field("train_clips", &DatasetConfig::train_clips),
      field("val_clips", &DatasetConfig::val_clips),
      field("frames", &DatasetConfig::frames),
      field("frame_size", &DatasetConfig::frame_size),
      field("sprite_size", &DatasetConfig::sprite_size),
      field("min_speed", &DatasetConfig::min_speed),
      field("max_speed", &DatasetConfig::max_speed),
      field("audio_dim", &DatasetConfig::audio_dim),
      field("audio_separation", &DatasetConfig::audio_separation),
      field("audio_noise", &DatasetConfig::audio_noise),
      field("pixel_noise", &DatasetConfig::pixel_noise),
      style_field("source", &DatasetConfig::source),
      style_field("target", &DatasetConfig::target),
      field("seed", &DatasetConfig::seed),
  };
  return f;
}

const std::vector<Field<ModelConfig>>& model_fields() {
  static const std::vector<Field<ModelConfig>> f{
      field("segments", &ModelConfig::segments),
      field("glance_segments", &ModelConfig::glance_segments),
      field("patch_size", &ModelConfig::patch_size),
      field("use_local", &ModelConfig::use_local),
      {"global_source",
       [](ModelConfig& m, const json& j) {
         const auto s = j.is_string() ? j.get<std::string>() : std::string{};
         if (s == "encode") m.global_source = GlobalSource::Encode;
         else if (s == "ingest") m.global_source = GlobalSource::Ingest;
         else throw InvalidConfig("model.global_source must be \"encode\" or \"ingest\"");
       },
       [](const ModelConfig& m) {
         return json(m.global_source == GlobalSource::Encode ? "encode" : "ingest");
       }},
      field("feature_dir", &ModelConfig::feature_dir),
      field("global_dim", &ModelConfig::global_dim),
      field("local_dim", &ModelConfig::local_dim),
      field("glancer_widths", &ModelConfig::glancer_widths),
      field("focuser_widths", &ModelConfig::focuser_widths),
      field("encoder_widths", &ModelConfig::encoder_widths),
      field("policy_temperature", &ModelConfig::policy_temperature),
      field("feat_dim", &ModelConfig::feat_dim),
      field("relation_hidden", &ModelConfig::relation_hidden),
      field("relation_tuples", &ModelConfig::relation_tuples),
  };
  return f;
}

const std::vector<Field<LossWeights>>& weight_fields() {
  static const std::vector<Field<LossWeights>> f{
      field("lambda_sd", &LossWeights::lambda_sd),
      field("lambda_rd", &LossWeights::lambda_rd),
      field("lambda_td", &LossWeights::lambda_td),
      field("gamma", &LossWeights::gamma),
  };
  return f;
}

const std::vector<Field<TrainConfig>>& train_fields() {
  static const std::vector<Field<TrainConfig>> f{
      field("lr_glancer", &TrainConfig::lr_glancer),
      field("lr_focuser", &TrainConfig::lr_focuser),
      field("lr_policy", &TrainConfig::lr_policy),
      field("lr_global", &TrainConfig::lr_global),
      field("lr_aux_head", &TrainConfig::lr_aux_head),
      field("lr_adapt", &TrainConfig::lr_adapt),
      field("lr_decay", &TrainConfig::lr_decay),
      field("lr_milestones", &TrainConfig::lr_milestones),
      field("momentum", &TrainConfig::momentum),
      field("weight_decay", &TrainConfig::weight_decay),
      field("epochs_local", &TrainConfig::epochs_local),
      field("epochs_adapt", &TrainConfig::epochs_adapt),
      field("batch_size", &TrainConfig::batch_size),
      {"weights",
       [](TrainConfig& t, const json& j) { read_fields(t.weights, j, weight_fields(), "train.weights"); },
       [](const TrainConfig& t) { return write_fields(t.weights, weight_fields()); }},
      field("grl_warmup", &TrainConfig::grl_warmup),
      field("seed", &TrainConfig::seed),
  };
  return f;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw InvalidConfig(what);
}

void validate_style(const DomainStyle& s, const std::string& name) {
  check(s.palette >= 0 && s.palette <= 3, "data." + name + ".palette must be in [0,3]");
  check(s.texture >= 0 && s.texture <= 3, "data." + name + ".texture must be in [0,3]");
  check(s.distractors >= 0, "data." + name + ".distractors must be >= 0");
  check(s.distractor_speed >= 0, "data." + name + ".distractor_speed must be >= 0");
  check(std::isfinite(s.brightness) && std::isfinite(s.audio_shift),
        "data." + name + " values must be finite");
}

}  // namespace

void validate(const DatasetConfig& c) {
  check(c.verbs >= 1 && c.verbs <= 8, "data.verbs must be in [1,8]");
  check(c.nouns >= 1 && c.nouns <= 6, "data.nouns must be in [1,6]");
  check(c.train_clips >= 1 && c.val_clips >= 1, "data clip counts must be >= 1");
  check(c.frames >= 2, "data.frames must be >= 2");
  check(c.frame_size >= 16, "data.frame_size must be >= 16");
  check(c.sprite_size >= 4 && c.sprite_size * 2 < c.frame_size, "data.sprite_size out of range");
  check(c.min_speed >= 0 && c.max_speed >= c.min_speed, "data speed range invalid");
  check(c.sprite_size + (c.frames - 1) * c.max_speed < c.frame_size,
        "sprite trajectory does not fit in the frame");
  check(c.audio_dim >= 1, "data.audio_dim must be >= 1");
  check(c.audio_separation >= 0 && c.audio_noise >= 0 && c.pixel_noise >= 0,
        "data noise levels must be >= 0");
  validate_style(c.source, "source");
  validate_style(c.target, "target");
}

void validate(const ModelConfig& c) {
  check(c.segments >= 2, "model.segments must be >= 2");
  check(c.glance_segments >= 0 && c.glance_segments <= c.segments,
        "model.glance_segments must be in [0, segments]");
  check(c.patch_size >= 1, "model.patch_size must be >= 1");
  check(c.global_dim >= 1 && c.local_dim >= 1, "feature dims must be >= 1");
  check(c.glancer_widths.size() == 3, "model.glancer_widths needs 3 entries");
  check(c.focuser_widths.size() == 3, "model.focuser_widths needs 3 entries");
  check(c.encoder_widths.size() == 3, "model.encoder_widths needs 3 entries");
  for (const auto* v : {&c.glancer_widths, &c.focuser_widths, &c.encoder_widths})
    for (int w : *v) check(w >= 1, "conv widths must be >= 1");
  check(c.policy_temperature > 0, "model.policy_temperature must be > 0");
  check(c.feat_dim >= 4, "model.feat_dim must be >= 4");
  check(c.relation_hidden >= 1, "model.relation_hidden must be >= 1");
  check(c.relation_tuples >= 1, "model.relation_tuples must be >= 1");
  check(c.global_source == GlobalSource::Encode || !c.feature_dir.empty(),
        "model.feature_dir is required when global_source is \"ingest\"");
}

void validate(const TrainConfig& c) {
  for (float lr : {c.lr_glancer, c.lr_focuser, c.lr_policy, c.lr_global, c.lr_aux_head, c.lr_adapt})
    check(lr >= 0 && std::isfinite(lr), "learning rates must be finite and >= 0");
  check(c.lr_decay > 0, "train.lr_decay must be > 0");
  for (std::size_t i = 1; i < c.lr_milestones.size(); ++i)
    check(c.lr_milestones[i] > c.lr_milestones[i - 1], "train.lr_milestones must be strictly increasing");
  check(c.momentum >= 0 && c.momentum < 1, "train.momentum must be in [0,1)");
  check(c.weight_decay >= 0, "train.weight_decay must be >= 0");
  check(c.epochs_local >= 0 && c.epochs_adapt >= 0, "epoch counts must be >= 0");
  check(c.batch_size >= 1, "train.batch_size must be >= 1");
  const auto& w = c.weights;
  check(w.lambda_sd >= 0 && w.lambda_rd >= 0 && w.lambda_td >= 0 && w.gamma >= 0,
        "loss weights must be >= 0");
}

void validate(const Config& c) {
  validate(c.data);
  validate(c.model);
  validate(c.train);
  check(c.model.segments <= c.data.frames, "model.segments exceeds data.frames");
  check(c.model.patch_size <= c.data.frame_size, "model.patch_size exceeds data.frame_size");
}

Config config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidConfig("config must be a JSON object");
  Config c;
  for (const auto& [key, value] : j.items()) {
    if (key == "data") read_fields(c.data, value, data_fields(), "data");
    else if (key == "model") read_fields(c.model, value, model_fields(), "model");
    else if (key == "train") read_fields(c.train, value, train_fields(), "train");
    else throw InvalidConfig("unknown config key '" + key + "'");
  }
  validate(c);
  return c;
}

std::string config_to_json(const Config& c) {
  json j;
  j["data"] = write_fields(c.data, data_fields());
  j["model"] = write_fields(c.model, model_fields());
  j["train"] = write_fields(c.train, train_fields());
  return j.dump(2);
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

int glance_count(const ModelConfig& c) {
  return c.glance_segments == 0 ? c.segments : c.glance_segments;
}

}  // namespace patchda
