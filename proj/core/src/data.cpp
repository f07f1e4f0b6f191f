#include "patchda/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

#include "patchda/error.hpp"
#include "patchda/io.hpp"

namespace patchda::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Sprite { Square, Disk, Triangle, Plus, Diamond, Cross, Ring, Frame, Bar };

constexpr std::array<Sprite, 6> kNounShapes{Sprite::Square, Sprite::Disk, Sprite::Triangle,
                                           Sprite::Plus, Sprite::Diamond, Sprite::Cross};
constexpr std::array<Sprite, 3> kDistractorShapes{Sprite::Ring, Sprite::Frame, Sprite::Bar};

// Unit direction per verb; image y grows downwards.
constexpr std::array<std::array<float, 2>, 8> kVerbDirections{{
    {-1, 0}, {1, 0}, {0, -1}, {0, 1},
    {-0.70710678f, -0.70710678f}, {0.70710678f, -0.70710678f},
    {-0.70710678f, 0.70710678f}, {0.70710678f, 0.70710678f},
}};

using Rgb = std::array<float, 3>;

struct Palette {
  Rgb a, b;        // background colors
  Rgb accent[2];   // distractor colors
};

constexpr std::array<Palette, 4> kPalettes{{
    {{0.55f, 0.45f, 0.35f}, {0.40f, 0.32f, 0.25f}, {{0.75f, 0.70f, 0.55f}, {0.30f, 0.25f, 0.20f}}},
    {{0.30f, 0.42f, 0.55f}, {0.45f, 0.55f, 0.62f}, {{0.20f, 0.30f, 0.45f}, {0.70f, 0.75f, 0.80f}}},
    {{0.35f, 0.50f, 0.35f}, {0.25f, 0.38f, 0.28f}, {{0.55f, 0.65f, 0.40f}, {0.15f, 0.25f, 0.15f}}},
    {{0.50f, 0.50f, 0.50f}, {0.35f, 0.35f, 0.35f}, {{0.65f, 0.65f, 0.65f}, {0.20f, 0.20f, 0.20f}}},
}};

constexpr std::array<Rgb, 6> kSpriteColors{{
    {0.95f, 0.20f, 0.15f}, {0.15f, 0.85f, 0.25f}, {0.20f, 0.35f, 0.95f},
    {0.95f, 0.90f, 0.15f}, {0.90f, 0.20f, 0.90f}, {0.10f, 0.90f, 0.90f},
}};

// (u, v) are offsets from the center in units of the half-size.
bool inside(Sprite s, float u, float v) {
  const float au = std::abs(u), av = std::abs(v);
  switch (s) {
    case Sprite::Square: return au <= 0.85f && av <= 0.85f;
    case Sprite::Disk: return u * u + v * v <= 1.0f;
    case Sprite::Triangle: return v >= -0.9f && v <= 0.9f && au <= (v + 0.9f) / 1.8f * 0.95f;
    case Sprite::Plus: return (au <= 0.3f && av <= 1.0f) || (av <= 0.3f && au <= 1.0f);
    case Sprite::Diamond: return au + av <= 1.0f;
    case Sprite::Cross: {
      const float a = std::abs(u - v), b = std::abs(u + v);
      return (a <= 0.42f && b <= 1.4f) || (b <= 0.42f && a <= 1.4f);
    }
    case Sprite::Ring: {
      const float r2 = u * u + v * v;
      return r2 <= 1.0f && r2 >= 0.36f;
    }
    case Sprite::Frame: return std::max(au, av) <= 1.0f && std::max(au, av) >= 0.6f;
    case Sprite::Bar: return au <= 1.0f && av <= 0.3f;
  }
  return false;
}

// Coverage of pixel (px, py) by a shape of side `size` centered at (cx, cy),
// all in pixel-area coordinates, using 3x3 supersampling.
float coverage(Sprite s, float cx, float cy, float size, int px, int py) {
  const float half = size / 2.0f;
  if (px + 1 < cx - half || px > cx + half || py + 1 < cy - half || py > cy + half) return 0.0f;
  int hits = 0;
  for (int sy = 0; sy < 3; ++sy)
    for (int sx = 0; sx < 3; ++sx) {
      const float x = px + (sx + 0.5f) / 3.0f;
      const float y = py + (sy + 0.5f) / 3.0f;
      if (inside(s, (x - cx) / half, (y - cy) / half)) ++hits;
    }
  return hits / 9.0f;
}

std::uint64_t clip_seed(std::uint64_t seed, Domain d, Split s, int index) {
  std::uint64_t parts[4] = {seed, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(s),
                            static_cast<std::uint64_t>(index)};
  return io::fnv1a64(std::span(reinterpret_cast<const unsigned char*>(parts), sizeof(parts)));
}

struct Mover {
  Sprite shape;
  Rgb color;
  float size;
  float x, y;    // center at frame 0
  float vx, vy;  // px per frame
};

// Class-conditioned audio means shared across domains, plus one offset
// direction per domain; all derived from the dataset seed.
struct AudioModel {
  std::vector<std::vector<float>> verb_means, noun_means;
  std::vector<float> domain_direction[2];
};

std::vector<float> random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> v(dim);
  double norm = 0;
  for (auto& x : v) {
    x = n(rng);
    norm += x * x;
  }
  norm = std::sqrt(std::max(norm, 1e-12));
  for (auto& x : v) x = static_cast<float>(x / norm);
  return v;
}

AudioModel make_audio_model(const DatasetConfig& c) {
  std::mt19937_64 rng(c.seed ^ 0xa0d10a0d10ULL);
  AudioModel m;
  // Orthogonal-ish unit directions scaled so distinct classes sit
  // `audio_separation` apart.
  const float scale = c.audio_separation / std::numbers::sqrt2_v<float>;
  for (int v = 0; v < c.verbs; ++v) {
    auto u = random_unit(c.audio_dim, rng);
    for (auto& x : u) x *= scale;
    m.verb_means.push_back(std::move(u));
  }
  for (int n = 0; n < c.nouns; ++n) {
    auto u = random_unit(c.audio_dim, rng);
    for (auto& x : u) x *= scale;
    m.noun_means.push_back(std::move(u));
  }
  m.domain_direction[0] = random_unit(c.audio_dim, rng);
  m.domain_direction[1] = random_unit(c.audio_dim, rng);
  return m;
}

void background(const DomainStyle& style, int size, std::mt19937_64& rng, std::vector<float>& bg) {
  const Palette& pal = kPalettes[style.palette];
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  const float phase = unit(rng) * 2.0f * std::numbers::pi_v<float>;
  const float shift = unit(rng) * 8.0f;
  struct Blob {
    float x, y, r, w;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < 5; ++i)
    blobs.push_back({unit(rng) * size, unit(rng) * size, 6.0f + unit(rng) * 10.0f, unit(rng)});
  std::vector<float> coarse(16 * 16);
  for (auto& v : coarse) v = unit(rng);

  bg.assign(static_cast<std::size_t>(3) * size * size, 0.0f);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      float t = 0.0f;
      switch (style.texture) {
        case 0: t = 0.5f + 0.5f * std::sin(2.0f * std::numbers::pi_v<float> * x / 8.0f + phase); break;
        case 1: t = ((static_cast<int>((x + shift) / 8) + static_cast<int>((y + shift) / 8)) % 2) ? 1.0f : 0.0f; break;
        case 2:
          for (const auto& b : blobs) {
            const float d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
            t += b.w * std::exp(-d2 / (2 * b.r * b.r));
          }
          t = std::min(t, 1.0f);
          break;
        default: t = coarse[(y * 16 / size) * 16 + (x * 16 / size)]; break;
      }
      for (int ch = 0; ch < 3; ++ch)
        bg[(static_cast<std::size_t>(ch) * size + y) * size + x] = pal.a[ch] * (1 - t) + pal.b[ch] * t;
    }
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }
std::string to_string(Split s) { return s == Split::Train ? "train" : "val"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw InvalidInput("unknown domain '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  throw InvalidInput("unknown split '" + s + "'");
}

std::pair<Domain, Split> parse_domain_split(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) throw InvalidInput("split must look like target/val, got '" + s + "'");
  return {parse_domain(s.substr(0, slash)), parse_split(s.substr(slash + 1))};
}

float iou(const Box& a, const Box& b) {
  const float ix = std::max(0.0f, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const float iy = std::max(0.0f, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const float inter = ix * iy;
  const float uni = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
  return uni > 0 ? inter / uni : 0.0f;
}

const ClipRecord& DatasetManifest::find(const std::string& clip_id) const {
  auto it = std::find_if(clips.begin(), clips.end(), [&](const ClipRecord& r) { return r.clip_id == clip_id; });
  if (it == clips.end()) throw IoError("clip '" + clip_id + "' is not in the manifest");
  return *it;
}

std::vector<const ClipRecord*> DatasetManifest::select(Domain domain, Split split) const {
  std::vector<const ClipRecord*> out;
  for (const auto& r : clips)
    if (r.domain == domain && r.split == split) out.push_back(&r);
  return out;
}

Clip::Clip(std::string clip_id, Domain domain, Split split, int frames, int height, int width,
           std::vector<float> rgb, std::vector<float> flow, std::vector<float> audio, Labels labels,
           std::vector<Box> sprite_boxes)
    : clip_id_(std::move(clip_id)), domain_(domain), split_(split), frames_(frames),
      height_(height), width_(width), rgb_(std::move(rgb)), flow_(std::move(flow)),
      audio_(std::move(audio)), labels_(labels), sprite_boxes_(std::move(sprite_boxes)) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (frames < 2 || height < 2 || width < 2) throw InvalidInput("clip " + clip_id_ + ": bad dimensions");
  if (rgb_.size() != frames * 3 * plane || flow_.size() != frames * 2 * plane)
    throw InvalidInput("clip " + clip_id_ + ": frame arrays do not match T x C x H x W");
  for (const auto* arr : {&rgb_, &flow_, &audio_})
    for (float v : *arr)
      if (!std::isfinite(v)) throw InvalidInput("clip " + clip_id_ + ": non-finite value");
}

Labels Clip::training_labels() const {
  if (domain_ == Domain::Target)
    throw ContractViolation("target clip " + clip_id_ + " labels requested by a training path");
  return labels_;
}

std::string make_clip_id(Domain domain, Split split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%s-%04d", domain == Domain::Source ? "src" : "tgt",
                to_string(split).c_str(), index);
  return buf;
}

Clip render_clip(const DatasetConfig& c, Domain domain, Split split, int index) {
  validate(c);
  const DomainStyle& style = domain == Domain::Source ? c.source : c.target;
  std::mt19937_64 rng(clip_seed(c.seed, domain, split, index));
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  const int size = c.frame_size, frames = c.frames;
  const std::size_t plane = static_cast<std::size_t>(size) * size;

  Labels labels{index % c.verbs, (index / c.verbs) % c.nouns};

  // Sprite trajectory stays fully inside the frame.
  Mover sprite;
  sprite.shape = kNounShapes[labels.noun];
  sprite.color = kSpriteColors[static_cast<std::size_t>(unit(rng) * kSpriteColors.size()) % kSpriteColors.size()];
  sprite.size = static_cast<float>(c.sprite_size);
  const float speed = c.min_speed + (c.max_speed - c.min_speed) * unit(rng);
  sprite.vx = kVerbDirections[labels.verb][0] * speed;
  sprite.vy = kVerbDirections[labels.verb][1] * speed;
  const float half = sprite.size / 2.0f;
  const float travel_x = sprite.vx * (frames - 1), travel_y = sprite.vy * (frames - 1);
  const float lo_x = half - std::min(0.0f, travel_x), hi_x = size - half - std::max(0.0f, travel_x);
  const float lo_y = half - std::min(0.0f, travel_y), hi_y = size - half - std::max(0.0f, travel_y);
  sprite.x = lo_x + (hi_x - lo_x) * unit(rng);
  sprite.y = lo_y + (hi_y - lo_y) * unit(rng);

  std::vector<Mover> distractors;
  const Palette& pal = kPalettes[style.palette];
  for (int i = 0; i < style.distractors; ++i) {
    Mover d;
    d.shape = kDistractorShapes[static_cast<std::size_t>(unit(rng) * 3) % 3];
    d.color = pal.accent[i % 2];
    d.size = sprite.size * (0.8f + 0.4f * unit(rng));
    d.x = d.size / 2 + (size - d.size) * unit(rng);
    d.y = d.size / 2 + (size - d.size) * unit(rng);
    d.vx = style.distractor_speed * (2 * unit(rng) - 1);
    d.vy = style.distractor_speed * (2 * unit(rng) - 1);
    distractors.push_back(d);
  }

  std::vector<float> bg;
  background(style, size, rng, bg);

  std::vector<float> rgb(frames * 3 * plane), flow(frames * 2 * plane, 0.0f);
  std::vector<Box> boxes;
  std::normal_distribution<float> pixel_noise(0.0f, 1.0f);
  for (int t = 0; t < frames; ++t) {
    float* frame = rgb.data() + t * 3 * plane;
    float* fl = flow.data() + t * 2 * plane;
    std::copy(bg.begin(), bg.end(), frame);
    auto paint = [&](const Mover& m) {
      const float cx = m.x + m.vx * t, cy = m.y + m.vy * t;
      const int x_lo = std::max(0, static_cast<int>(std::floor(cx - m.size / 2)) - 1);
      const int x_hi = std::min(size - 1, static_cast<int>(std::ceil(cx + m.size / 2)) + 1);
      const int y_lo = std::max(0, static_cast<int>(std::floor(cy - m.size / 2)) - 1);
      const int y_hi = std::min(size - 1, static_cast<int>(std::ceil(cy + m.size / 2)) + 1);
      for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x) {
          const float a = coverage(m.shape, cx, cy, m.size, x, y);
          if (a <= 0.0f) continue;
          const std::size_t p = static_cast<std::size_t>(y) * size + x;
          for (int ch = 0; ch < 3; ++ch) frame[ch * plane + p] = frame[ch * plane + p] * (1 - a) + m.color[ch] * a;
          if (a >= 0.5f) {
            fl[p] = m.vx;
            fl[plane + p] = m.vy;
          }
        }
    };
    for (const auto& d : distractors) paint(d);
    paint(sprite);
    const float cx = sprite.x + sprite.vx * t, cy = sprite.y + sprite.vy * t;
    boxes.push_back({cx - half, cy - half, cx + half, cy + half});
    for (std::size_t i = 0; i < 3 * plane; ++i) {
      frame[i] += style.brightness;
      if (c.pixel_noise > 0) frame[i] += c.pixel_noise * pixel_noise(rng);
    }
  }

  const AudioModel audio_model = make_audio_model(c);
  std::vector<float> audio(c.audio_dim);
  std::normal_distribution<float> audio_noise(0.0f, 1.0f);
  const auto& shift_dir = audio_model.domain_direction[domain == Domain::Source ? 0 : 1];
  for (int i = 0; i < c.audio_dim; ++i) {
    audio[i] = audio_model.verb_means[labels.verb][i] + audio_model.noun_means[labels.noun][i] +
               style.audio_shift * shift_dir[i] + c.audio_noise * audio_noise(rng);
  }

  return Clip(make_clip_id(domain, split, index), domain, split, frames, size, size, std::move(rgb),
              std::move(flow), std::move(audio), labels, std::move(boxes));
}

namespace {

json record_to_json(const ClipRecord& r) {
  json boxes = json::array();
  for (const auto& b : r.sprite_boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
  return {{"clip_id", r.clip_id}, {"domain", to_string(r.domain)}, {"split", to_string(r.split)},
          {"verb", r.labels.verb}, {"noun", r.labels.noun}, {"rgb", r.rgb_file},
          {"flow", r.flow_file}, {"audio", r.audio_file}, {"sprite_boxes", boxes}};
}

ClipRecord record_from_json(const json& j) {
  ClipRecord r;
  r.clip_id = j.at("clip_id").get<std::string>();
  r.domain = parse_domain(j.at("domain").get<std::string>());
  r.split = parse_split(j.at("split").get<std::string>());
  r.labels = {j.at("verb").get<int>(), j.at("noun").get<int>()};
  r.rgb_file = j.at("rgb").get<std::string>();
  r.flow_file = j.at("flow").get<std::string>();
  r.audio_file = j.at("audio").get<std::string>();
  for (const auto& b : j.at("sprite_boxes")) r.sprite_boxes.push_back({b[0], b[1], b[2], b[3]});
  return r;
}

}  // namespace

DatasetManifest generate(const DatasetConfig& config, const fs::path& root) {
  validate(config);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw IoError("cannot create dataset directory " + root.string());

  DatasetManifest manifest;
  manifest.config = config;
  manifest.root = root;
  for (Domain d : {Domain::Source, Domain::Target})
    for (Split s : {Split::Train, Split::Val}) {
      const int count = s == Split::Train ? config.train_clips : config.val_clips;
      for (int i = 0; i < count; ++i) {
        Clip clip = render_clip(config, d, s, i);
        ClipRecord r;
        r.clip_id = clip.clip_id();
        r.domain = d;
        r.split = s;
        r.labels = clip.evaluation_labels();
        const std::string dir = to_string(d) + "/" + to_string(s) + "/";
        r.rgb_file = dir + r.clip_id + ".rgb.bin";
        r.flow_file = dir + r.clip_id + ".flow.bin";
        r.audio_file = "audio/" + r.clip_id + ".audio.bin";
        r.sprite_boxes = clip.sprite_boxes();
        const int t = clip.frames(), h = clip.height(), w = clip.width();
        io::write_array_file(root / r.rgb_file, r.clip_id, {t, 3, h, w}, clip.rgb());
        io::write_array_file(root / r.flow_file, r.clip_id, {t, 2, h, w}, clip.flow());
        io::write_array_file(root / r.audio_file, r.clip_id, {config.audio_dim}, clip.audio());
        manifest.clips.push_back(std::move(r));
      }
    }

  json j;
  j["format"] = "patchda-dataset/1";
  j["config"] = json::parse(config_to_json(Config{config, {}, {}}))["data"];
  j["clips"] = json::array();
  for (const auto& r : manifest.clips) j["clips"].push_back(record_to_json(r));
  io::write_text(root / "manifest.json", j.dump(1));
  return manifest;
}

DatasetManifest load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) throw IoError("no manifest.json under " + root.string());
  DatasetManifest m;
  m.root = root;
  try {
    const json j = json::parse(io::read_text(path));
    json wrapper;
    wrapper["data"] = j.at("config");
    m.config = config_from_json(wrapper.dump()).data;
    for (const auto& c : j.at("clips")) m.clips.push_back(record_from_json(c));
  } catch (const json::exception& e) {
    throw CorruptData("manifest " + path.string() + " is malformed: " + e.what());
  }
  return m;
}

Clip load_clip(const DatasetManifest& manifest, const std::string& clip_id) {
  const ClipRecord& r = manifest.find(clip_id);
  const auto& c = manifest.config;
  try {
    auto rgb = io::read_array_file(manifest.root / r.rgb_file);
    auto flow = io::read_array_file(manifest.root / r.flow_file);
    auto audio = io::read_array_file(manifest.root / r.audio_file);
    const Shape want_rgb{c.frames, 3, c.frame_size, c.frame_size};
    const Shape want_flow{c.frames, 2, c.frame_size, c.frame_size};
    if (rgb.shape != want_rgb || flow.shape != want_flow || audio.shape != Shape{c.audio_dim})
      throw CorruptData("array shapes disagree with the dataset config");
    if (rgb.clip_id != clip_id || flow.clip_id != clip_id || audio.clip_id != clip_id)
      throw CorruptData("file header names a different clip");
    return Clip(r.clip_id, r.domain, r.split, c.frames, c.frame_size, c.frame_size,
                std::move(rgb.values), std::move(flow.values), std::move(audio.values), r.labels,
                r.sprite_boxes);
  } catch (const CorruptData& e) {
    throw CorruptData("clip " + clip_id + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError("clip " + clip_id + ": " + e.what());
  }
}

std::vector<Clip> load_split(const DatasetManifest& manifest, Domain domain, Split split) {
  std::vector<Clip> out;
  for (const auto* r : manifest.select(domain, split)) out.push_back(load_clip(manifest, r->clip_id));
  return out;
}

std::uint64_t dataset_hash(const DatasetManifest& manifest) {
  std::uint64_t h = io::fnv1a64(io::read_bytes(manifest.root / "manifest.json"));
  for (const auto& r : manifest.clips)
    for (const auto* f : {&r.rgb_file, &r.flow_file, &r.audio_file})
      h = io::fnv1a64(io::read_bytes(manifest.root / *f), h);
  return h;
}

const std::vector<std::string>& noun_names() {
  static const std::vector<std::string> n{"square", "disk", "triangle", "plus", "diamond", "cross"};
  return n;
}

const std::vector<std::string>& verb_names() {
  static const std::vector<std::string> v{"left", "right", "up", "down",
                                          "up-left", "up-right", "down-left", "down-right"};
  return v;
}

}  // namespace patchda::data
