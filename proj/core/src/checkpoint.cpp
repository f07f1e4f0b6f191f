#include "patchda/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <json.hpp>

#include "patchda/error.hpp"
#include "patchda/io.hpp"

namespace patchda {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "patchda-checkpoint/1";

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

std::vector<unsigned char> pack(const nn::NamedTensors& params, json& table) {
  std::size_t total = 0;
  for (const auto& [name, t] : params) total += t.numel();
  std::vector<unsigned char> blob(total * sizeof(float));
  std::size_t offset = 0;
  table = json::array();
  for (const auto& [name, t] : params) {
    std::memcpy(blob.data() + offset * sizeof(float), t.values().data(), t.numel() * sizeof(float));
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  return blob;
}

}  // namespace

std::uint64_t parameter_hash(const nn::NamedTensors& params) {
  json table;
  const auto blob = pack(params, table);
  return io::fnv1a64(blob);
}

void copy_parameters(const nn::NamedTensors& from, const nn::NamedTensors& to) {
  std::map<std::string, const Tensor*> index;
  for (const auto& [name, t] : from) index[name] = &t;
  for (auto [name, t] : to) {
    auto it = index.find(name);
    if (it == index.end()) throw InvalidInput("copy_parameters: missing parameter " + name);
    if (it->second->shape() != t.shape())
      throw InvalidInput("copy_parameters: shape mismatch for " + name);
    auto src = it->second->values();
    std::copy(src.begin(), src.end(), t.mutable_values().begin());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir) {
  if (!checkpoint.model) throw InvalidInput("save_checkpoint: no model");
  json table;
  const auto blob = pack(checkpoint.model->all_parameters(), table);
  json manifest = {
      {"format", kFormat},
      {"phase", checkpoint.phase},
      {"epoch", checkpoint.epoch},
      {"seed", checkpoint.model->config().train.seed},
      {"config", json::parse(config_to_json(checkpoint.model->config()))},
      {"params", table},
      {"blob_bytes", blob.size()},
      {"blob_fnv1a64", io::hex64(io::fnv1a64(blob))},
  };
  std::filesystem::create_directories(dir);
  io::write_bytes(dir / "params.bin", blob);
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir, const Config* expected) {
  if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
  json manifest;
  try {
    manifest = json::parse(io::read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw CorruptData("checkpoint manifest unreadable: " + std::string(e.what()));
  }
  Checkpoint out;
  Config stored;
  std::vector<unsigned char> blob;
  json table;
  try {
    if (manifest.at("format") != kFormat) throw CorruptData("unsupported checkpoint format");
    out.phase = manifest.at("phase").get<std::string>();
    out.epoch = manifest.at("epoch").get<int>();
    stored = config_from_json(manifest.at("config").dump());
    table = manifest.at("params");
    blob = io::read_bytes(dir / "params.bin");
    if (blob.size() != manifest.at("blob_bytes").get<std::size_t>())
      throw CorruptData("checkpoint blob has " + std::to_string(blob.size()) + " bytes, manifest says " +
                        manifest.at("blob_bytes").dump());
    if (io::hex64(io::fnv1a64(blob)) != manifest.at("blob_fnv1a64").get<std::string>())
      throw CorruptData("checkpoint blob checksum mismatch in " + dir.string());
  } catch (const json::exception& e) {
    throw CorruptData("checkpoint manifest malformed: " + std::string(e.what()));
  }
  if (expected) {
    std::string why;
    if (!model_compatible(*expected, stored, &why))
      throw InvalidConfig("checkpoint " + dir.string() + " does not match config: " + why);
  }
  out.model = std::make_shared<ActionModel>(stored);
  auto params = out.model->all_parameters();
  if (table.size() != params.size()) throw CorruptData("checkpoint parameter table size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& row = table[i];
    if (row.at("name") != name || row.at("shape").get<Shape>() != t.shape())
      throw CorruptData("checkpoint parameter " + row.at("name").get<std::string>() + " does not match model");
    const auto offset = row.at("offset").get<std::size_t>();
    if ((offset + t.numel()) * sizeof(float) > blob.size()) throw CorruptData("checkpoint blob too short");
    std::memcpy(t.mutable_values().data(), blob.data() + offset * sizeof(float), t.numel() * sizeof(float));
  }
  return out;
}

}  // namespace patchda
