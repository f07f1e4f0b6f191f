#include "patchda/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "patchda/error.hpp"

namespace patchda::io {

using nlohmann::json;

namespace {

std::vector<unsigned char> encode(const std::string& header, std::span<const float> values) {
  std::vector<unsigned char> bytes(header.begin(), header.end());
  bytes.push_back('\n');
  const std::size_t start = bytes.size();
  bytes.resize(start + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[start + 4 * i + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  return bytes;
}

}  // namespace

void write_feature_file(const std::filesystem::path& path, const std::string& clip_id, int rows,
                        int dim, std::span<const float> values) {
  if (static_cast<std::size_t>(rows) * dim != values.size())
    throw InvalidInput("feature payload does not match T x D for " + clip_id);
  json h;
  h["clip_id"] = clip_id;
  h["T"] = rows;
  h["D"] = dim;
  write_bytes(path, encode(h.dump(), values));
}

void write_array_file(const std::filesystem::path& path, const std::string& clip_id,
                      const Shape& shape, std::span<const float> values) {
  if (shape_numel(shape) != values.size())
    throw InvalidInput("array payload does not match shape for " + clip_id);
  json h;
  h["clip_id"] = clip_id;
  h["dtype"] = "f32";
  h["shape"] = shape;
  write_bytes(path, encode(h.dump(), values));
}

FloatArray read_array_file(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const auto newline = std::find(bytes.begin(), bytes.end(), static_cast<unsigned char>('\n'));
  if (newline == bytes.end()) throw CorruptData(path.string() + ": missing header line");
  FloatArray out;
  try {
    const json h = json::parse(std::string(bytes.begin(), newline));
    out.clip_id = h.at("clip_id").get<std::string>();
    if (h.contains("shape")) {
      if (h.contains("dtype") && h["dtype"] != "f32")
        throw CorruptData(path.string() + ": unsupported dtype");
      out.shape = h["shape"].get<Shape>();
    } else {
      out.shape = {h.at("T").get<int>(), h.at("D").get<int>()};
    }
  } catch (const json::exception& e) {
    throw CorruptData(path.string() + ": bad header (" + e.what() + ")");
  }
  for (int d : out.shape)
    if (d < 0) throw CorruptData(path.string() + ": negative extent in header");
  const std::size_t count = shape_numel(out.shape);
  const std::size_t payload = static_cast<std::size_t>(bytes.end() - newline - 1);
  if (payload != count * 4) {
    throw CorruptData(path.string() + ": payload holds " + std::to_string(payload) +
                      " bytes, header declares " + std::to_string(count * 4));
  }
  out.values.resize(count);
  const unsigned char* p = &*newline + 1;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
    out.values[i] = std::bit_cast<float>(u);
    if (!std::isfinite(out.values[i])) throw CorruptData(path.string() + ": non-finite value");
  }
  return out;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_file(const std::filesystem::path& path) { return fnv1a64(read_bytes(path)); }

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

}  // namespace patchda::io
