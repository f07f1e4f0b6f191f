#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "patchda/tensor.hpp"

// Binary array container shared by clip files and precomputed feature files:
// one UTF-8 JSON header line terminated by '\n', then little-endian float32
// values in row-major order.
//
//   feature file header: {"clip_id":"...","T":6,"D":512}
//   clip array header:   {"clip_id":"...","dtype":"f32","shape":[6,3,64,64]}
namespace patchda::io {

struct FloatArray {
  std::string clip_id;
  Shape shape;
  std::vector<float> values;
};

void write_feature_file(const std::filesystem::path& path, const std::string& clip_id, int rows,
                        int dim, std::span<const float> values);
void write_array_file(const std::filesystem::path& path, const std::string& clip_id,
                      const Shape& shape, std::span<const float> values);

// Accepts either header style. Throws IoError when the file is missing and
// CorruptData on a bad header, a short or long payload, or non-finite values.
FloatArray read_array_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

std::vector<unsigned char> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace patchda::io
