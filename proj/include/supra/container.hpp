#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "supra/tensor.hpp"

namespace supra {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Binary named-tensor file: magic "SUPRA1", u32 length + canonical JSON
/// metadata, u32 entry count, then per entry u32 name length, name bytes,
/// u32 rank, u32 dims and little-endian float32 values. Shared by checkpoints
/// and feature files.
struct Container {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> entries;

  const NamedTensor* find(const std::string& name) const;
};

std::string encode_container(const Container& container);
Container decode_container(const std::string& bytes, const std::string& origin);

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and rename, creating parent directories.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace supra
