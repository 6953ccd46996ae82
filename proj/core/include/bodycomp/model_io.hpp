#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

namespace bodycomp::model_io {

// Model files are a manifest (JSON) followed by one little-endian 64-bit
// float blob, guarded by an FNV-1a checksum recorded in the manifest:
//
//   bytes 0..7   magic "BCMODEL1"
//   bytes 8..15  manifest length, little-endian uint64
//   manifest     UTF-8 JSON
//   blob         manifest["blob_doubles"] * 8 bytes, little-endian doubles
//
// The same container carries both network and baseline models.

struct Container {
  nlohmann::json manifest;
  std::vector<double> blob;
};

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n);

void write_container(const std::filesystem::path& path,
                     nlohmann::json manifest, const std::vector<double>& blob);

// Verifies magic, manifest integrity and blob checksum; throws on
// truncation or mismatch.
Container read_container(const std::filesystem::path& path);

}  // namespace bodycomp::model_io
