#pragma once

// IDV1 vector container:
//   "IDV1" | u32 count | u32 dim | count*dim f32 | [u32 len | len bytes JSON]
// All integers and floats little-endian. The trailing metadata block is
// optional; a file that ends after the payload has no metadata.

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "idforge/numkit.hpp"

namespace idforge {

struct IdvFile {
  Matrix rows;
  std::optional<nlohmann::json> metadata;
};

std::string encode_idv(const Matrix& rows, const std::optional<nlohmann::json>& metadata = {});
IdvFile decode_idv(const std::string& bytes);

void write_idv(const std::filesystem::path& path, const Matrix& rows,
               const std::optional<nlohmann::json>& metadata = {});
IdvFile read_idv(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace idforge
