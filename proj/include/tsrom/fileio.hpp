#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace tsrom {

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

}  // namespace tsrom
