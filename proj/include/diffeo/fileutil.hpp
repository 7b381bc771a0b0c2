#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace diffeo {

std::string read_file(const std::filesystem::path& path);

/// Write via a sibling temp file and rename, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);

}  // namespace diffeo
