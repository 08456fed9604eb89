#pragma once

#include <string>
#include <string_view>

namespace reltree::io {

[[nodiscard]] std::string read_file(const std::string& path);

/// Writes via a sibling temp file and rename, so readers never see a partial file.
void write_file_atomic(const std::string& path, std::string_view contents);

/// Lowercase hex SHA-256 of a byte string.
[[nodiscard]] std::string sha256_hex(std::string_view bytes);

[[nodiscard]] std::string file_sha256(const std::string& path);

}  // namespace reltree::io
