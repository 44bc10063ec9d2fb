#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mnde {

/// Writes `content` to a sibling temporary file and renames it over `file`.
void write_atomic(const std::filesystem::path& file, std::string_view content);

std::string read_file(const std::filesystem::path& file);

/// Shortest text that reads back to the same double.
std::string format_double(double v);

} // namespace mnde
