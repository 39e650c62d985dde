#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace chainqa {

/// Write-temp-then-rename so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

}  // namespace chainqa
