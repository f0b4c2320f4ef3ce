#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sevbench {

std::string read_text(const std::filesystem::path& path);

/// Non-empty lines, trailing '\r' stripped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes to a sibling temp file then renames over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace sevbench
