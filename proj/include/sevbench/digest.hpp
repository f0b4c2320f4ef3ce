#pragma once

#include <string>
#include <string_view>

namespace sevbench {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

/// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

}  // namespace sevbench
