#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sevbench/types.hpp"

namespace sevbench {

/// Single-line JSON with lexicographically ordered keys. Optional fields are
/// omitted when absent; system_decisions is omitted when empty.
std::string serialize_interaction(const Interaction& interaction);

/// Throws ParseError naming the offending field, or invariant Error when the
/// record is well-formed but violates Interaction invariants.
Interaction parse_interaction(std::string_view line);

std::vector<Interaction> read_interactions(const std::filesystem::path& path);
void write_interactions(const std::filesystem::path& path, const std::vector<Interaction>& pool);

}  // namespace sevbench
