#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sevbench/types.hpp"

namespace sevbench::benchmark {

enum class Split : std::uint8_t { kDevelopment, kHoldout };

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view text);

struct LineageEntry {
  std::string period;
  std::size_t delta_size = 0;
  std::string kind;  // "merge" or "adopt"

  bool operator==(const LineageEntry&) const = default;
};

/// Versioned membership of one shared benchmark split. Manifests are values:
/// every operation returns a new manifest with a recomputed checksum.
struct DatasetManifest {
  std::string name;
  Split split = Split::kDevelopment;
  std::string period;
  std::vector<std::string> member_ids;
  std::map<std::string, SeverityLabel> gold_labels;
  std::vector<LineageEntry> lineage;
  std::string checksum;

  bool operator==(const DatasetManifest&) const = default;
};

/// Manifest JSON with sorted keys and without the checksum field.
std::string canonical_serialization(const DatasetManifest& manifest);
std::string compute_checksum(const DatasetManifest& manifest);
/// Distinct members, labels keyed exactly by members, checksum current.
void validate(const DatasetManifest& manifest);

/// A manifest with no members yet.
DatasetManifest empty_manifest(std::string name, Split split, std::string period);

struct Candidate {
  std::string id;
  SeverityLabel label;
};

struct Delta {
  Split split = Split::kDevelopment;
  std::string period;
  std::vector<Candidate> items;
};

struct Partition {
  Delta development;
  Delta holdout;
};

/// Seeded split of gold-labeled candidates; the holdout receives
/// round(holdout_fraction * n) of them. Candidates keep their input order
/// within each side. Throws Error("conflict") naming any candidate already in
/// one of `existing`.
Partition partition_delta(std::span<const Candidate> candidates, double holdout_fraction,
                          std::uint64_t seed, std::span<const DatasetManifest> existing,
                          const std::string& period);

/// Union of prior members and the delta; lineage gains (period, |delta|).
DatasetManifest merge_period(const DatasetManifest& prior, const Delta& delta);

/// Overwrites labels for the supplied members; lineage gains (period, |new_gold|).
DatasetManifest adopt_labels(const DatasetManifest& manifest,
                             const std::map<std::string, SeverityLabel>& new_gold,
                             const std::string& period);

/// Throws Error("conflict") when any id sits in both a development and a
/// holdout manifest.
void check_disjoint(std::span<const DatasetManifest> manifests);

struct ReplayItem {
  std::string id;
  std::string baseline_digest;
  std::string candidate_digest;
  bool changed = false;
  bool needs_annotation = false;
};

struct ReplayReport {
  std::string dataset_name;
  Split split = Split::kDevelopment;
  std::string period;
  std::string manifest_checksum;
  std::vector<ReplayItem> items;
  std::size_t unchanged = 0;
  std::size_t changed = 0;
  /// Gold proportions over unchanged items; absent when every item changed.
  std::optional<ProportionEstimate> forecast;
  /// Fraction of members whose response changed and whose label is unknown.
  double unresolved_mass = 0.0;
};

/// SHA-256 of the whitespace-normalized response.
std::string response_digest(std::string_view response);

ReplayReport replay(const DatasetManifest& manifest,
                    const std::map<std::string, std::string>& baseline,
                    const std::map<std::string, std::string>& candidate);

nlohmann::json to_json(const DatasetManifest& manifest);
/// Parses and validates (including the checksum).
DatasetManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ReplayReport& report);

/// "manifest-<name>-<split>-<period>.json"
std::string manifest_filename(const DatasetManifest& manifest);
/// Writes atomically into `directory`; returns the path written.
std::filesystem::path write_manifest(const std::filesystem::path& directory,
                                     const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace sevbench::benchmark
