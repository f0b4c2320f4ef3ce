#include "sevbench/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sevbench/digest.hpp"
#include "sevbench/error.hpp"
#include "sevbench/estimation.hpp"
#include "sevbench/io.hpp"
#include "sevbench/rng.hpp"

namespace sevbench::benchmark {

using nlohmann::json;

namespace {

json body_json(const DatasetManifest& m) {
  json labels = json::object();
  for (const auto& [id, label] : m.gold_labels) labels[id] = std::string(to_string(label));
  json lineage = json::array();
  for (const auto& e : m.lineage) {
    lineage.push_back({{"period", e.period}, {"delta_size", e.delta_size}, {"kind", e.kind}});
  }
  return {{"name", m.name},
          {"split", std::string(to_string(m.split))},
          {"period", m.period},
          {"member_ids", m.member_ids},
          {"gold_labels", std::move(labels)},
          {"lineage", std::move(lineage)}};
}

DatasetManifest sealed(DatasetManifest m) {
  m.checksum = compute_checksum(m);
  return m;
}

}  // namespace

std::string_view to_string(Split split) {
  return split == Split::kDevelopment ? "development" : "holdout";
}

std::optional<Split> parse_split(std::string_view text) {
  if (text == "development") return Split::kDevelopment;
  if (text == "holdout") return Split::kHoldout;
  return std::nullopt;
}

std::string canonical_serialization(const DatasetManifest& manifest) {
  return body_json(manifest).dump();
}

std::string compute_checksum(const DatasetManifest& manifest) {
  return sha256_hex(canonical_serialization(manifest));
}

void validate(const DatasetManifest& manifest) {
  std::set<std::string> members;
  for (const auto& id : manifest.member_ids) {
    if (!members.insert(id).second) {
      throw invariant_error("manifest '" + manifest.name + "' repeats member '" + id + "'");
    }
  }
  if (members.size() != manifest.gold_labels.size() ||
      !std::equal(members.begin(), members.end(), manifest.gold_labels.begin(),
                  [](const std::string& id, const auto& entry) { return id == entry.first; })) {
    throw invariant_error("manifest '" + manifest.name + "' gold labels are not keyed by members");
  }
  if (manifest.checksum != compute_checksum(manifest)) {
    throw invariant_error("manifest '" + manifest.name + "' checksum mismatch");
  }
}

DatasetManifest empty_manifest(std::string name, Split split, std::string period) {
  DatasetManifest m;
  m.name = std::move(name);
  m.split = split;
  m.period = std::move(period);
  return sealed(std::move(m));
}

Partition partition_delta(std::span<const Candidate> candidates, double holdout_fraction,
                          std::uint64_t seed, std::span<const DatasetManifest> existing,
                          const std::string& period) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw precondition_error("holdout fraction must lie strictly between 0 and 1");
  }
  std::set<std::string> seen;
  for (const auto& c : candidates) {
    if (!seen.insert(c.id).second) throw Error("conflict", "duplicate candidate '" + c.id + "'");
  }
  for (const auto& m : existing) {
    for (const auto& c : candidates) {
      if (m.gold_labels.contains(c.id)) {
        throw Error("conflict", "candidate '" + c.id + "' already in manifest '" + m.name + "' (" +
                                    std::string(to_string(m.split)) + ", " + m.period + ")");
      }
    }
  }

  const std::size_t n = candidates.size();
  const auto holdout_size =
      static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(n)));
  Rng rng(seed);
  const auto chosen = rng.sample_without_replacement(n, holdout_size);
  std::vector<bool> in_holdout(n, false);
  for (auto i : chosen) in_holdout[i] = true;

  Partition out;
  out.development = {Split::kDevelopment, period, {}};
  out.holdout = {Split::kHoldout, period, {}};
  for (std::size_t i = 0; i < n; ++i) {
    (in_holdout[i] ? out.holdout : out.development).items.push_back(candidates[i]);
  }
  return out;
}

DatasetManifest merge_period(const DatasetManifest& prior, const Delta& delta) {
  validate(prior);
  if (delta.split != prior.split) {
    throw Error("split_mismatch", "cannot merge a " + std::string(to_string(delta.split)) +
                                      " delta into a " + std::string(to_string(prior.split)) +
                                      " manifest");
  }
  DatasetManifest next = prior;
  next.period = delta.period;
  for (const auto& item : delta.items) {
    if (!next.gold_labels.emplace(item.id, item.label).second) {
      throw Error("conflict", "delta id '" + item.id + "' overlaps manifest '" + prior.name + "'");
    }
    next.member_ids.push_back(item.id);
  }
  next.lineage.push_back({delta.period, delta.items.size(), "merge"});
  return sealed(std::move(next));
}

DatasetManifest adopt_labels(const DatasetManifest& manifest,
                             const std::map<std::string, SeverityLabel>& new_gold,
                             const std::string& period) {
  validate(manifest);
  DatasetManifest next = manifest;
  for (const auto& [id, label] : new_gold) {
    auto it = next.gold_labels.find(id);
    if (it == next.gold_labels.end()) {
      throw Error("not_found", "id '" + id + "' is not a member of manifest '" + manifest.name + "'");
    }
    it->second = label;
  }
  next.lineage.push_back({period, new_gold.size(), "adopt"});
  return sealed(std::move(next));
}

void check_disjoint(std::span<const DatasetManifest> manifests) {
  std::map<std::string, const DatasetManifest*> development;
  for (const auto& m : manifests) {
    if (m.split != Split::kDevelopment) continue;
    for (const auto& id : m.member_ids) development.emplace(id, &m);
  }
  for (const auto& m : manifests) {
    if (m.split != Split::kHoldout) continue;
    for (const auto& id : m.member_ids) {
      if (auto it = development.find(id); it != development.end()) {
        throw Error("conflict", "id '" + id + "' is in development manifest '" +
                                    it->second->name + "' and holdout manifest '" + m.name + "'");
      }
    }
  }
}

std::string response_digest(std::string_view response) {
  return sha256_hex(normalize_whitespace(response));
}

ReplayReport replay(const DatasetManifest& manifest,
                    const std::map<std::string, std::string>& baseline,
                    const std::map<std::string, std::string>& candidate) {
  validate(manifest);
  ReplayReport report;
  report.dataset_name = manifest.name;
  report.split = manifest.split;
  report.period = manifest.period;
  report.manifest_checksum = manifest.checksum;

  std::vector<SeverityLabel> kept;
  for (const auto& id : manifest.member_ids) {
    auto b = baseline.find(id);
    if (b == baseline.end()) throw Error("not_found", "baseline has no response for '" + id + "'");
    auto c = candidate.find(id);
    if (c == candidate.end()) throw Error("not_found", "candidate has no response for '" + id + "'");
    ReplayItem item;
    item.id = id;
    item.baseline_digest = response_digest(b->second);
    item.candidate_digest = response_digest(c->second);
    item.changed = item.baseline_digest != item.candidate_digest;
    item.needs_annotation = item.changed;
    if (item.changed) {
      ++report.changed;
    } else {
      ++report.unchanged;
      kept.push_back(manifest.gold_labels.at(id));
    }
    report.items.push_back(std::move(item));
  }
  if (!kept.empty()) report.forecast = estimation::exact_proportions(kept);
  if (!manifest.member_ids.empty()) {
    report.unresolved_mass =
        static_cast<double>(report.changed) / static_cast<double>(manifest.member_ids.size());
  }
  return report;
}

json to_json(const DatasetManifest& manifest) {
  json j = body_json(manifest);
  j["checksum"] = manifest.checksum;
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    auto split = parse_split(j.at("split").get<std::string>());
    if (!split) throw ParseError("split", "unknown split");
    m.split = *split;
    m.period = j.at("period").get<std::string>();
    m.member_ids = j.at("member_ids").get<std::vector<std::string>>();
    for (const auto& [id, value] : j.at("gold_labels").items()) {
      auto label = parse_label(value.get<std::string>());
      if (!label) throw ParseError("gold_labels", "unknown label for '" + id + "'");
      m.gold_labels.emplace(id, *label);
    }
    for (const auto& e : j.at("lineage")) {
      m.lineage.push_back({e.at("period").get<std::string>(), e.at("delta_size").get<std::size_t>(),
                           e.at("kind").get<std::string>()});
    }
    m.checksum = j.at("checksum").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError("manifest", std::string("malformed manifest: ") + e.what());
  }
  validate(m);
  return m;
}

json to_json(const ReplayReport& report) {
  json items = json::array();
  for (const auto& item : report.items) {
    items.push_back({{"id", item.id},
                     {"baseline_response_digest", item.baseline_digest},
                     {"candidate_response_digest", item.candidate_digest},
                     {"changed", item.changed},
                     {"needs_annotation", item.needs_annotation}});
  }
  return {{"dataset",
           {{"name", report.dataset_name},
            {"split", std::string(to_string(report.split))},
            {"period", report.period},
            {"checksum", report.manifest_checksum}}},
          {"per_item", std::move(items)},
          {"summary", {{"unchanged", report.unchanged}, {"changed", report.changed}}},
          {"forecast", report.forecast ? estimation::to_json(*report.forecast) : json(nullptr)},
          {"unresolved_mass", report.unresolved_mass}};
}

std::string manifest_filename(const DatasetManifest& manifest) {
  return "manifest-" + manifest.name + "-" + std::string(to_string(manifest.split)) + "-" +
         manifest.period + ".json";
}

std::filesystem::path write_manifest(const std::filesystem::path& directory,
                                     const DatasetManifest& manifest) {
  validate(manifest);
  const auto path = directory / manifest_filename(manifest);
  write_text_atomic(path, to_json(manifest).dump(2) + "\n");
  return path;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ParseError("", std::string("malformed manifest JSON: ") + e.what());
  }
  return manifest_from_json(j);
}

}  // namespace sevbench::benchmark
