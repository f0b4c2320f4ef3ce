#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sevbench/types.hpp"

namespace sevbench::severity {

/// A human judgment. The guideline defining who "the user" is lives in
/// `question_text`, so it is configuration rather than code.
struct JudgmentNode {
  std::string question_text;
  std::vector<std::string> answer_options;
  std::map<std::string, std::string> edges;  // option -> node id

  bool operator==(const JudgmentNode&) const = default;
};

/// A decision logged by the assistant, read from Interaction::system_decisions.
struct SystemNode {
  std::string decision_key;
  std::map<std::string, std::string> edges;  // decision value -> node id
  std::string default_edge;                  // taken for absent or unlisted values

  bool operator==(const SystemNode&) const = default;
};

struct Leaf {
  SeverityLabel label;

  bool operator==(const Leaf&) const = default;
};

using Node = std::variant<JudgmentNode, SystemNode, Leaf>;

struct DecisionTree {
  std::map<std::string, Node> nodes;
  std::string root;
  std::string version;

  bool operator==(const DecisionTree&) const = default;
};

struct Violation {
  std::string node_id;
  std::string rule;
  std::string message;
};

/// Empty iff the tree is a rooted tree whose paths all end at leaves and
/// which can produce every SeverityLabel.
std::vector<Violation> validate_tree(const DecisionTree& tree);

/// Throws invariant Error listing the first violation, if any.
void require_valid(const DecisionTree& tree);

using Judgments = std::map<std::string, std::string>;  // node id -> chosen option
using JudgmentList = std::vector<std::pair<std::string, std::string>>;

struct Derivation {
  SeverityLabel label;
  std::vector<std::string> path;  // node ids from root to leaf inclusive
};

/// Walks from the root. Judgments for nodes off the realized path are ignored.
/// Throws Error("missing_judgment") or Error("invalid_judgment").
Derivation derive_severity(const DecisionTree& tree,
                           const std::map<std::string, std::string>& system_decisions,
                           const Judgments& judgments);
Derivation derive_severity(const DecisionTree& tree, const Interaction& interaction,
                           const Judgments& judgments);

/// One root-to-leaf path with the system decisions and judgments that realize it.
/// A system node's default edge is realized by leaving its key absent.
struct TreePath {
  std::vector<std::string> nodes;
  std::map<std::string, std::string> system_decisions;
  JudgmentList judgments;
  SeverityLabel label;
};

std::vector<TreePath> enumerate_paths(const DecisionTree& tree);

/// The shipped tree. Root on the assistant's response type, then plausibility,
/// factual correctness and counterfactual rephrase-recovery judgments.
DecisionTree default_tree();

nlohmann::json to_json(const DecisionTree& tree);
DecisionTree tree_from_json(const nlohmann::json& j);
DecisionTree read_tree(const std::filesystem::path& path);
void write_tree(const std::filesystem::path& path, const DecisionTree& tree);

struct AnnotationRecord {
  std::string interaction_id;
  std::string annotator_id;
  std::string tree_version;
  JudgmentList judgments;
  SeverityLabel derived_label = SeverityLabel::kNoError;
  bool is_expert = false;
  Timestamp timestamp{};

  bool operator==(const AnnotationRecord&) const = default;
};

Judgments to_map(const JudgmentList& judgments);

/// Derives the label for `judgments` and builds the record, keeping only the
/// judgments on the realized path, in path order.
AnnotationRecord make_record(const DecisionTree& tree, const Interaction& interaction,
                             std::string annotator_id, const Judgments& judgments,
                             bool is_expert, Timestamp timestamp);

/// Checks that the record's judgments trace exactly one root-to-leaf path and
/// that derived_label matches the leaf.
void check_record(const DecisionTree& tree, const Interaction& interaction,
                  const AnnotationRecord& record);

nlohmann::json to_json(const AnnotationRecord& record);
AnnotationRecord record_from_json(const nlohmann::json& j);
std::string serialize_record(const AnnotationRecord& record);
AnnotationRecord parse_record(std::string_view line);
std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path,
                       const std::vector<AnnotationRecord>& records);

enum class ResolutionStatus : std::uint8_t { kAgreed, kExpertResolved, kPendingExpert };

std::string_view to_string(ResolutionStatus status);

struct Resolution {
  std::optional<SeverityLabel> label;
  ResolutionStatus status;

  bool operator==(const Resolution&) const = default;
};

/// Unanimous non-experts -> agreed. Otherwise the latest expert record decides
/// (expert_resolved), or the item waits for one (pending_expert).
/// With no non-expert records, an expert record resolves directly.
Resolution resolve_disagreement(std::span<const AnnotationRecord> records);

/// Groups records by interaction and resolves each group. Pending items are
/// returned in `pending`.
std::map<std::string, SeverityLabel> resolve_all(std::span<const AnnotationRecord> records,
                                                 std::vector<std::string>* pending = nullptr);

}  // namespace sevbench::severity
