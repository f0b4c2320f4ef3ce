#include "sevbench/severity.hpp"

#include <algorithm>
#include <set>

#include "sevbench/error.hpp"
#include "sevbench/io.hpp"

namespace sevbench::severity {

using nlohmann::json;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

/// Child ids of a node, in a fixed order; duplicates kept.
std::vector<std::string> children(const Node& node) {
  std::vector<std::string> out;
  std::visit(Overloaded{[&](const JudgmentNode& n) {
                          for (const auto& [option, target] : n.edges) out.push_back(target);
                        },
                        [&](const SystemNode& n) {
                          for (const auto& [value, target] : n.edges) out.push_back(target);
                          out.push_back(n.default_edge);
                        },
                        [](const Leaf&) {}},
             node);
  return out;
}

const Node& node_at(const DecisionTree& tree, const std::string& id) {
  auto it = tree.nodes.find(id);
  if (it == tree.nodes.end()) throw invariant_error("decision tree has no node '" + id + "'");
  return it->second;
}

}  // namespace

std::vector<Violation> validate_tree(const DecisionTree& tree) {
  std::vector<Violation> out;
  auto add = [&](std::string node, std::string rule, std::string message) {
    out.push_back({std::move(node), std::move(rule), std::move(message)});
  };

  if (tree.version.empty()) add("", "version", "tree version must be non-empty");
  if (!tree.nodes.contains(tree.root)) {
    add(tree.root, "missing_root", "root '" + tree.root + "' is not a node");
    return out;
  }

  // Local structure and parent counts. Several edges of one parent may share a
  // target; that is still a single parent.
  std::map<std::string, std::set<std::string>> parents;
  for (const auto& [id, node] : tree.nodes) {
    if (const auto* j = std::get_if<JudgmentNode>(&node)) {
      if (j->answer_options.size() < 2) {
        add(id, "too_few_options", "judgment node '" + id + "' needs at least 2 options");
      }
      std::set<std::string> options(j->answer_options.begin(), j->answer_options.end());
      if (options.size() != j->answer_options.size()) {
        add(id, "duplicate_option", "judgment node '" + id + "' repeats an option");
      }
      for (const auto& option : j->answer_options) {
        if (!j->edges.contains(option)) {
          add(id, "option_without_edge",
              "option '" + option + "' of node '" + id + "' has no edge (path cannot reach a leaf)");
        }
      }
      for (const auto& [option, target] : j->edges) {
        if (!options.contains(option)) {
          add(id, "edge_without_option", "edge '" + option + "' of node '" + id + "' is not an option");
        }
      }
    } else if (const auto* s = std::get_if<SystemNode>(&node)) {
      if (s->decision_key.empty()) add(id, "empty_decision_key", "system node '" + id + "' has no key");
    }
    for (const auto& target : children(node)) {
      if (!tree.nodes.contains(target)) {
        add(id, "dangling_edge", "edge from '" + id + "' to missing node '" + target + "'");
      } else {
        parents[target].insert(id);
      }
    }
  }
  if (parents.contains(tree.root)) {
    add(tree.root, "root_has_parent", "root '" + tree.root + "' has an incoming edge");
  }
  for (const auto& [id, from] : parents) {
    if (from.size() > 1) {
      add(id, "multiple_parents", "node '" + id + "' has " + std::to_string(from.size()) + " parents");
    }
  }

  // Reachability with cycle detection by iterative DFS colouring.
  std::map<std::string, int> colour;  // 0 new, 1 on stack, 2 done
  std::set<SeverityLabel> labels;
  std::vector<std::pair<std::string, std::size_t>> stack{{tree.root, 0}};
  colour[tree.root] = 1;
  while (!stack.empty()) {
    auto& [id, next] = stack.back();
    const auto& node = tree.nodes.at(id);
    if (const auto* leaf = std::get_if<Leaf>(&node)) labels.insert(leaf->label);
    const auto kids = children(node);
    if (next >= kids.size()) {
      colour[id] = 2;
      stack.pop_back();
      continue;
    }
    const std::string child = kids[next++];
    if (!tree.nodes.contains(child)) continue;
    const int c = colour[child];
    if (c == 1) {
      add(child, "cycle", "cycle through node '" + child + "'");
    } else if (c == 0) {
      colour[child] = 1;
      stack.emplace_back(child, 0);
    }
  }
  for (const auto& [id, node] : tree.nodes) {
    if (colour[id] == 0) add(id, "unreachable_node", "node '" + id + "' is unreachable from the root");
  }
  for (auto label : kAllLabels) {
    if (!labels.contains(label)) {
      add("", "unreachable_label", "unreachable label " + std::string(to_string(label)));
    }
  }
  return out;
}

void require_valid(const DecisionTree& tree) {
  const auto violations = validate_tree(tree);
  if (!violations.empty()) {
    throw invariant_error("invalid decision tree: " + violations.front().message);
  }
}

Derivation derive_severity(const DecisionTree& tree,
                           const std::map<std::string, std::string>& system_decisions,
                           const Judgments& judgments) {
  Derivation out;
  std::string id = tree.root;
  // A valid tree has no cycles; the bound only guards misuse.
  for (std::size_t steps = 0; steps <= tree.nodes.size(); ++steps) {
    out.path.push_back(id);
    const Node& node = node_at(tree, id);
    if (const auto* leaf = std::get_if<Leaf>(&node)) {
      out.label = leaf->label;
      return out;
    }
    if (const auto* s = std::get_if<SystemNode>(&node)) {
      auto decision = system_decisions.find(s->decision_key);
      if (decision != system_decisions.end()) {
        auto edge = s->edges.find(decision->second);
        id = edge != s->edges.end() ? edge->second : s->default_edge;
      } else {
        id = s->default_edge;
      }
      continue;
    }
    const auto& j = std::get<JudgmentNode>(node);
    auto answer = judgments.find(id);
    if (answer == judgments.end()) {
      throw Error("missing_judgment", "missing judgment for node '" + id + "'");
    }
    auto edge = j.edges.find(answer->second);
    if (edge == j.edges.end() ||
        std::find(j.answer_options.begin(), j.answer_options.end(), answer->second) ==
            j.answer_options.end()) {
      throw Error("invalid_judgment",
                  "answer '" + answer->second + "' is not an option of node '" + id + "'");
    }
    id = edge->second;
  }
  throw invariant_error("decision tree walk did not terminate (cycle)");
}

Derivation derive_severity(const DecisionTree& tree, const Interaction& interaction,
                           const Judgments& judgments) {
  return derive_severity(tree, interaction.system_decisions, judgments);
}

std::vector<TreePath> enumerate_paths(const DecisionTree& tree) {
  require_valid(tree);
  std::vector<TreePath> out;
  // Depth-first with explicit partial paths; trees here are small.
  std::vector<TreePath> pending{TreePath{{tree.root}, {}, {}, SeverityLabel::kNoError}};
  while (!pending.empty()) {
    TreePath path = std::move(pending.back());
    pending.pop_back();
    const std::string id = path.nodes.back();
    const Node& node = tree.nodes.at(id);
    if (const auto* leaf = std::get_if<Leaf>(&node)) {
      path.label = leaf->label;
      out.push_back(std::move(path));
      continue;
    }
    std::vector<TreePath> next;
    if (const auto* s = std::get_if<SystemNode>(&node)) {
      for (const auto& [value, target] : s->edges) {
        TreePath p = path;
        p.system_decisions[s->decision_key] = value;
        p.nodes.push_back(target);
        next.push_back(std::move(p));
      }
      TreePath p = path;
      p.nodes.push_back(s->default_edge);
      next.push_back(std::move(p));
    } else {
      const auto& j = std::get<JudgmentNode>(node);
      for (const auto& option : j.answer_options) {
        TreePath p = path;
        p.judgments.emplace_back(id, option);
        p.nodes.push_back(j.edges.at(option));
        next.push_back(std::move(p));
      }
    }
    for (auto it = next.rbegin(); it != next.rend(); ++it) pending.push_back(std::move(*it));
  }
  return out;
}

DecisionTree default_tree() {
  const std::string user_guideline =
      "Guideline: 'the user' is a typical practitioner of the product who is not an expert in "
      "it and has no access to internal documentation beyond what the response cites. ";
  DecisionTree tree;
  tree.version = "default-v1";
  tree.root = "answered";
  tree.nodes["answered"] = SystemNode{
      "answered", {{"yes", "looks_correct_to_user"}, {"no", "refusal_rephrase_recovers"}},
      "refusal_rephrase_recovers"};
  tree.nodes["looks_correct_to_user"] = JudgmentNode{
      user_guideline +
          "Would the response look plausible and correct to this user, with nothing that "
          "signals an error?",
      {"yes", "no"},
      {{"yes", "factually_correct"}, {"no", "rephrase_recovers"}}};
  tree.nodes["factually_correct"] = JudgmentNode{
      "Checked against the product documentation, is every factual claim in the response "
      "correct and does it answer the question asked?",
      {"yes", "no"},
      {{"yes", "leaf_no_error"}, {"no", "leaf_sev0"}}};
  tree.nodes["rephrase_recovers"] = JudgmentNode{
      user_guideline +
          "If this user rephrased the question, could the assistant plausibly return a correct "
          "answer (the capability and the documentation for it exist)?",
      {"yes", "no"},
      {{"yes", "leaf_sev2_answered"}, {"no", "leaf_sev1_answered"}}};
  tree.nodes["refusal_rephrase_recovers"] = JudgmentNode{
      user_guideline +
          "The assistant refused or returned an error. If this user rephrased the question, "
          "could the assistant plausibly return a correct answer?",
      {"yes", "no"},
      {{"yes", "leaf_sev2_refused"}, {"no", "leaf_sev1_refused"}}};
  tree.nodes["leaf_no_error"] = Leaf{SeverityLabel::kNoError};
  tree.nodes["leaf_sev0"] = Leaf{SeverityLabel::kSev0};
  tree.nodes["leaf_sev2_answered"] = Leaf{SeverityLabel::kSev2};
  tree.nodes["leaf_sev1_answered"] = Leaf{SeverityLabel::kSev1};
  tree.nodes["leaf_sev2_refused"] = Leaf{SeverityLabel::kSev2};
  tree.nodes["leaf_sev1_refused"] = Leaf{SeverityLabel::kSev1};
  return tree;
}

json to_json(const DecisionTree& tree) {
  json nodes = json::object();
  for (const auto& [id, node] : tree.nodes) {
    nodes[id] = std::visit(
        Overloaded{[](const JudgmentNode& n) -> json {
                     return {{"kind", "judgment"},
                             {"question_text", n.question_text},
                             {"answer_options", n.answer_options},
                             {"edges", n.edges}};
                   },
                   [](const SystemNode& n) -> json {
                     return {{"kind", "system"},
                             {"decision_key", n.decision_key},
                             {"edges", n.edges},
                             {"default_edge", n.default_edge}};
                   },
                   [](const Leaf& n) -> json {
                     return {{"kind", "leaf"}, {"label", std::string(to_string(n.label))}};
                   }},
        node);
  }
  return {{"version", tree.version}, {"root", tree.root}, {"nodes", std::move(nodes)}};
}

DecisionTree tree_from_json(const json& j) {
  DecisionTree tree;
  std::string where = "tree";
  try {
    tree.version = j.at("version").get<std::string>();
    tree.root = j.at("root").get<std::string>();
    for (const auto& [id, n] : j.at("nodes").items()) {
      where = "nodes." + id;
      const auto kind = n.at("kind").get<std::string>();
      if (kind == "judgment") {
        tree.nodes[id] = JudgmentNode{n.at("question_text").get<std::string>(),
                                      n.at("answer_options").get<std::vector<std::string>>(),
                                      n.at("edges").get<std::map<std::string, std::string>>()};
      } else if (kind == "system") {
        tree.nodes[id] = SystemNode{n.at("decision_key").get<std::string>(),
                                    n.at("edges").get<std::map<std::string, std::string>>(),
                                    n.at("default_edge").get<std::string>()};
      } else if (kind == "leaf") {
        auto label = parse_label(n.at("label").get<std::string>());
        if (!label) throw ParseError(where + ".label", "unknown severity label");
        tree.nodes[id] = Leaf{*label};
      } else {
        throw ParseError(where + ".kind", "unknown node kind '" + kind + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(where, "malformed decision tree at " + where + ": " + e.what());
  }
  return tree;
}

DecisionTree read_tree(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ParseError("", std::string("malformed tree JSON: ") + e.what());
  }
  return tree_from_json(j);
}

void write_tree(const std::filesystem::path& path, const DecisionTree& tree) {
  write_text_atomic(path, to_json(tree).dump(2) + "\n");
}

Judgments to_map(const JudgmentList& judgments) {
  Judgments out;
  for (const auto& [node, option] : judgments) out[node] = option;
  return out;
}

AnnotationRecord make_record(const DecisionTree& tree, const Interaction& interaction,
                             std::string annotator_id, const Judgments& judgments,
                             bool is_expert, Timestamp timestamp) {
  const auto derivation = derive_severity(tree, interaction, judgments);
  AnnotationRecord record;
  record.interaction_id = interaction.id;
  record.annotator_id = std::move(annotator_id);
  record.tree_version = tree.version;
  for (const auto& id : derivation.path) {
    if (std::holds_alternative<JudgmentNode>(tree.nodes.at(id))) {
      record.judgments.emplace_back(id, judgments.at(id));
    }
  }
  record.derived_label = derivation.label;
  record.is_expert = is_expert;
  record.timestamp = timestamp;
  return record;
}

void check_record(const DecisionTree& tree, const Interaction& interaction,
                  const AnnotationRecord& record) {
  if (record.tree_version != tree.version) {
    throw Error("version_mismatch", "record tree_version '" + record.tree_version +
                                        "' differs from tree '" + tree.version + "'");
  }
  if (record.interaction_id != interaction.id) throw invariant_error("record/interaction id mismatch");
  const auto judgments = to_map(record.judgments);
  if (judgments.size() != record.judgments.size()) {
    throw invariant_error("record repeats a judgment node");
  }
  const auto derivation = derive_severity(tree, interaction, judgments);
  std::size_t on_path = 0;
  for (const auto& id : derivation.path) {
    if (std::holds_alternative<JudgmentNode>(tree.nodes.at(id))) ++on_path;
  }
  if (on_path != judgments.size()) {
    throw invariant_error("record judgments do not trace exactly one root-to-leaf path");
  }
  if (derivation.label != record.derived_label) {
    throw invariant_error("record derived_label does not match the reached leaf");
  }
}

json to_json(const AnnotationRecord& record) {
  json judgments = json::array();
  for (const auto& [node, option] : record.judgments) {
    judgments.push_back({{"node_id", node}, {"option", option}});
  }
  return {{"interaction_id", record.interaction_id},
          {"annotator_id", record.annotator_id},
          {"tree_version", record.tree_version},
          {"judgments", std::move(judgments)},
          {"derived_label", std::string(to_string(record.derived_label))},
          {"is_expert", record.is_expert},
          {"timestamp", format_timestamp(record.timestamp)}};
}

AnnotationRecord record_from_json(const json& j) {
  static const char* const kFields[] = {"interaction_id", "annotator_id", "tree_version",
                                        "judgments",      "derived_label", "is_expert",
                                        "timestamp"};
  if (!j.is_object()) throw ParseError("", "annotation record must be a JSON object");
  for (const char* field : kFields) {
    if (!j.contains(field)) throw ParseError(field, std::string("missing required field '") + field + "'");
  }
  AnnotationRecord r;
  try {
    r.interaction_id = j.at("interaction_id").get<std::string>();
    r.annotator_id = j.at("annotator_id").get<std::string>();
    r.tree_version = j.at("tree_version").get<std::string>();
    for (const auto& entry : j.at("judgments")) {
      r.judgments.emplace_back(entry.at("node_id").get<std::string>(),
                               entry.at("option").get<std::string>());
    }
    r.is_expert = j.at("is_expert").get<bool>();
  } catch (const json::exception& e) {
    throw ParseError("annotation", std::string("malformed annotation record: ") + e.what());
  }
  const auto label = j.at("derived_label");
  if (!label.is_string() || !parse_label(label.get<std::string>())) {
    throw ParseError("derived_label", "unknown severity label");
  }
  r.derived_label = *parse_label(label.get<std::string>());
  if (!j.at("timestamp").is_string()) throw ParseError("timestamp", "timestamp must be a string");
  r.timestamp = parse_timestamp(j.at("timestamp").get<std::string>());
  return r;
}

std::string serialize_record(const AnnotationRecord& record) { return to_json(record).dump(); }

AnnotationRecord parse_record(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("", std::string("malformed JSON: ") + e.what());
  }
  return record_from_json(j);
}

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
  std::vector<AnnotationRecord> out;
  for (const auto& line : read_lines(path)) out.push_back(parse_record(line));
  return out;
}

void write_annotations(const std::filesystem::path& path,
                       const std::vector<AnnotationRecord>& records) {
  std::string out;
  for (const auto& r : records) out += serialize_record(r) + "\n";
  write_text_atomic(path, out);
}

std::string_view to_string(ResolutionStatus status) {
  switch (status) {
    case ResolutionStatus::kAgreed: return "agreed";
    case ResolutionStatus::kExpertResolved: return "expert_resolved";
    case ResolutionStatus::kPendingExpert: return "pending_expert";
  }
  return "?";
}

Resolution resolve_disagreement(std::span<const AnnotationRecord> records) {
  if (records.empty()) throw precondition_error("no annotation records to resolve");
  for (const auto& r : records) {
    if (r.interaction_id != records.front().interaction_id) {
      throw precondition_error("records span several interactions");
    }
    if (r.tree_version != records.front().tree_version) {
      throw Error("version_mismatch", "records for '" + r.interaction_id +
                                          "' mix tree versions '" +
                                          records.front().tree_version + "' and '" +
                                          r.tree_version + "'");
    }
  }

  std::optional<SeverityLabel> first;
  bool unanimous = true;
  const AnnotationRecord* expert = nullptr;
  for (const auto& r : records) {
    if (r.is_expert) {
      if (!expert || r.timestamp >= expert->timestamp) expert = &r;
      continue;
    }
    if (!first) {
      first = r.derived_label;
    } else if (*first != r.derived_label) {
      unanimous = false;
    }
  }
  if (first && unanimous) return {first, ResolutionStatus::kAgreed};
  if (expert) return {expert->derived_label, ResolutionStatus::kExpertResolved};
  return {std::nullopt, ResolutionStatus::kPendingExpert};
}

std::map<std::string, SeverityLabel> resolve_all(std::span<const AnnotationRecord> records,
                                                 std::vector<std::string>* pending) {
  std::map<std::string, std::vector<AnnotationRecord>> groups;
  for (const auto& r : records) groups[r.interaction_id].push_back(r);
  std::map<std::string, SeverityLabel> out;
  for (const auto& [id, group] : groups) {
    const auto resolution = resolve_disagreement(group);
    if (resolution.label) {
      out.emplace(id, *resolution.label);
    } else if (pending) {
      pending->push_back(id);
    }
  }
  return out;
}

}  // namespace sevbench::severity
