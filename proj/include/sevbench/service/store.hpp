#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sevbench/coreset.hpp"
#include "sevbench/severity.hpp"
#include "sevbench/types.hpp"

namespace sevbench::service {

using Clock = std::function<Timestamp()>;

/// Wall clock truncated to milliseconds.
Timestamp system_now();

/// "30d", "12h", "15m", "45s" or "250ms". Throws ParseError otherwise.
std::chrono::milliseconds parse_duration(std::string_view text);

enum class TaskState : std::uint8_t { kOpen, kLeased, kSubmitted, kEscalated, kFinalized };

std::string_view to_string(TaskState state);
std::optional<TaskState> parse_task_state(std::string_view text);

struct TaskLease {
  std::string task_id;
  std::string interaction_id;
  std::size_t slot = 0;
  /// Expert review task cloned from a disagreement.
  bool escalation = false;
  std::string annotator_id;  // empty unless leased or submitted
  std::string tree_version;
  std::optional<Timestamp> lease_expiry;
  TaskState state = TaskState::kOpen;
  std::optional<SeverityLabel> label;  // submitted label, or the resolved one once finalized

  bool operator==(const TaskLease&) const = default;
};

nlohmann::json to_json(const TaskLease& task);

enum class RootCause : std::uint8_t { kRetrievalFailure, kHallucination, kDocumentationGap, kOther };

std::string_view to_string(RootCause cause);
std::optional<RootCause> parse_root_cause(std::string_view text);

struct AdversarialFlag {
  std::string id;
  std::string interaction_id;
  std::string reporter_id;
  RootCause root_cause = RootCause::kOther;
  std::string comment;
  bool confirmed = false;
  Timestamp created_at{};
  std::optional<Timestamp> confirmed_at;
  std::string confirmed_by;
  /// The expert's judgments for the flagged interaction, set on confirmation.
  std::optional<severity::AnnotationRecord> record;

  bool operator==(const AdversarialFlag&) const = default;
};

nlohmann::json to_json(const AdversarialFlag& flag);

struct LeaderboardEntry {
  std::string reporter_id;
  std::size_t confirmed = 0;
  /// When the reporter reached `confirmed` flags within the window.
  Timestamp reached_at{};
};

struct SubmitOutcome {
  SeverityLabel derived;
  TaskState state;  // state of the submitted task afterwards
  /// Set once the interaction has a final label.
  std::optional<SeverityLabel> final_label;
  /// Id of the expert task created when this submission surfaced a disagreement.
  std::optional<std::string> escalation_task_id;
};

struct Stats {
  std::size_t tasks = 0;
  std::map<TaskState, std::size_t> by_state;
  std::size_t finalized_interactions = 0;
  std::size_t pending_interactions = 0;
  /// Weighted by the coreset weights given at enqueue; unset before anything is finalized.
  std::optional<ProportionEstimate> estimate;
  double sev0_threshold = 0.05;
};

nlohmann::json to_json(const Stats& stats);

struct StoreConfig {
  severity::DecisionTree tree = severity::default_tree();
  std::chrono::milliseconds lease_ttl = std::chrono::minutes(30);
  std::size_t annotators_per_item = 2;
  /// Append-only JSONL event log; events are kept in memory only when unset.
  std::optional<std::filesystem::path> log_path;
};

/// Annotation state. Every mutation is recorded as events appended to the log
/// and then applied; replaying the log rebuilds identical state. Mutations are
/// serialized by one writer lock, reads share it.
class Store {
 public:
  /// Replays `config.log_path` when it exists.
  explicit Store(StoreConfig config, Clock clock = system_now);

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Rebuilds a store from events without writing anything.
  static std::unique_ptr<Store> replay(StoreConfig config, std::span<const nlohmann::json> events,
                                       Clock clock = system_now);

  const severity::DecisionTree& tree() const { return config_.tree; }
  const StoreConfig& config() const { return config_; }

  /// Idempotent; re-registering with a different role is a conflict.
  void register_annotator(const std::string& annotator_id, bool is_expert);
  /// Idempotent for identical records; a different record under a known id is a conflict.
  void add_interaction(const Interaction& interaction);

  /// annotators_per_item tasks per support member, deduplicated by
  /// (interaction, slot). Returns the number of tasks created.
  std::size_t enqueue(const coreset::CoresetResult& result, std::span<const std::string> support_ids,
                      std::optional<std::size_t> annotators_per_item = std::nullopt);

  /// An annotator already holding a live lease gets it back.
  std::optional<TaskLease> lease_next(const std::string& annotator_id, bool is_expert);

  SubmitOutcome submit(const std::string& task_id, const std::string& annotator_id,
                       const severity::Judgments& judgments);

  /// Applies due lease expiries now. Other mutations do this first anyway.
  std::size_t expire_leases();

  AdversarialFlag flag(const std::string& reporter_id, const std::string& interaction_id,
                       RootCause root_cause, const std::string& comment);
  /// Expert only. The judgments become an expert AnnotationRecord for the interaction.
  AdversarialFlag confirm_flag(const std::string& flag_id, const std::string& expert_id,
                               const severity::Judgments& judgments);
  /// Confirmed flags in the trailing window; count descending, then earlier
  /// reached_at, then reporter id.
  std::vector<LeaderboardEntry> leaderboard(std::chrono::milliseconds window) const;
  std::vector<severity::AnnotationRecord> confirmed_flag_records() const;

  std::optional<TaskLease> task(const std::string& task_id) const;
  std::vector<TaskLease> tasks() const;
  std::optional<Interaction> interaction(const std::string& interaction_id) const;
  std::vector<AdversarialFlag> flags() const;
  std::vector<severity::AnnotationRecord> records() const;
  std::map<std::string, SeverityLabel> final_labels() const;
  Stats stats() const;

  std::vector<nlohmann::json> events() const;
  /// Full state as JSON, for comparing a live store with its replay.
  nlohmann::json snapshot() const;

 private:
  struct Replaying {};
  Store(StoreConfig config, Clock clock, Replaying);

  void commit(std::vector<nlohmann::json> events);
  void apply(const nlohmann::json& event);
  std::vector<nlohmann::json> due_expiries(Timestamp now) const;
  void require_annotator(const std::string& annotator_id) const;
  std::string next_task_id() const;

  StoreConfig config_;
  Clock clock_;
  mutable std::shared_mutex mutex_;
  std::ofstream log_;
  std::vector<nlohmann::json> events_;

  std::map<std::string, bool> annotators_;  // id -> is_expert
  std::map<std::string, Interaction> interactions_;
  std::vector<TaskLease> tasks_;  // creation order
  std::map<std::string, std::size_t> task_index_;
  std::set<std::pair<std::string, std::size_t>> slots_;  // (interaction, slot)
  std::map<std::string, std::size_t> slots_per_interaction_;
  std::map<std::string, std::vector<severity::AnnotationRecord>> records_;
  std::map<std::string, std::set<std::string>> graded_;  // annotator -> interactions
  std::map<std::string, SeverityLabel> final_labels_;
  std::map<std::string, double> weights_;
  std::vector<AdversarialFlag> flags_;
  std::map<std::string, std::size_t> flag_index_;
};

}  // namespace sevbench::service
