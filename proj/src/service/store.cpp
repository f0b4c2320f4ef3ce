#include "sevbench/service/store.hpp"

#include <algorithm>
#include <cstdio>
#include <mutex>

#include "sevbench/error.hpp"
#include "sevbench/interaction_io.hpp"
#include "sevbench/io.hpp"

namespace sevbench::service {

using nlohmann::json;

namespace {

constexpr const char* kStateNames[] = {"open", "leased", "submitted", "escalated", "finalized"};
constexpr const char* kCauseNames[] = {"retrieval_failure", "hallucination", "documentation_gap",
                                       "other"};

std::string numbered(const char* prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06zu", prefix, n);
  return buf;
}

json optional_time(const std::optional<Timestamp>& t) {
  return t ? json(format_timestamp(*t)) : json(nullptr);
}

json event(const char* type, Timestamp at) {
  return {{"type", type}, {"at", format_timestamp(at)}};
}

}  // namespace

Timestamp system_now() {
  return std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

std::chrono::milliseconds parse_duration(std::string_view text) {
  std::size_t digits = 0;
  while (digits < text.size() && text[digits] >= '0' && text[digits] <= '9') ++digits;
  const auto unit = text.substr(digits);
  if (digits == 0 || digits > 12) throw ParseError("window", "bad duration '" + std::string(text) + "'");
  const auto n = std::stoll(std::string(text.substr(0, digits)));
  using namespace std::chrono;
  if (unit == "d") return duration_cast<milliseconds>(days(n));
  if (unit == "h") return duration_cast<milliseconds>(hours(n));
  if (unit == "m") return duration_cast<milliseconds>(minutes(n));
  if (unit == "s") return duration_cast<milliseconds>(seconds(n));
  if (unit == "ms") return milliseconds(n);
  throw ParseError("window", "bad duration unit in '" + std::string(text) + "'");
}

std::string_view to_string(TaskState state) { return kStateNames[static_cast<int>(state)]; }

std::optional<TaskState> parse_task_state(std::string_view text) {
  for (int i = 0; i < 5; ++i) {
    if (text == kStateNames[i]) return static_cast<TaskState>(i);
  }
  return std::nullopt;
}

std::string_view to_string(RootCause cause) { return kCauseNames[static_cast<int>(cause)]; }

std::optional<RootCause> parse_root_cause(std::string_view text) {
  for (int i = 0; i < 4; ++i) {
    if (text == kCauseNames[i]) return static_cast<RootCause>(i);
  }
  return std::nullopt;
}

json to_json(const TaskLease& task) {
  return {{"task_id", task.task_id},
          {"interaction_id", task.interaction_id},
          {"slot", task.slot},
          {"escalation", task.escalation},
          {"annotator_id", task.annotator_id.empty() ? json(nullptr) : json(task.annotator_id)},
          {"tree_version", task.tree_version},
          {"lease_expiry", optional_time(task.lease_expiry)},
          {"state", std::string(to_string(task.state))},
          {"label", task.label ? json(std::string(to_string(*task.label))) : json(nullptr)}};
}

json to_json(const AdversarialFlag& flag) {
  return {{"id", flag.id},
          {"interaction_id", flag.interaction_id},
          {"reporter_id", flag.reporter_id},
          {"root_cause", std::string(to_string(flag.root_cause))},
          {"comment", flag.comment},
          {"confirmed", flag.confirmed},
          {"created_at", format_timestamp(flag.created_at)},
          {"confirmed_at", optional_time(flag.confirmed_at)},
          {"confirmed_by", flag.confirmed ? json(flag.confirmed_by) : json(nullptr)},
          {"record", flag.record ? severity::to_json(*flag.record) : json(nullptr)}};
}

json to_json(const Stats& stats) {
  json by_state = json::object();
  for (const auto* name : kStateNames) by_state[name] = 0;
  for (const auto& [state, n] : stats.by_state) by_state[std::string(to_string(state))] = n;
  json gate = {{"threshold", stats.sev0_threshold}};
  if (stats.estimate) {
    const double sev0 = stats.estimate->proportions[label_index(SeverityLabel::kSev0)];
    gate["sev0"] = sev0;
    gate["status"] = sev0 <= stats.sev0_threshold ? "pass" : "fail";
  } else {
    gate["sev0"] = nullptr;
    gate["status"] = "unknown";
  }
  json estimate = nullptr;
  if (stats.estimate) {
    estimate = json::object();
    for (auto label : kAllLabels) {
      estimate[std::string(to_string(label))] = stats.estimate->proportions[label_index(label)];
    }
  }
  return {{"tasks", stats.tasks},
          {"by_state", std::move(by_state)},
          {"finalized_interactions", stats.finalized_interactions},
          {"pending_interactions", stats.pending_interactions},
          {"estimate", std::move(estimate)},
          {"sev0_gate", std::move(gate)}};
}

Store::Store(StoreConfig config, Clock clock, Replaying)
    : config_(std::move(config)), clock_(std::move(clock)) {
  severity::require_valid(config_.tree);
  if (config_.annotators_per_item == 0) {
    throw precondition_error("annotators_per_item must be at least 1");
  }
}

Store::Store(StoreConfig config, Clock clock) : Store(std::move(config), std::move(clock), Replaying{}) {
  if (!config_.log_path) return;
  if (std::filesystem::exists(*config_.log_path)) {
    for (const auto& line : read_lines(*config_.log_path)) {
      json e;
      try {
        e = json::parse(line);
      } catch (const json::parse_error& err) {
        throw ParseError("", std::string("malformed event log line: ") + err.what());
      }
      apply(e);
      events_.push_back(std::move(e));
    }
  }
  log_.open(*config_.log_path, std::ios::app | std::ios::binary);
  if (!log_) throw Error("io", "cannot open event log " + config_.log_path->string());
}

std::unique_ptr<Store> Store::replay(StoreConfig config, std::span<const json> events, Clock clock) {
  config.log_path.reset();
  std::unique_ptr<Store> store(new Store(std::move(config), std::move(clock), Replaying{}));
  for (const auto& e : events) {
    store->apply(e);
    store->events_.push_back(e);
  }
  return store;
}

void Store::commit(std::vector<json> events) {
  for (auto& e : events) {
    if (log_.is_open()) {
      log_ << e.dump() << '\n';
      log_.flush();
      if (!log_) throw Error("io", "event log write failed");
    }
    apply(e);
    events_.push_back(std::move(e));
  }
}

void Store::apply(const json& e) {
  try {
    const auto type = e.at("type").get<std::string>();
    if (type == "annotator_registered") {
      annotators_[e.at("annotator_id").get<std::string>()] = e.at("is_expert").get<bool>();
    } else if (type == "interaction_added") {
      auto interaction = parse_interaction(e.at("interaction").dump());
      interactions_.insert_or_assign(interaction.id, std::move(interaction));
    } else if (type == "task_created") {
      TaskLease t;
      t.task_id = e.at("task_id").get<std::string>();
      t.interaction_id = e.at("interaction_id").get<std::string>();
      t.slot = e.at("slot").get<std::size_t>();
      t.escalation = e.at("escalation").get<bool>();
      t.tree_version = e.at("tree_version").get<std::string>();
      t.state = t.escalation ? TaskState::kEscalated : TaskState::kOpen;
      if (!t.escalation) {
        slots_.emplace(t.interaction_id, t.slot);
        auto& n = slots_per_interaction_[t.interaction_id];
        n = std::max(n, t.slot + 1);
      }
      task_index_[t.task_id] = tasks_.size();
      tasks_.push_back(std::move(t));
    } else if (type == "weight_set") {
      weights_[e.at("interaction_id").get<std::string>()] = e.at("weight").get<double>();
    } else if (type == "lease_granted") {
      auto& t = tasks_.at(task_index_.at(e.at("task_id").get<std::string>()));
      t.annotator_id = e.at("annotator_id").get<std::string>();
      t.lease_expiry = parse_timestamp(e.at("lease_expiry").get<std::string>());
      t.state = TaskState::kLeased;
    } else if (type == "lease_expired") {
      auto& t = tasks_.at(task_index_.at(e.at("task_id").get<std::string>()));
      t.annotator_id.clear();
      t.lease_expiry.reset();
      t.state = t.escalation ? TaskState::kEscalated : TaskState::kOpen;
    } else if (type == "record_stored") {
      auto& t = tasks_.at(task_index_.at(e.at("task_id").get<std::string>()));
      auto record = severity::record_from_json(e.at("record"));
      t.state = TaskState::kSubmitted;
      t.label = record.derived_label;
      t.lease_expiry.reset();
      graded_[record.annotator_id].insert(record.interaction_id);
      records_[record.interaction_id].push_back(std::move(record));
    } else if (type == "interaction_finalized") {
      const auto id = e.at("interaction_id").get<std::string>();
      auto label = parse_label(e.at("label").get<std::string>());
      if (!label) throw ParseError("label", "unknown label");
      final_labels_[id] = *label;
      for (auto& t : tasks_) {
        if (t.interaction_id == id && t.state == TaskState::kSubmitted) {
          t.state = TaskState::kFinalized;
          t.label = *label;
        }
      }
    } else if (type == "flag_created") {
      AdversarialFlag f;
      f.id = e.at("flag_id").get<std::string>();
      f.interaction_id = e.at("interaction_id").get<std::string>();
      f.reporter_id = e.at("reporter_id").get<std::string>();
      auto cause = parse_root_cause(e.at("root_cause").get<std::string>());
      if (!cause) throw ParseError("root_cause", "unknown root cause");
      f.root_cause = *cause;
      f.comment = e.at("comment").get<std::string>();
      f.created_at = parse_timestamp(e.at("at").get<std::string>());
      flag_index_[f.id] = flags_.size();
      flags_.push_back(std::move(f));
    } else if (type == "flag_confirmed") {
      auto& f = flags_.at(flag_index_.at(e.at("flag_id").get<std::string>()));
      f.confirmed = true;
      f.confirmed_at = parse_timestamp(e.at("at").get<std::string>());
      f.confirmed_by = e.at("expert_id").get<std::string>();
      f.record = severity::record_from_json(e.at("record"));
    } else {
      throw ParseError("type", "unknown event type '" + type + "'");
    }
  } catch (const json::exception& err) {
    throw ParseError("event", std::string("malformed event: ") + err.what());
  } catch (const std::out_of_range&) {
    throw invariant_error("event refers to an unknown task or flag: " + e.dump());
  }
}

std::vector<json> Store::due_expiries(Timestamp now) const {
  std::vector<json> out;
  for (const auto& t : tasks_) {
    if (t.state == TaskState::kLeased && t.lease_expiry && *t.lease_expiry <= now) {
      auto e = event("lease_expired", now);
      e["task_id"] = t.task_id;
      out.push_back(std::move(e));
    }
  }
  return out;
}

void Store::require_annotator(const std::string& annotator_id) const {
  if (!annotators_.contains(annotator_id)) {
    throw Error("not_found", "annotator '" + annotator_id + "' is not registered");
  }
}

std::string Store::next_task_id() const { return numbered("task", tasks_.size() + 1); }

void Store::register_annotator(const std::string& annotator_id, bool is_expert) {
  if (annotator_id.empty()) throw precondition_error("annotator id must be non-empty");
  std::unique_lock lock(mutex_);
  if (auto it = annotators_.find(annotator_id); it != annotators_.end()) {
    if (it->second != is_expert) {
      throw Error("conflict", "annotator '" + annotator_id + "' is registered with another role");
    }
    return;
  }
  auto e = event("annotator_registered", clock_());
  e["annotator_id"] = annotator_id;
  e["is_expert"] = is_expert;
  commit({std::move(e)});
}

void Store::add_interaction(const Interaction& interaction) {
  validate(interaction);
  std::unique_lock lock(mutex_);
  if (auto it = interactions_.find(interaction.id); it != interactions_.end()) {
    if (it->second != interaction) {
      throw Error("conflict", "interaction '" + interaction.id + "' already exists with other content");
    }
    return;
  }
  auto e = event("interaction_added", clock_());
  e["interaction"] = json::parse(serialize_interaction(interaction));
  commit({std::move(e)});
}

std::size_t Store::enqueue(const coreset::CoresetResult& result,
                           std::span<const std::string> support_ids,
                           std::optional<std::size_t> annotators_per_item) {
  const std::size_t per_item = annotators_per_item.value_or(config_.annotators_per_item);
  if (per_item == 0) throw precondition_error("annotators_per_item must be at least 1");
  if (support_ids.size() != result.weights.size()) {
    throw precondition_error("support ids do not match the coreset support");
  }
  std::unique_lock lock(mutex_);
  for (const auto& id : support_ids) {
    if (!interactions_.contains(id)) throw Error("not_found", "unknown interaction '" + id + "'");
  }
  const auto now = clock_();
  std::vector<json> events;
  std::size_t created = 0;
  auto id_it = support_ids.begin();
  for (const auto& [index, weight] : result.weights) {
    const auto& id = *id_it++;
    if (!weights_.contains(id) || weights_.at(id) != weight) {
      auto e = event("weight_set", now);
      e["interaction_id"] = id;
      e["weight"] = weight;
      events.push_back(std::move(e));
    }
    if (final_labels_.contains(id)) continue;
    for (std::size_t slot = 0; slot < per_item; ++slot) {
      if (slots_.contains({id, slot})) continue;
      auto e = event("task_created", now);
      e["task_id"] = numbered("task", tasks_.size() + created + 1);
      e["interaction_id"] = id;
      e["slot"] = slot;
      e["escalation"] = false;
      e["tree_version"] = config_.tree.version;
      events.push_back(std::move(e));
      ++created;
    }
  }
  commit(std::move(events));
  return created;
}

std::size_t Store::expire_leases() {
  std::unique_lock lock(mutex_);
  auto events = due_expiries(clock_());
  const auto n = events.size();
  commit(std::move(events));
  return n;
}

std::optional<TaskLease> Store::lease_next(const std::string& annotator_id, bool is_expert) {
  std::unique_lock lock(mutex_);
  require_annotator(annotator_id);
  if (is_expert && !annotators_.at(annotator_id)) {
    throw Error("forbidden", "annotator '" + annotator_id + "' is not an expert");
  }
  const auto now = clock_();
  commit(due_expiries(now));

  for (const auto& t : tasks_) {
    if (t.state == TaskState::kLeased && t.annotator_id == annotator_id) return t;
  }
  const auto graded = graded_.find(annotator_id);
  auto eligible = [&](const TaskLease& t, TaskState wanted) {
    return t.state == wanted && (graded == graded_.end() || !graded->second.contains(t.interaction_id));
  };
  const TaskLease* pick = nullptr;
  if (is_expert) {
    for (const auto& t : tasks_) {
      if (eligible(t, TaskState::kEscalated)) {
        pick = &t;
        break;
      }
    }
  }
  if (!pick) {
    for (const auto& t : tasks_) {
      if (eligible(t, TaskState::kOpen)) {
        pick = &t;
        break;
      }
    }
  }
  if (!pick) return std::nullopt;
  auto e = event("lease_granted", now);
  e["task_id"] = pick->task_id;
  e["annotator_id"] = annotator_id;
  e["lease_expiry"] = format_timestamp(now + config_.lease_ttl);
  const auto index = task_index_.at(pick->task_id);
  commit({std::move(e)});
  return tasks_[index];
}

SubmitOutcome Store::submit(const std::string& task_id, const std::string& annotator_id,
                            const severity::Judgments& judgments) {
  std::unique_lock lock(mutex_);
  auto found = task_index_.find(task_id);
  if (found == task_index_.end()) throw Error("not_found", "unknown task '" + task_id + "'");
  const auto now = clock_();
  auto expiries = due_expiries(now);
  const bool expired_now = std::any_of(expiries.begin(), expiries.end(), [&](const json& e) {
    return e["task_id"] == task_id && tasks_[found->second].annotator_id == annotator_id;
  });
  commit(std::move(expiries));

  const TaskLease& task = tasks_[found->second];
  if (expired_now) {
    throw Error("lease_expired", "lease on task '" + task_id + "' expired; the task is open again");
  }
  if (task.state != TaskState::kLeased) {
    if (task.state == TaskState::kOpen || task.state == TaskState::kEscalated) {
      throw Error("lease_expired", "task '" + task_id + "' is not leased");
    }
    throw Error("conflict", "task '" + task_id + "' is already " + std::string(to_string(task.state)));
  }
  if (task.annotator_id != annotator_id) {
    throw Error("conflict", "task '" + task_id + "' is leased by another annotator");
  }

  const auto& interaction = interactions_.at(task.interaction_id);
  auto record = severity::make_record(config_.tree, interaction, annotator_id, judgments,
                                      task.escalation, now);
  SubmitOutcome outcome{record.derived_label, TaskState::kSubmitted, std::nullopt, std::nullopt};

  std::vector<severity::AnnotationRecord> all;
  if (auto it = records_.find(task.interaction_id); it != records_.end()) all = it->second;
  all.push_back(record);

  std::vector<json> events;
  auto stored = event("record_stored", now);
  stored["task_id"] = task_id;
  stored["record"] = severity::to_json(record);
  events.push_back(std::move(stored));

  auto finalize = [&](SeverityLabel label) {
    auto e = event("interaction_finalized", now);
    e["interaction_id"] = task.interaction_id;
    e["label"] = std::string(to_string(label));
    events.push_back(std::move(e));
    outcome.state = TaskState::kFinalized;
    outcome.final_label = label;
  };

  if (task.escalation) {
    const auto resolution = severity::resolve_disagreement(all);
    if (!resolution.label) throw invariant_error("expert submission left the item unresolved");
    finalize(*resolution.label);
  } else {
    std::vector<severity::AnnotationRecord> slot_records;
    for (const auto& r : all) {
      if (!r.is_expert) slot_records.push_back(r);
    }
    if (slot_records.size() >= slots_per_interaction_.at(task.interaction_id)) {
      const auto resolution = severity::resolve_disagreement(slot_records);
      if (resolution.label) {
        finalize(*resolution.label);
      } else {
        auto e = event("task_created", now);
        const auto id = next_task_id();
        e["task_id"] = id;
        e["interaction_id"] = task.interaction_id;
        e["slot"] = task.slot;
        e["escalation"] = true;
        e["tree_version"] = config_.tree.version;
        events.push_back(std::move(e));
        outcome.escalation_task_id = id;
      }
    }
  }
  commit(std::move(events));
  return outcome;
}

AdversarialFlag Store::flag(const std::string& reporter_id, const std::string& interaction_id,
                            RootCause root_cause, const std::string& comment) {
  std::unique_lock lock(mutex_);
  require_annotator(reporter_id);
  if (!interactions_.contains(interaction_id)) {
    throw Error("not_found", "unknown interaction '" + interaction_id + "'");
  }
  auto e = event("flag_created", clock_());
  e["flag_id"] = numbered("flag", flags_.size() + 1);
  e["interaction_id"] = interaction_id;
  e["reporter_id"] = reporter_id;
  e["root_cause"] = std::string(to_string(root_cause));
  e["comment"] = comment;
  commit({std::move(e)});
  return flags_.back();
}

AdversarialFlag Store::confirm_flag(const std::string& flag_id, const std::string& expert_id,
                                    const severity::Judgments& judgments) {
  std::unique_lock lock(mutex_);
  require_annotator(expert_id);
  if (!annotators_.at(expert_id)) {
    throw Error("forbidden", "only experts confirm flags; '" + expert_id + "' is not one");
  }
  auto it = flag_index_.find(flag_id);
  if (it == flag_index_.end()) throw Error("not_found", "unknown flag '" + flag_id + "'");
  const auto& flag = flags_[it->second];
  if (flag.confirmed) throw Error("conflict", "flag '" + flag_id + "' is already confirmed");
  const auto now = clock_();
  auto record = severity::make_record(config_.tree, interactions_.at(flag.interaction_id),
                                      expert_id, judgments, true, now);
  auto e = event("flag_confirmed", now);
  e["flag_id"] = flag_id;
  e["expert_id"] = expert_id;
  e["record"] = severity::to_json(record);
  commit({std::move(e)});
  return flags_[it->second];
}

std::vector<LeaderboardEntry> Store::leaderboard(std::chrono::milliseconds window) const {
  std::shared_lock lock(mutex_);
  const auto now = clock_();
  const auto cutoff = now - window;
  std::map<std::string, LeaderboardEntry> by_reporter;
  for (const auto& f : flags_) {
    if (!f.confirmed || *f.confirmed_at < cutoff || *f.confirmed_at > now) continue;
    auto& entry = by_reporter[f.reporter_id];
    entry.reporter_id = f.reporter_id;
    ++entry.confirmed;
    entry.reached_at = std::max(entry.reached_at, *f.confirmed_at);
  }
  std::vector<LeaderboardEntry> out;
  for (auto& [id, entry] : by_reporter) out.push_back(std::move(entry));
  std::sort(out.begin(), out.end(), [](const LeaderboardEntry& a, const LeaderboardEntry& b) {
    if (a.confirmed != b.confirmed) return a.confirmed > b.confirmed;
    if (a.reached_at != b.reached_at) return a.reached_at < b.reached_at;
    return a.reporter_id < b.reporter_id;
  });
  return out;
}

std::vector<severity::AnnotationRecord> Store::confirmed_flag_records() const {
  std::shared_lock lock(mutex_);
  std::vector<severity::AnnotationRecord> out;
  for (const auto& f : flags_) {
    if (f.record) out.push_back(*f.record);
  }
  return out;
}

std::optional<TaskLease> Store::task(const std::string& task_id) const {
  std::shared_lock lock(mutex_);
  auto it = task_index_.find(task_id);
  if (it == task_index_.end()) return std::nullopt;
  return tasks_[it->second];
}

std::vector<TaskLease> Store::tasks() const {
  std::shared_lock lock(mutex_);
  return tasks_;
}

std::optional<Interaction> Store::interaction(const std::string& interaction_id) const {
  std::shared_lock lock(mutex_);
  auto it = interactions_.find(interaction_id);
  if (it == interactions_.end()) return std::nullopt;
  return it->second;
}

std::vector<AdversarialFlag> Store::flags() const {
  std::shared_lock lock(mutex_);
  return flags_;
}

std::vector<severity::AnnotationRecord> Store::records() const {
  std::shared_lock lock(mutex_);
  std::vector<severity::AnnotationRecord> out;
  for (const auto& [id, list] : records_) out.insert(out.end(), list.begin(), list.end());
  return out;
}

std::map<std::string, SeverityLabel> Store::final_labels() const {
  std::shared_lock lock(mutex_);
  return final_labels_;
}

Stats Store::stats() const {
  std::shared_lock lock(mutex_);
  Stats s;
  s.tasks = tasks_.size();
  std::set<std::string> queued;
  for (const auto& t : tasks_) {
    ++s.by_state[t.state];
    queued.insert(t.interaction_id);
  }
  s.finalized_interactions = final_labels_.size();
  s.pending_interactions = queued.size() - std::min(queued.size(), final_labels_.size());
  if (final_labels_.empty()) return s;

  std::array<double, kNumLabels> mass{};
  double total = 0.0;
  for (const auto& [id, label] : final_labels_) {
    auto w = weights_.find(id);
    const double weight = w == weights_.end() ? 1.0 : w->second;
    mass[label_index(label)] += weight;
    total += weight;
  }
  if (total <= 0.0) return s;
  ProportionEstimate estimate;
  for (std::size_t j = 0; j < kNumLabels; ++j) estimate.proportions[j] = mass[j] / total;
  estimate.sample_size = final_labels_.size();
  estimate.estimator = EstimatorKind::kCoreset;
  s.estimate = estimate;
  return s;
}

std::vector<json> Store::events() const {
  std::shared_lock lock(mutex_);
  return events_;
}

json Store::snapshot() const {
  std::shared_lock lock(mutex_);
  json annotators = json::object();
  for (const auto& [id, expert] : annotators_) annotators[id] = expert;
  json interactions = json::array();
  for (const auto& [id, interaction] : interactions_) {
    interactions.push_back(serialize_interaction(interaction));
  }
  json tasks = json::array();
  for (const auto& t : tasks_) tasks.push_back(to_json(t));
  json records = json::array();
  for (const auto& [id, list] : records_) {
    for (const auto& r : list) records.push_back(severity::to_json(r));
  }
  json finals = json::object();
  for (const auto& [id, label] : final_labels_) finals[id] = std::string(to_string(label));
  json flags = json::array();
  for (const auto& f : flags_) flags.push_back(to_json(f));
  return {{"tree_version", config_.tree.version},
          {"annotators", std::move(annotators)},
          {"interactions", std::move(interactions)},
          {"tasks", std::move(tasks)},
          {"records", std::move(records)},
          {"final_labels", std::move(finals)},
          {"weights", weights_},
          {"flags", std::move(flags)}};
}

}  // namespace sevbench::service
