#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sevbench {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// ISO-8601 UTC with millisecond precision, e.g. "2024-07-01T12:30:00.000Z".
std::string format_timestamp(Timestamp t);
/// Accepts "YYYY-MM-DDTHH:MM:SS[.fff]Z". Throws ParseError(field) on malformed input.
Timestamp parse_timestamp(std::string_view text, const std::string& field = "timestamp");

enum class SeverityLabel : std::uint8_t { kSev0 = 0, kSev1 = 1, kSev2 = 2, kNoError = 3 };

inline constexpr std::size_t kNumLabels = 4;
inline constexpr std::array<SeverityLabel, kNumLabels> kAllLabels = {
    SeverityLabel::kSev0, SeverityLabel::kSev1, SeverityLabel::kSev2, SeverityLabel::kNoError};

constexpr std::size_t label_index(SeverityLabel label) {
  return static_cast<std::size_t>(label);
}

std::string_view to_string(SeverityLabel label);
/// "Sev0" | "Sev1" | "Sev2" | "NoError"
std::optional<SeverityLabel> parse_label(std::string_view text);

enum class AgentRoute : std::uint8_t { kConceptualDocs, kStructuredData, kOther };

std::string_view to_string(AgentRoute route);
std::optional<AgentRoute> parse_agent_route(std::string_view text);

/// One production query/answer pair plus the system decisions logged while answering it.
struct Interaction {
  std::string id;
  std::string query;
  std::string answer;
  Timestamp timestamp{};
  AgentRoute agent_route = AgentRoute::kOther;
  std::map<std::string, std::string> system_decisions;
  std::optional<std::string> conversation_id;
  std::optional<std::uint64_t> turn_index;

  bool operator==(const Interaction&) const = default;
};

/// Throws invariant Error if id is empty or turn_index/conversation_id presence differs.
void validate(const Interaction& interaction);

/// Throws invariant Error if ids repeat.
void validate_pool(const std::vector<Interaction>& pool);

struct EmbeddingVector {
  std::string interaction_id;
  std::vector<float> values;

  bool operator==(const EmbeddingVector&) const = default;
};

/// Finite entries, shared dimension >= 1.
void validate_pool(const std::vector<EmbeddingVector>& vectors);

enum class EstimatorKind : std::uint8_t { kUniform, kCoreset };

std::string_view to_string(EstimatorKind kind);
std::optional<EstimatorKind> parse_estimator(std::string_view text);

struct ProportionEstimate {
  std::array<double, kNumLabels> proportions{};
  std::size_t sample_size = 0;
  EstimatorKind estimator = EstimatorKind::kUniform;

  double operator[](SeverityLabel label) const { return proportions[label_index(label)]; }
  bool operator==(const ProportionEstimate&) const = default;
};

/// Each proportion in [0,1] and the sum within 1e-9 of one.
void validate(const ProportionEstimate& estimate);

}  // namespace sevbench
