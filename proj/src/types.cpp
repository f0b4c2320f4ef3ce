#include "sevbench/types.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "sevbench/error.hpp"

namespace sevbench {

namespace {

bool parse_digits(std::string_view text, std::size_t pos, std::size_t count, int& out) {
  if (pos + count > text.size()) return false;
  int value = 0;
  for (std::size_t i = pos; i < pos + count; ++i) {
    if (text[i] < '0' || text[i] > '9') return false;
    value = value * 10 + (text[i] - '0');
  }
  out = value;
  return true;
}

}  // namespace

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", int(ymd.year()),
                unsigned(ymd.month()), unsigned(ymd.day()), int(hms.hours().count()),
                int(hms.minutes().count()), int(hms.seconds().count()),
                int(hms.subseconds().count()));
  return buf;
}

Timestamp parse_timestamp(std::string_view text, const std::string& field) {
  using namespace std::chrono;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0, ms = 0;
  const bool shape_ok = text.size() >= 20 && parse_digits(text, 0, 4, y) && text[4] == '-' &&
                        parse_digits(text, 5, 2, mo) && text[7] == '-' &&
                        parse_digits(text, 8, 2, d) && text[10] == 'T' &&
                        parse_digits(text, 11, 2, h) && text[13] == ':' &&
                        parse_digits(text, 14, 2, mi) && text[16] == ':' &&
                        parse_digits(text, 17, 2, s);
  if (!shape_ok) throw ParseError(field, "malformed timestamp in field '" + field + "'");
  std::size_t pos = 19;
  if (text[pos] == '.') {
    if (!parse_digits(text, pos + 1, 3, ms)) {
      throw ParseError(field, "malformed fractional seconds in field '" + field + "'");
    }
    pos += 4;
  }
  if (pos + 1 != text.size() || text[pos] != 'Z') {
    throw ParseError(field, "timestamp in field '" + field + "' must end in 'Z'");
  }
  const year_month_day ymd{year{y}, month{unsigned(mo)}, day{unsigned(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59) {
    throw ParseError(field, "out-of-range timestamp in field '" + field + "'");
  }
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + milliseconds{ms};
}

std::string_view to_string(SeverityLabel label) {
  switch (label) {
    case SeverityLabel::kSev0: return "Sev0";
    case SeverityLabel::kSev1: return "Sev1";
    case SeverityLabel::kSev2: return "Sev2";
    case SeverityLabel::kNoError: return "NoError";
  }
  return "?";
}

std::optional<SeverityLabel> parse_label(std::string_view text) {
  for (auto label : kAllLabels) {
    if (to_string(label) == text) return label;
  }
  return std::nullopt;
}

std::string_view to_string(AgentRoute route) {
  switch (route) {
    case AgentRoute::kConceptualDocs: return "conceptual_docs";
    case AgentRoute::kStructuredData: return "structured_data";
    case AgentRoute::kOther: return "other";
  }
  return "?";
}

std::optional<AgentRoute> parse_agent_route(std::string_view text) {
  for (auto route : {AgentRoute::kConceptualDocs, AgentRoute::kStructuredData, AgentRoute::kOther}) {
    if (to_string(route) == text) return route;
  }
  return std::nullopt;
}

std::string_view to_string(EstimatorKind kind) {
  return kind == EstimatorKind::kUniform ? "uniform" : "coreset";
}

std::optional<EstimatorKind> parse_estimator(std::string_view text) {
  if (text == "uniform") return EstimatorKind::kUniform;
  if (text == "coreset") return EstimatorKind::kCoreset;
  return std::nullopt;
}

void validate(const Interaction& interaction) {
  if (interaction.id.empty()) throw invariant_error("interaction id must be non-empty");
  if (interaction.conversation_id.has_value() != interaction.turn_index.has_value()) {
    throw invariant_error("interaction '" + interaction.id +
                          "': turn_index present iff conversation_id present");
  }
}

void validate_pool(const std::vector<Interaction>& pool) {
  std::set<std::string_view> seen;
  for (const auto& interaction : pool) {
    validate(interaction);
    if (!seen.insert(interaction.id).second) {
      throw invariant_error("duplicate interaction id '" + interaction.id + "'");
    }
  }
}

void validate_pool(const std::vector<EmbeddingVector>& vectors) {
  if (vectors.empty()) return;
  const auto dim = vectors.front().values.size();
  if (dim == 0) throw invariant_error("embedding dimension must be >= 1");
  for (const auto& v : vectors) {
    if (v.values.size() != dim) {
      throw invariant_error("embedding '" + v.interaction_id + "' has dimension " +
                            std::to_string(v.values.size()) + ", expected " +
                            std::to_string(dim));
    }
    for (float x : v.values) {
      if (!std::isfinite(x)) {
        throw invariant_error("embedding '" + v.interaction_id + "' has a non-finite entry");
      }
    }
  }
}

void validate(const ProportionEstimate& estimate) {
  double total = 0.0;
  for (double p : estimate.proportions) {
    if (!(p >= 0.0 && p <= 1.0)) throw invariant_error("proportion outside [0,1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw invariant_error("proportions do not sum to one");
}

}  // namespace sevbench
