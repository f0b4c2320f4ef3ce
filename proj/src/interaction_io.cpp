#include "sevbench/interaction_io.hpp"

#include <algorithm>

#include <json.hpp>

#include "sevbench/error.hpp"
#include "sevbench/io.hpp"

namespace sevbench {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* field, json::value_t type) {
  auto it = obj.find(field);
  if (it == obj.end()) {
    throw ParseError(field, std::string("missing required field '") + field + "'");
  }
  if (it->type() != type) {
    throw ParseError(field, std::string("field '") + field + "' has the wrong type");
  }
  return *it;
}

}  // namespace

std::string serialize_interaction(const Interaction& interaction) {
  json j = json::object();
  j["id"] = interaction.id;
  j["query"] = interaction.query;
  j["answer"] = interaction.answer;
  j["timestamp"] = format_timestamp(interaction.timestamp);
  j["agent_route"] = std::string(to_string(interaction.agent_route));
  if (!interaction.system_decisions.empty()) j["system_decisions"] = interaction.system_decisions;
  if (interaction.conversation_id) j["conversation_id"] = *interaction.conversation_id;
  if (interaction.turn_index) j["turn_index"] = *interaction.turn_index;
  // nlohmann::json objects are std::map backed, so keys come out sorted.
  return j.dump();
}

Interaction parse_interaction(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("", std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("", "interaction record must be a JSON object");

  static const char* const kKnown[] = {"agent_route", "answer", "conversation_id", "id",
                                       "query", "system_decisions", "timestamp", "turn_index"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw ParseError(key, "unknown field '" + key + "'");
    }
  }

  Interaction out;
  out.id = require(j, "id", json::value_t::string).get<std::string>();
  out.query = require(j, "query", json::value_t::string).get<std::string>();
  out.answer = require(j, "answer", json::value_t::string).get<std::string>();
  out.timestamp = parse_timestamp(require(j, "timestamp", json::value_t::string).get<std::string>());
  auto route = parse_agent_route(require(j, "agent_route", json::value_t::string).get<std::string>());
  if (!route) throw ParseError("agent_route", "unknown agent_route value");
  out.agent_route = *route;

  if (auto it = j.find("system_decisions"); it != j.end()) {
    if (!it->is_object()) throw ParseError("system_decisions", "system_decisions must be an object");
    for (const auto& [key, value] : it->items()) {
      if (!value.is_string()) {
        throw ParseError("system_decisions", "system_decisions value for '" + key + "' must be a string");
      }
      out.system_decisions.emplace(key, value.get<std::string>());
    }
  }
  if (auto it = j.find("conversation_id"); it != j.end()) {
    if (!it->is_string()) throw ParseError("conversation_id", "conversation_id must be a string");
    out.conversation_id = it->get<std::string>();
  }
  if (auto it = j.find("turn_index"); it != j.end()) {
    if (!it->is_number_unsigned()) {
      throw ParseError("turn_index", "turn_index must be a nonnegative integer");
    }
    out.turn_index = it->get<std::uint64_t>();
  }
  validate(out);
  return out;
}

std::vector<Interaction> read_interactions(const std::filesystem::path& path) {
  std::vector<Interaction> pool;
  for (const auto& line : read_lines(path)) pool.push_back(parse_interaction(line));
  validate_pool(pool);
  return pool;
}

void write_interactions(const std::filesystem::path& path, const std::vector<Interaction>& pool) {
  std::string out;
  for (const auto& interaction : pool) {
    validate(interaction);
    out += serialize_interaction(interaction);
    out += '\n';
  }
  write_text_atomic(path, out);
}

}  // namespace sevbench
