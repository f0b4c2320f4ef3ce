#include <doctest.h>

#include <random>
#include <set>

#include <json.hpp>

#include "sevbench/error.hpp"
#include "sevbench/interaction_io.hpp"
#include "sevbench/io.hpp"
#include "support.hpp"

using namespace sevbench;
using nlohmann::json;

namespace {

Interaction random_interaction(std::mt19937_64& gen, std::size_t n) {
  static const char* const kWords[] = {"index", "query", "the", "ñandú", "table\t", "\"quoted\"",
                                       "line\nbreak", "emoji 🙂", "", "back\\slash"};
  auto text = [&] {
    std::string s;
    for (int i = 0, m = static_cast<int>(gen() % 6); i < m; ++i) s += kWords[gen() % 10], s += ' ';
    return s;
  };
  Interaction i;
  i.id = "id-" + std::to_string(n) + "-" + std::to_string(gen() % 1000);
  i.query = text();
  i.answer = text();
  i.timestamp = Timestamp{std::chrono::milliseconds{static_cast<std::int64_t>(gen() % 4000000000000ULL)}};
  i.agent_route = static_cast<AgentRoute>(gen() % 3);
  for (int k = 0, m = static_cast<int>(gen() % 3); k < m; ++k) {
    i.system_decisions["key" + std::to_string(gen() % 5)] = text();
  }
  if (gen() % 2) {
    i.conversation_id = "conv-" + std::to_string(gen() % 100);
    i.turn_index = gen() % 20;
  }
  return i;
}

}  // namespace

TEST_CASE("minimal record serializes exactly its required keys") {
  const auto i = testing::make_interaction("a");
  const auto j = json::parse(serialize_interaction(i));
  std::set<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.insert(k);
  CHECK(keys == std::set<std::string>{"agent_route", "answer", "id", "query", "timestamp"});
}

TEST_CASE("system decisions serialize as a nested object with sorted keys") {
  auto i = testing::make_interaction("a");
  i.system_decisions = {{"retrieval", "hit"}, {"answered", "yes"}};
  const auto text = serialize_interaction(i);
  CHECK(text.find(R"("system_decisions":{"answered":"yes","retrieval":"hit"})") != std::string::npos);
  CHECK(text.find("\"agent_route\"") < text.find("\"answer\""));
}

TEST_CASE("serialization is byte-identical across calls") {
  auto i = testing::make_interaction("a");
  i.system_decisions = {{"retrieval", "hit"}};
  CHECK(serialize_interaction(i) == serialize_interaction(i));
}

TEST_CASE("parse of serialize is the identity") {
  auto i = testing::make_interaction("a");
  i.conversation_id = "c1";
  i.turn_index = 3;
  CHECK(parse_interaction(serialize_interaction(i)) == i);
}

TEST_CASE("missing id is reported by field name") {
  const std::string line =
      R"({"query":"q","answer":"a","timestamp":"2024-07-01T00:00:00.000Z","agent_route":"other"})";
  try {
    parse_interaction(line);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.field() == "id");
  }
}

TEST_CASE("wrong types, unknown fields and malformed JSON are rejected") {
  CHECK_THROWS_AS(parse_interaction("{not json"), ParseError);
  CHECK_THROWS_AS(parse_interaction(R"({"id":1})"), ParseError);
  const std::string extra =
      R"({"id":"x","query":"q","answer":"a","timestamp":"2024-07-01T00:00:00.000Z","agent_route":"other","color":"red"})";
  try {
    parse_interaction(extra);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.field() == "color");
  }
  const std::string bad_route =
      R"({"id":"x","query":"q","answer":"a","timestamp":"2024-07-01T00:00:00.000Z","agent_route":"sql"})";
  CHECK_THROWS_AS(parse_interaction(bad_route), ParseError);
}

TEST_CASE("turn_index without conversation_id violates an invariant") {
  const std::string line =
      R"({"id":"x","query":"q","answer":"a","timestamp":"2024-07-01T00:00:00.000Z","agent_route":"other","turn_index":2})";
  try {
    parse_interaction(line);
    FAIL("expected an invariant error");
  } catch (const ParseError&) {
    FAIL("expected an invariant error, not a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == "invariant");
  }
}

TEST_CASE("round trips hold on generated records") {
  std::mt19937_64 gen(11);
  for (std::size_t n = 0; n < 500; ++n) {
    const auto i = random_interaction(gen, n);
    const auto line = serialize_interaction(i);
    const auto back = parse_interaction(line);
    REQUIRE(back == i);
    REQUIRE(serialize_interaction(back) == line);
  }
}

TEST_CASE("serialization is injective on generated records") {
  std::mt19937_64 gen(12);
  std::vector<Interaction> seen;
  std::set<std::string> lines;
  for (std::size_t n = 0; n < 300; ++n) {
    auto i = random_interaction(gen, n % 40);
    const auto line = serialize_interaction(i);
    const bool fresh = lines.insert(line).second;
    const bool duplicate = std::find(seen.begin(), seen.end(), i) != seen.end();
    REQUIRE(fresh != duplicate);
    if (!duplicate) seen.push_back(i);
  }
}

TEST_CASE("pools reject repeated ids") {
  std::vector<Interaction> pool{testing::make_interaction("a"), testing::make_interaction("a")};
  CHECK_THROWS_AS(validate_pool(pool), Error);
}

TEST_CASE("interaction files round trip") {
  testing::TempDir dir;
  std::vector<Interaction> pool{testing::make_interaction("a"), testing::make_interaction("b")};
  write_interactions(dir / "p.jsonl", pool);
  CHECK(read_interactions(dir / "p.jsonl") == pool);
}

TEST_CASE("timestamps format and parse strictly") {
  const auto t = parse_timestamp("2024-02-29T23:59:59.123Z");
  CHECK(format_timestamp(t) == "2024-02-29T23:59:59.123Z");
  CHECK(format_timestamp(parse_timestamp("2024-07-01T00:00:00Z")) == "2024-07-01T00:00:00.000Z");
  CHECK_THROWS_AS(parse_timestamp("2023-02-29T00:00:00Z"), ParseError);
  CHECK_THROWS_AS(parse_timestamp("2024-07-01 00:00:00Z"), ParseError);
  CHECK_THROWS_AS(parse_timestamp("2024-07-01T00:00:00"), ParseError);
}

TEST_CASE("labels have stable names") {
  for (auto label : kAllLabels) CHECK(parse_label(to_string(label)) == label);
  CHECK(to_string(SeverityLabel::kNoError) == "NoError");
  CHECK_FALSE(parse_label("sev0").has_value());
}

TEST_CASE("proportion estimates must lie on the simplex") {
  ProportionEstimate ok{{0.25, 0.0, 0.0, 0.75}, 2, EstimatorKind::kCoreset};
  CHECK_NOTHROW(validate(ok));
  ProportionEstimate off{{0.5, 0.0, 0.0, 0.75}, 2, EstimatorKind::kCoreset};
  CHECK_THROWS_AS(validate(off), Error);
  ProportionEstimate negative{{-0.1, 0.1, 0.5, 0.5}, 2, EstimatorKind::kCoreset};
  CHECK_THROWS_AS(validate(negative), Error);
}

TEST_CASE("atomic writes replace file contents") {
  testing::TempDir dir;
  write_text_atomic(dir / "f.txt", "one\r\n\ntwo\n");
  write_text_atomic(dir / "f.txt", "three\r\n\nfour\n");
  CHECK(read_lines(dir / "f.txt") == std::vector<std::string>{"three", "four"});
}
