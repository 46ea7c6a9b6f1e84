#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "graft/errors.hpp"
#include "graft/rng.hpp"
#include "graft/schema.hpp"
#include "graft/tokenizer.hpp"

using namespace graft;

namespace {

// Raw (pre-Levi) schema with free-text predicates, the shape cmd_transform
// builds from WebNLG-style input.
DataSchema raw_graph(const std::vector<std::string>& nodes,
                     const std::vector<Tuple>& tuples, const std::string& target = "t") {
  DataSchema s;
  s.preset = "webnlg";
  s.segment_types = {"node", "predicate", "target"};
  for (const auto& n : nodes) s.segments.push_back({n, 0, Role::source});
  s.segments.push_back({target, 2, Role::target});
  s.target_order = {static_cast<int>(s.segments.size()) - 1};
  s.tuples = tuples;
  return s;
}

DataSchema random_raw_graph(Rng& rng, int n_nodes, int n_tuples) {
  std::vector<std::string> nodes;
  for (int i = 0; i < n_nodes; ++i) nodes.push_back("node" + std::to_string(i));
  std::set<std::pair<int, int>> used;
  std::vector<Tuple> tuples;
  while (static_cast<int>(tuples.size()) < n_tuples) {
    int h = static_cast<int>(rng.below(n_nodes));
    int t = static_cast<int>(rng.below(n_nodes));
    if (h == t || !used.insert({h, t}).second) continue;
    tuples.push_back({h, "rel " + std::to_string(tuples.size()), t});
  }
  return raw_graph(nodes, tuples);
}

}  // namespace

TEST_CASE("levi transform of the single stadium tuple") {
  DataSchema raw = raw_graph({"Clyde F.C", "Broadwood Stadium"},
                             {{0, "ground", 1}}, "some target");
  DataSchema out = levi_transform(raw);

  REQUIRE(out.segments.size() == 4);  // 2 nodes + 1 predicate node + target
  CHECK(out.segments[0].text == "Clyde F.C");
  CHECK(out.type_name(out.segments[0].type) == "node");
  CHECK(out.segments[2].text == "ground");
  CHECK(out.type_name(out.segments[2].type) == "predicate");

  REQUIRE(out.tuples.size() == 2);
  CHECK(out.tuples[0].head == 0);
  CHECK(out.tuples[0].predicate == kHeadToPredicate);
  CHECK(out.tuples[0].tail == 2);
  CHECK(out.tuples[1].head == 2);
  CHECK(out.tuples[1].predicate == kPredicateToTail);
  CHECK(out.tuples[1].tail == 1);
}

TEST_CASE("levi transform keeps tuple-free graphs unchanged") {
  DataSchema raw = raw_graph({"a", "b", "c"}, {});
  DataSchema out = levi_transform(raw);
  CHECK(out.segments.size() == 4);
  CHECK(out.tuples.empty());
  for (const auto& cat : out.relations) {
    if (cat.origin == Origin::predicate)
      CHECK((cat.name == kHeadToPredicate || cat.name == kPredicateToTail));
  }
}

TEST_CASE("levi transform counting law on random graphs") {
  Rng rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 2 + static_cast<int>(rng.below(7));
    int max_pairs = n * (n - 1);
    int m = static_cast<int>(rng.below(std::min(max_pairs, 10) + 1));
    DataSchema raw = random_raw_graph(rng, n, m);
    DataSchema out = levi_transform(raw);
    // counting oracle: nodes n+m (+1 target), tuples 2m
    CHECK(out.segments.size() == static_cast<std::size_t>(n + m + 1));
    CHECK(out.tuples.size() == static_cast<std::size_t>(2 * m));
    std::set<std::string> predicates;
    for (const auto& t : out.tuples) predicates.insert(t.predicate);
    if (m > 0) CHECK(predicates == std::set<std::string>{kHeadToPredicate, kPredicateToTail});
  }
}

TEST_CASE("levi transform keeps a fixed 6-node 9-tuple size") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    DataSchema out = levi_transform(random_raw_graph(rng, 6, 9));
    CHECK(out.segments.size() == 16);  // 6 + 9 + target
    CHECK(out.tuples.size() == 18);
  }
}

TEST_CASE("levi transform rejects bad input") {
  DataSchema bad = raw_graph({"a", "b"}, {{0, "r", 5}});
  CHECK_THROWS_AS(levi_transform(bad), data_error);
  DataSchema empty_pred = raw_graph({"a", "b"}, {{0, "  ", 1}});
  CHECK_THROWS_AS(levi_transform(empty_pred), data_error);
  DataSchema self_loop = raw_graph({"a", "b"}, {{0, "r", 0}});
  CHECK_THROWS_AS(levi_transform(self_loop), data_error);
  DataSchema dup = raw_graph({"a", "b"}, {{0, "r", 1}, {0, "q", 1}});
  CHECK_THROWS_AS(levi_transform(dup), data_error);
}

TEST_CASE("relation presets enumerate the documented categories") {
  SUBCASE("key-value has five categories with a masked source-to-target") {
    const PresetRules& p = relation_preset("key-value");
    CHECK(p.relations.size() == 5);
    CHECK(p.relations.contains(kPaired));
    CHECK(p.relations.contains("to-other-key"));
    CHECK(p.relations.contains("to-other-value"));
    CHECK(p.relations.contains(kSameSegment));
    CHECK_FALSE(p.relations.at(p.relations.require(kSourceToTarget)).visible);
  }
  SUBCASE("agenda has twelve categories: seven predicates plus five supplementary") {
    const PresetRules& p = relation_preset("agenda");
    CHECK(p.relations.size() == 12);
    int predicates = 0, supplementary = 0;
    for (const auto& c : p.relations)
      (c.origin == Origin::predicate ? predicates : supplementary)++;
    CHECK(predicates == 7);
    CHECK(supplementary == 5);
    for (const char* name : {"Used-for", "Feature-of", "Conjuction", "Part-of",
                             "Evaluate-for", "Hyponym-for", "Compare"})
      CHECK(p.relations.at(p.relations.require(name)).origin == Origin::predicate);
  }
  SUBCASE("webnlg has seven categories with the closed predicate pair") {
    const PresetRules& p = relation_preset("webnlg");
    CHECK(p.relations.size() == 7);
    for (const auto& c : p.relations) {
      if (c.origin == Origin::predicate)
        CHECK((c.name == kHeadToPredicate || c.name == kPredicateToTail));
    }
    CHECK(p.relations.contains("target-to-node"));
    CHECK(p.relations.contains("target-to-predicate"));
  }
  SUBCASE("unknown preset raises a configuration error") {
    CHECK_THROWS_AS(relation_preset("e2e-v2"), config_error);
  }
}

TEST_CASE("key-value matrix for one pair plus target matches the documented cells") {
  DataSchema s = assemble_schema(
      "key-value",
      {{"name", 0, Role::source}, {"Loch Fyne", 1, Role::source}, {"about it", 2, Role::target}},
      {{0, kPaired, 1}});
  auto name = [&](int i, int j) { return s.relations.at(s.matrix.at(i, j)).name; };
  CHECK(name(0, 0) == kSameSegment);
  CHECK(name(1, 1) == kSameSegment);
  CHECK(name(2, 2) == kSameSegment);
  CHECK(name(0, 1) == kPaired);
  CHECK(name(1, 0) == kPaired);
  CHECK(name(0, 2) == kSourceToTarget);
  CHECK(name(1, 2) == kSourceToTarget);
  CHECK(name(2, 0) == "to-other-key");
  CHECK(name(2, 1) == "to-other-value");
  CHECK_FALSE(s.relations.at(s.matrix.at(0, 2)).visible);
}

TEST_CASE("single segment gives the 1x1 same-segment matrix") {
  DataSchema s = assemble_schema("key-value", {{"only", 0, Role::source}}, {});
  REQUIRE(s.matrix.side == 1);
  CHECK(s.relations.at(s.matrix.at(0, 0)).name == kSameSegment);
}

TEST_CASE("three key-value pairs and a target match the rule-enumeration oracle") {
  std::vector<Segment> segments;
  std::vector<Tuple> tuples;
  const char* keys[] = {"name", "food", "area"};
  const char* values[] = {"Loch Fyne", "French", "riverside"};
  for (int p = 0; p < 3; ++p) {
    segments.push_back({keys[p], 0, Role::source});
    segments.push_back({values[p], 1, Role::source});
    tuples.push_back({2 * p, kPaired, 2 * p + 1});
  }
  segments.push_back({"it is by the river", 2, Role::target});
  DataSchema s = assemble_schema("key-value", segments, tuples);
  REQUIRE(s.matrix.side == 7);

  // Independent enumeration of the five rules.
  auto expected = [](int i, int j) -> std::string {
    if (i == j) return kSameSegment;
    bool i_target = i == 6, j_target = j == 6;
    bool paired = !i_target && !j_target && i / 2 == j / 2;
    if (paired) return kPaired;
    if (j_target) return kSourceToTarget;
    return j % 2 == 0 ? "to-other-key" : "to-other-value";
  };
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j)
      CHECK(s.relations.at(s.matrix.at(i, j)).name == expected(i, j));
}

TEST_CASE("build_relation_matrix is deterministic") {
  Rng rng(9);
  DataSchema raw = levi_transform(random_raw_graph(rng, 5, 6));
  const PresetRules& rules = relation_preset("webnlg");
  RelationMatrix a = build_relation_matrix(raw, rules);
  RelationMatrix b = build_relation_matrix(raw, rules);
  CHECK(a.entries == b.entries);
}

TEST_CASE("webnlg matrix mirrors tuple categories and keys fallbacks on the key type") {
  DataSchema raw = raw_graph({"a", "b"}, {{0, "r", 1}});
  DataSchema s = levi_transform(raw);
  s.matrix = build_relation_matrix(s, relation_preset("webnlg"));
  // order: a(0) b(1) r(2 predicate) target(3)
  auto name = [&](int i, int j) { return s.relations.at(s.matrix.at(i, j)).name; };
  CHECK(name(0, 2) == kHeadToPredicate);
  CHECK(name(2, 0) == kHeadToPredicate);  // mirrored
  CHECK(name(2, 1) == kPredicateToTail);
  CHECK(name(1, 2) == kPredicateToTail);  // mirrored
  CHECK(name(0, 1) == "to-other-node");
  CHECK(name(3, 0) == "target-to-node");
  CHECK(name(3, 2) == "target-to-predicate");
}

TEST_CASE("direction preset keeps tuple categories directional") {
  DataSchema s = assemble_schema(
      "direction", {{"alpha", 0, Role::source}, {"bravo", 0, Role::source},
                    {"alpha precedes bravo", 1, Role::target}},
      {{0, "precedes", 1}, {1, "follows", 0}});
  auto name = [&](int i, int j) { return s.relations.at(s.matrix.at(i, j)).name; };
  CHECK(name(0, 1) == "precedes");
  CHECK(name(1, 0) == "follows");
  CHECK(name(2, 0) == "target-to-node");
  CHECK(name(0, 2) == kSourceToTarget);
}

TEST_CASE("flatten emits head/predicate/tail layout for tuple schemas") {
  DataSchema raw = raw_graph({"a", "b"}, {{0, "r", 1}});
  FlattenResult res = flatten_schema(raw);
  CHECK(res.source_text == "⟨H⟩ a ⟨P⟩ r ⟨T⟩ b");
  CHECK(res.warnings.empty());
  CHECK(res.schema.preset == "flattened");
  REQUIRE(res.schema.segments.size() == 2);
  CHECK(res.schema.relations.size() == 3);
}

TEST_CASE("flatten emits key/value layout for pairing tuples") {
  DataSchema s = assemble_schema(
      "key-value",
      {{"name", 0, Role::source}, {"Loch Fyne", 1, Role::source},
       {"food", 0, Role::source}, {"French", 1, Role::source}, {"tgt", 2, Role::target}},
      {{0, kPaired, 1}, {2, kPaired, 3}});
  FlattenResult res = flatten_schema(s);
  CHECK(res.source_text ==
        "⟨K⟩ name ⟨V⟩ Loch Fyne ⟨K⟩ food ⟨V⟩ French");
}

TEST_CASE("flatten of an empty tuple list warns and yields no source segment") {
  DataSchema s = assemble_schema("key-value", {{"tgt", 2, Role::target}}, {});
  FlattenResult res = flatten_schema(s);
  CHECK(res.source_text.empty());
  REQUIRE(res.warnings.size() == 1);
  CHECK(res.schema.segments.size() == 1);  // just the target
}

TEST_CASE("flatten length law and invertibility for key-value schemas") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    int pairs = 1 + static_cast<int>(rng.below(5));
    std::vector<Segment> segments;
    std::vector<Tuple> tuples;
    std::vector<std::string> texts;
    for (int p = 0; p < pairs; ++p) {
      std::string k = "key" + std::to_string(p) + (rng.below(2) ? " extra" : "");
      std::string v = "value " + std::to_string(rng.below(100));
      texts.push_back(k);
      texts.push_back(v);
      segments.push_back({k, 0, Role::source});
      segments.push_back({v, 1, Role::source});
      tuples.push_back({2 * p, kPaired, 2 * p + 1});
    }
    segments.push_back({"some target", 2, Role::target});
    DataSchema s = assemble_schema("key-value", segments, tuples);
    FlattenResult res = flatten_schema(s);

    std::size_t source_tokens = 0;
    for (const auto& t : texts) source_tokens += word_tokenize(t).size();
    auto flat_tokens = word_tokenize(res.source_text);
    CHECK(flat_tokens.size() == source_tokens + 2 * pairs);  // one K and one V per pair

    // Invertibility: splitting on the separators recovers the text multiset.
    std::multiset<std::string> expected(texts.begin(), texts.end());
    std::multiset<std::string> recovered;
    std::string cur;
    for (const auto& tok : flat_tokens) {
      if (tok == "⟨K⟩" || tok == "⟨V⟩") {
        if (!cur.empty()) recovered.insert(cur);
        cur.clear();
      } else {
        cur += cur.empty() ? tok : " " + tok;
      }
    }
    if (!cur.empty()) recovered.insert(cur);
    CHECK(recovered == expected);
  }
}

TEST_CASE("schema JSONL round trip preserves structure and matrix") {
  DataSchema s = assemble_schema(
      "key-value",
      {{"name", 0, Role::source}, {"Loch Fyne", 1, Role::source}, {"tgt", 2, Role::target}},
      {{0, kPaired, 1}});
  std::string line = schema_to_json_line(s);
  DataSchema back = schema_from_json_line(line);
  CHECK(back.preset == s.preset);
  REQUIRE(back.segments.size() == s.segments.size());
  for (std::size_t i = 0; i < s.segments.size(); ++i) {
    CHECK(back.segments[i].text == s.segments[i].text);
    CHECK(back.segments[i].type == s.segments[i].type);
  }
  CHECK(back.matrix.entries == s.matrix.entries);
  CHECK(back.target_order == s.target_order);
}

TEST_CASE("schema records reject unknown fields and malformed JSON") {
  CHECK_THROWS_AS(schema_from_json_line("{not json"), data_error);
  CHECK_THROWS_AS(schema_from_json_line(R"({"segments":[],"preset":"key-value","x":1})"),
                  data_error);
  CHECK_THROWS_AS(
      schema_from_json_line(
          R"({"segments":[{"text":"a","type":"nope","role":"source"}],"preset":"key-value"})"),
      data_error);
}

TEST_CASE("multi-target schemas lazily declare the unrelated category") {
  DataSchema s = assemble_schema(
      "key-value",
      {{"k", 0, Role::source}, {"v", 1, Role::source},
       {"t1", 2, Role::target}, {"t2", 2, Role::target}},
      {{0, kPaired, 1}});
  CHECK(s.relations.contains(kUnrelated));
  CHECK(s.relations.at(s.matrix.at(2, 3)).name == kUnrelated);
  CHECK(s.relations.at(s.matrix.at(3, 2)).name == kUnrelated);
  // Single-target schemas keep the paper-exact category count.
  DataSchema single = assemble_schema(
      "key-value", {{"k", 0, Role::source}, {"v", 1, Role::source}, {"t", 2, Role::target}},
      {{0, kPaired, 1}});
  CHECK(single.relations.size() == 5);
}
