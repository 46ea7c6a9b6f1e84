#include "graft/schema.hpp"

#include <algorithm>
#include <set>
#include <utility>

#include "graft/errors.hpp"
#include "graft/tokenizer.hpp"
#include "json.hpp"

namespace graft {

int RelationSet::add(RelationCategory cat) {
  if (by_name_.count(cat.name))
    throw data_error("relation category '" + cat.name + "' declared twice");
  int idx = static_cast<int>(cats_.size());
  by_name_.emplace(cat.name, idx);
  cats_.push_back(std::move(cat));
  return idx;
}

int RelationSet::index_of(std::string_view name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? -1 : it->second;
}

int RelationSet::require(std::string_view name) const {
  int idx = index_of(name);
  if (idx < 0) throw data_error("unknown relation category '" + std::string(name) + "'");
  return idx;
}

const RelationCategory& RelationSet::at(int idx) const {
  if (idx < 0 || idx >= size())
    throw data_error("relation category index " + std::to_string(idx) + " out of range");
  return cats_[idx];
}

RelationMatrix RelationMatrix::filled(int side, int value) {
  RelationMatrix m;
  m.side = side;
  m.entries.assign(static_cast<std::size_t>(side) * side, value);
  return m;
}

int DataSchema::type_id(std::string_view name) const {
  for (int i = 0; i < static_cast<int>(segment_types.size()); ++i)
    if (segment_types[i] == name) return i;
  return -1;
}

void validate(const DataSchema& schema, ValidateMode mode) {
  const int n = static_cast<int>(schema.segments.size());
  for (int i = 0; i < n; ++i) {
    const Segment& seg = schema.segments[i];
    if (seg.type < 0 || seg.type >= static_cast<int>(schema.segment_types.size()))
      throw data_error("segment " + std::to_string(i) + " has undeclared type id " +
                       std::to_string(seg.type));
    bool empty_ok = seg.role == Role::target;  // generation inputs carry empty targets
    if (!empty_ok && normalize_whitespace(seg.text).empty())
      throw data_error("segment " + std::to_string(i) + " has empty text");
  }

  std::set<std::pair<int, int>> seen_pairs;
  for (const Tuple& t : schema.tuples) {
    if (t.head < 0 || t.head >= n || t.tail < 0 || t.tail >= n)
      throw data_error("tuple (" + std::to_string(t.head) + ", " + t.predicate + ", " +
                       std::to_string(t.tail) + ") references a missing segment index");
    if (t.head == t.tail)
      throw data_error("tuple with head == tail (" + std::to_string(t.head) + ")");
    if (!seen_pairs.insert({t.head, t.tail}).second)
      throw data_error("more than one tuple for ordered pair (" + std::to_string(t.head) +
                       ", " + std::to_string(t.tail) + ")");
    if (mode == ValidateMode::open_predicates) {
      if (normalize_whitespace(t.predicate).empty())
        throw data_error("tuple with empty predicate text");
    } else {
      if (!schema.relations.contains(t.predicate))
        throw data_error("tuple predicate '" + t.predicate +
                         "' is not a declared relation category");
    }
  }

  if (mode != ValidateMode::open_predicates) {
    int same = schema.relations.index_of(kSameSegment);
    if (same < 0 || schema.relations.at(same).origin != Origin::supplementary ||
        !schema.relations.at(same).visible)
      throw data_error("relation set must declare a visible supplementary 'same-segment'");
  }

  std::vector<int> expected_targets;
  for (int i = 0; i < n; ++i)
    if (schema.segments[i].role == Role::target) expected_targets.push_back(i);
  if (schema.target_order.size() != expected_targets.size())
    throw data_error("target_order lists " + std::to_string(schema.target_order.size()) +
                     " segments, schema has " + std::to_string(expected_targets.size()) +
                     " targets");
  std::set<int> order_set(schema.target_order.begin(), schema.target_order.end());
  if (order_set.size() != schema.target_order.size())
    throw data_error("target_order repeats a segment");
  for (int idx : schema.target_order) {
    if (idx < 0 || idx >= n || schema.segments[idx].role != Role::target)
      throw data_error("target_order entry " + std::to_string(idx) +
                       " is not a target segment");
  }

  if (mode == ValidateMode::full) {
    if (schema.matrix.side != n)
      throw data_error("relation matrix side " + std::to_string(schema.matrix.side) +
                       " does not match segment count " + std::to_string(n));
    int same = schema.relations.require(kSameSegment);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        int e = schema.matrix.at(i, j);
        if (e < 0 || e >= schema.relations.size())
          throw data_error("matrix entry (" + std::to_string(i) + "," + std::to_string(j) +
                           ") indexes no declared category");
        if (i == j && e != same)
          throw data_error("matrix diagonal at " + std::to_string(i) +
                           " is not 'same-segment'");
      }
    }
  }
}

namespace {

RelationSet make_relations(
    std::initializer_list<std::tuple<const char*, Origin, bool>> cats) {
  RelationSet set;
  for (auto& [name, origin, visible] : cats) set.add({name, origin, visible});
  return set;
}

bool is_target(const DataSchema& s, int i) { return s.segments[i].role == Role::target; }

PresetRules make_key_value_preset() {
  PresetRules p;
  p.name = "key-value";
  p.segment_types = {"key", "value", "target"};
  p.relations = make_relations({
      {kPaired, Origin::supplementary, true},
      {"to-other-key", Origin::supplementary, true},
      {"to-other-value", Origin::supplementary, true},
      {kSourceToTarget, Origin::supplementary, false},
      {kSameSegment, Origin::supplementary, true},
  });
  p.fallback = [](const DataSchema& s, int i, int j) -> const char* {
    if (is_target(s, j)) return is_target(s, i) ? kUnrelated : kSourceToTarget;
    const std::string& jt = s.type_name(s.segments[j].type);
    if (jt == "key") return "to-other-key";
    if (jt == "value") return "to-other-value";
    return nullptr;
  };
  return p;
}

PresetRules make_agenda_preset() {
  PresetRules p;
  p.name = "agenda";
  p.segment_types = {"concept", "class", "target"};
  p.relations = make_relations({
      {"Used-for", Origin::predicate, true},
      {"Feature-of", Origin::predicate, true},
      {"Conjuction", Origin::predicate, true},
      {"Part-of", Origin::predicate, true},
      {"Evaluate-for", Origin::predicate, true},
      {"Hyponym-for", Origin::predicate, true},
      {"Compare", Origin::predicate, true},
      {kPaired, Origin::supplementary, true},
      {"to-other-concept", Origin::supplementary, true},
      {"to-other-class", Origin::supplementary, true},
      {kSourceToTarget, Origin::supplementary, false},
      {kSameSegment, Origin::supplementary, true},
  });
  p.fallback = [](const DataSchema& s, int i, int j) -> const char* {
    if (is_target(s, j)) return is_target(s, i) ? kUnrelated : kSourceToTarget;
    const std::string& jt = s.type_name(s.segments[j].type);
    if (jt == "concept") return "to-other-concept";
    if (jt == "class") return "to-other-class";
    return nullptr;
  };
  return p;
}

PresetRules make_webnlg_preset() {
  PresetRules p;
  p.name = "webnlg";
  p.segment_types = {"node", "predicate", "target"};
  p.requires_levi = true;
  p.relations = make_relations({
      {kHeadToPredicate, Origin::predicate, true},
      {kPredicateToTail, Origin::predicate, true},
      {"to-other-predicate", Origin::supplementary, true},
      {"to-other-node", Origin::supplementary, true},
      {"target-to-node", Origin::supplementary, true},
      {"target-to-predicate", Origin::supplementary, true},
      {kSameSegment, Origin::supplementary, true},
  });
  p.fallback = [](const DataSchema& s, int i, int j) -> const char* {
    // Source-to-target entries reuse the target-to-X category of the source
    // side; they are hidden by the hard source-to-target mask regardless.
    if (is_target(s, j) && is_target(s, i)) return kUnrelated;
    int other = is_target(s, j) ? i : j;
    const std::string& ot = s.type_name(s.segments[other].type);
    if (is_target(s, i) || is_target(s, j))
      return ot == "predicate" ? "target-to-predicate" : "target-to-node";
    if (ot == "predicate") return "to-other-predicate";
    if (ot == "node") return "to-other-node";
    return nullptr;
  };
  return p;
}

PresetRules make_flattened_preset() {
  PresetRules p;
  p.name = "flattened";
  p.segment_types = {"source", "target"};
  p.relations = make_relations({
      {kSameSegment, Origin::supplementary, true},
      {"other", Origin::supplementary, true},
      {"masked-to-target", Origin::supplementary, false},
  });
  p.fallback = [](const DataSchema& s, int i, int j) -> const char* {
    if (is_target(s, j) && !is_target(s, i)) return "masked-to-target";
    return "other";
  };
  return p;
}

PresetRules make_direction_preset() {
  PresetRules p;
  p.name = "direction";
  p.segment_types = {"node", "target"};
  p.mirror_tuples = false;  // the whole point is the directed category
  p.relations = make_relations({
      {"precedes", Origin::predicate, true},
      {"follows", Origin::predicate, true},
      {"target-to-node", Origin::supplementary, true},
      {kSourceToTarget, Origin::supplementary, false},
      {kUnrelated, Origin::supplementary, true},
      {kSameSegment, Origin::supplementary, true},
  });
  p.fallback = [](const DataSchema& s, int i, int j) -> const char* {
    if (is_target(s, j)) return is_target(s, i) ? kUnrelated : kSourceToTarget;
    if (is_target(s, i)) return "target-to-node";
    return kUnrelated;
  };
  return p;
}

}  // namespace

const PresetRules& relation_preset(const std::string& name) {
  static const std::map<std::string, PresetRules> presets = [] {
    std::map<std::string, PresetRules> m;
    for (auto make : {make_key_value_preset, make_agenda_preset, make_webnlg_preset,
                      make_flattened_preset, make_direction_preset}) {
      PresetRules p = make();
      m.emplace(p.name, std::move(p));
    }
    return m;
  }();
  auto it = presets.find(name);
  if (it == presets.end()) throw config_error("unknown relation preset '" + name + "'");
  return it->second;
}

DataSchema levi_transform(const DataSchema& schema) {
  validate(schema, ValidateMode::open_predicates);
  int pred_type = schema.type_id("predicate");
  if (pred_type < 0)
    throw data_error("levi_transform: schema declares no 'predicate' segment type");

  const int n = static_cast<int>(schema.segments.size());
  DataSchema out;
  out.preset = "webnlg";
  out.segment_types = schema.segment_types;
  out.relations = relation_preset("webnlg").relations;

  // New order: sources, then one predicate-node per tuple, then targets.
  std::vector<int> remap(n, -1);
  for (int i = 0; i < n; ++i) {
    if (schema.segments[i].role == Role::source) {
      remap[i] = static_cast<int>(out.segments.size());
      out.segments.push_back(schema.segments[i]);
    }
  }
  std::vector<int> pred_index(schema.tuples.size());
  for (std::size_t k = 0; k < schema.tuples.size(); ++k) {
    pred_index[k] = static_cast<int>(out.segments.size());
    out.segments.push_back(
        {normalize_whitespace(schema.tuples[k].predicate), pred_type, Role::source});
  }
  for (int i = 0; i < n; ++i) {
    if (schema.segments[i].role == Role::target) {
      remap[i] = static_cast<int>(out.segments.size());
      out.segments.push_back(schema.segments[i]);
    }
  }

  for (std::size_t k = 0; k < schema.tuples.size(); ++k) {
    const Tuple& t = schema.tuples[k];
    out.tuples.push_back({remap[t.head], kHeadToPredicate, pred_index[k]});
    out.tuples.push_back({pred_index[k], kPredicateToTail, remap[t.tail]});
  }

  for (int i = 0; i < static_cast<int>(out.segments.size()); ++i)
    if (out.segments[i].role == Role::target) out.target_order.push_back(i);
  if (out.target_order.size() > 1) out.relations.add({kUnrelated, Origin::supplementary, true});

  validate(out, ValidateMode::closed);
  return out;
}

RelationMatrix build_relation_matrix(const DataSchema& schema, const PresetRules& rules) {
  const int n = static_cast<int>(schema.segments.size());
  const int same = schema.relations.require(kSameSegment);

  std::map<std::pair<int, int>, int> by_pair;
  for (const Tuple& t : schema.tuples)
    by_pair[{t.head, t.tail}] = schema.relations.require(t.predicate);

  RelationMatrix m = RelationMatrix::filled(n, -1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        m.set(i, j, same);
        continue;
      }
      if (auto it = by_pair.find({i, j}); it != by_pair.end()) {
        m.set(i, j, it->second);
        continue;
      }
      if (rules.mirror_tuples) {
        if (auto it = by_pair.find({j, i}); it != by_pair.end()) {
          m.set(i, j, it->second);
          continue;
        }
      }
      const char* name = rules.fallback ? rules.fallback(schema, i, j) : nullptr;
      int idx = name ? schema.relations.index_of(name) : -1;
      if (idx < 0)
        throw config_error("preset '" + rules.name + "' leaves segment pair (" +
                           std::to_string(i) + "," + std::to_string(j) + ") uncovered");
      m.set(i, j, idx);
    }
  }
  return m;
}

DataSchema assemble_schema(const std::string& preset, std::vector<Segment> segments,
                           std::vector<Tuple> tuples) {
  const PresetRules& rules = relation_preset(preset);
  DataSchema s;
  s.preset = preset;
  s.segment_types = rules.segment_types;
  s.relations = rules.relations;
  s.segments = std::move(segments);
  for (Segment& seg : s.segments) seg.text = normalize_whitespace(seg.text);
  s.tuples = std::move(tuples);
  for (int i = 0; i < static_cast<int>(s.segments.size()); ++i)
    if (s.segments[i].role == Role::target) s.target_order.push_back(i);
  if (s.target_order.size() > 1 && !s.relations.contains(kUnrelated))
    s.relations.add({kUnrelated, Origin::supplementary, true});
  validate(s, ValidateMode::closed);
  s.matrix = build_relation_matrix(s, rules);
  validate(s, ValidateMode::full);
  return s;
}

FlattenResult flatten_schema(const DataSchema& schema, const FlattenSeparators& seps) {
  // Flattening runs on the pre-transformation structure, so predicates may
  // still be free text; only the structural invariants are needed here.
  validate(schema, ValidateMode::open_predicates);
  FlattenResult res;

  std::string text;
  auto append = [&text](const std::string& piece) {
    if (!text.empty()) text.push_back(' ');
    text += piece;
  };
  for (const Tuple& t : schema.tuples) {
    if (t.predicate == kPaired) {
      append(seps.key);
      append(schema.segments[t.head].text);
      append(seps.value);
      append(schema.segments[t.tail].text);
    } else {
      append(seps.head);
      append(schema.segments[t.head].text);
      append(seps.predicate);
      append(t.predicate);
      append(seps.tail);
      append(schema.segments[t.tail].text);
    }
  }
  res.source_text = text;
  if (schema.tuples.empty())
    res.warnings.push_back("flatten_schema: no tuples, source sequence is empty");

  std::vector<Segment> segments;
  if (!text.empty()) segments.push_back({text, 0, Role::source});
  const PresetRules& flat = relation_preset("flattened");
  int target_type = 1;  // "target" in the flattened type list
  for (int idx : schema.target_order)
    segments.push_back({schema.segments[idx].text, target_type, Role::target});
  res.schema = assemble_schema(flat.name, std::move(segments), {});
  return res;
}

DataSchema permute_segments(const DataSchema& schema, const std::vector<int>& new_to_old) {
  const int n = static_cast<int>(schema.segments.size());
  if (static_cast<int>(new_to_old.size()) != n)
    throw data_error("permute_segments: permutation size mismatch");
  std::vector<int> old_to_new(n, -1);
  for (int i = 0; i < n; ++i) {
    int old = new_to_old[i];
    if (old < 0 || old >= n || old_to_new[old] != -1)
      throw data_error("permute_segments: not a permutation");
    old_to_new[old] = i;
  }

  DataSchema out;
  out.preset = schema.preset;
  out.segment_types = schema.segment_types;
  out.relations = schema.relations;
  for (int i = 0; i < n; ++i) out.segments.push_back(schema.segments[new_to_old[i]]);
  for (const Tuple& t : schema.tuples)
    out.tuples.push_back({old_to_new[t.head], t.predicate, old_to_new[t.tail]});
  for (int idx : schema.target_order) out.target_order.push_back(old_to_new[idx]);
  if (!schema.matrix.empty()) {
    out.matrix = RelationMatrix::filled(n, 0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        out.matrix.set(i, j, schema.matrix.at(new_to_old[i], new_to_old[j]));
  }
  return out;
}

std::string schema_to_json_line(const DataSchema& schema) {
  nlohmann::json j;
  j["segments"] = nlohmann::json::array();
  for (const Segment& s : schema.segments) {
    j["segments"].push_back({{"text", s.text},
                             {"type", schema.type_name(s.type)},
                             {"role", s.role == Role::target ? "target" : "source"}});
  }
  j["tuples"] = nlohmann::json::array();
  for (const Tuple& t : schema.tuples)
    j["tuples"].push_back(nlohmann::json::array({t.head, t.predicate, t.tail}));
  j["preset"] = schema.preset;
  return j.dump();
}

DataSchema schema_from_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed schema record: ") + e.what());
  }
  if (!j.is_object()) throw data_error("schema record is not a JSON object");
  for (auto& [key, _] : j.items()) {
    if (key != "segments" && key != "tuples" && key != "preset")
      throw data_error("schema record has unknown field '" + key + "'");
  }
  if (!j.contains("preset") || !j.contains("segments"))
    throw data_error("schema record needs 'preset' and 'segments' fields");

  const std::string preset = j["preset"].get<std::string>();
  const PresetRules& rules = relation_preset(preset);

  std::vector<Segment> segments;
  for (const auto& js : j["segments"]) {
    for (auto& [key, _] : js.items()) {
      if (key != "text" && key != "type" && key != "role")
        throw data_error("segment record has unknown field '" + key + "'");
    }
    Segment seg;
    seg.text = js.at("text").get<std::string>();
    const std::string type = js.at("type").get<std::string>();
    auto it = std::find(rules.segment_types.begin(), rules.segment_types.end(), type);
    if (it == rules.segment_types.end())
      throw data_error("segment type '" + type + "' is not declared by preset '" + preset +
                       "'");
    seg.type = static_cast<int>(it - rules.segment_types.begin());
    const std::string role = js.at("role").get<std::string>();
    if (role != "source" && role != "target")
      throw data_error("segment role '" + role + "' must be 'source' or 'target'");
    seg.role = role == "target" ? Role::target : Role::source;
    segments.push_back(std::move(seg));
  }

  std::vector<Tuple> tuples;
  if (j.contains("tuples")) {
    for (const auto& jt : j["tuples"]) {
      if (!jt.is_array() || jt.size() != 3)
        throw data_error("tuple record must be [head, predicate, tail]");
      tuples.push_back({jt[0].get<int>(), jt[1].get<std::string>(), jt[2].get<int>()});
    }
  }
  return assemble_schema(preset, std::move(segments), std::move(tuples));
}

}  // namespace graft
