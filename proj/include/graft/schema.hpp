#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace graft {

enum class Role { source, target };
enum class Origin { predicate, supplementary };

/// One text snippet attached to a graph node (or predicate-node).
struct Segment {
  std::string text;
  int type = 0;  // index into DataSchema::segment_types
  Role role = Role::source;
};

struct RelationCategory {
  std::string name;
  Origin origin = Origin::supplementary;
  bool visible = true;  // false: keys under this relation are hidden from the query
};

/// Closed, ordered set of relation categories; names are unique.
class RelationSet {
 public:
  int add(RelationCategory cat);
  int index_of(std::string_view name) const;  // -1 when absent
  int require(std::string_view name) const;   // throws data_error when absent
  bool contains(std::string_view name) const { return index_of(name) >= 0; }
  const RelationCategory& at(int idx) const;
  int size() const { return static_cast<int>(cats_.size()); }
  auto begin() const { return cats_.begin(); }
  auto end() const { return cats_.end(); }

 private:
  std::vector<RelationCategory> cats_;
  std::map<std::string, int, std::less<>> by_name_;
};

/// Directed edge between two segments. The predicate is a category name for
/// closed schemas, or free text before the Levi transformation.
struct Tuple {
  int head = 0;
  std::string predicate;
  int tail = 0;
};

/// Square table of relation-category indices, one per ordered segment pair.
struct RelationMatrix {
  int side = 0;
  std::vector<int> entries;  // row-major, side*side

  static RelationMatrix filled(int side, int value);
  int at(int i, int j) const { return entries[static_cast<std::size_t>(i) * side + j]; }
  void set(int i, int j, int v) { entries[static_cast<std::size_t>(i) * side + j] = v; }
  bool empty() const { return side == 0; }
};

/// The unit of ingestion, transformation, and batching: segments plus the
/// relational structure between them.
struct DataSchema {
  std::string preset;  // name of the preset the schema was built under
  std::vector<std::string> segment_types;
  std::vector<Segment> segments;
  RelationSet relations;
  std::vector<Tuple> tuples;
  RelationMatrix matrix;
  std::vector<int> target_order;

  int type_id(std::string_view name) const;  // -1 when absent
  const std::string& type_name(int id) const { return segment_types[id]; }
  int num_targets() const { return static_cast<int>(target_order.size()); }
};

enum class ValidateMode {
  open_predicates,  // pre-transformation: tuples may carry free-text predicates
  closed,           // tuples must carry declared categories; matrix optional
  full,             // closed + matrix invariants
};

// Throws data_error on the first violated invariant.
void validate(const DataSchema& schema, ValidateMode mode = ValidateMode::full);

/// A preset couples the closed category set, the declared segment types and
/// the deterministic fallback rule that covers every ordered pair no tuple
/// covers. Fallbacks return a category name, or nullptr for "uncovered".
struct PresetRules {
  std::string name;
  RelationSet relations;
  std::vector<std::string> segment_types;
  bool mirror_tuples = true;  // reuse a tuple's category for the reverse direction
  bool requires_levi = false;
  std::function<const char*(const DataSchema&, int i, int j)> fallback;
};

// Known presets: "key-value", "agenda", "webnlg" (the dataset presets) plus
// "flattened" (linearized baseline) and "direction" (synthetic diagnostic).
// Throws config_error for anything else.
const PresetRules& relation_preset(const std::string& name);

// Names shared across presets.
inline constexpr const char* kSameSegment = "same-segment";
inline constexpr const char* kUnrelated = "unrelated";
inline constexpr const char* kPaired = "paired";
inline constexpr const char* kSourceToTarget = "source-to-target";
inline constexpr const char* kHeadToPredicate = "head-to-predicate";
inline constexpr const char* kPredicateToTail = "predicate-to-tail";

// Rewrites every free-text-predicate tuple (h, p, t) into two tuples through
// a new predicate-node carrying p's text. The result is a closed "webnlg"
// schema (matrix not yet built).
DataSchema levi_transform(const DataSchema& schema);

// Fills the matrix: tuple category first, mirrored tuple category second
// (when the preset mirrors), preset fallback last. Total coverage or a
// config_error naming the first uncovered pair.
RelationMatrix build_relation_matrix(const DataSchema& schema, const PresetRules& rules);

// Assembles a schema under a preset: declares the category set (plus
// "unrelated" when the example has multiple targets), derives target_order,
// validates and builds the matrix.
DataSchema assemble_schema(const std::string& preset, std::vector<Segment> segments,
                           std::vector<Tuple> tuples);

struct FlattenSeparators {
  std::string head = "⟨H⟩";
  std::string predicate = "⟨P⟩";
  std::string tail = "⟨T⟩";
  std::string key = "⟨K⟩";
  std::string value = "⟨V⟩";
};

struct FlattenResult {
  DataSchema schema;            // one source segment + the original targets
  std::string source_text;     // the linearized sequence (may be empty)
  std::vector<std::string> warnings;
};

// Linearizes the structure: tuples in input order, pairing tuples as
// SEP_K key SEP_V value, the rest as SEP_H head SEP_P predicate SEP_T tail.
FlattenResult flatten_schema(const DataSchema& schema, const FlattenSeparators& seps = {});

// Reorders segments (new index i holds old segment new_to_old[i]), remapping
// tuples, matrix rows/columns and target_order along. Used to check that the
// model is invariant to the segment concatenation order.
DataSchema permute_segments(const DataSchema& schema, const std::vector<int>& new_to_old);

// Canonical JSONL record:
// {"segments":[{"text":...,"type":...,"role":...}],"tuples":[[h,"p",t]],"preset":...}
std::string schema_to_json_line(const DataSchema& schema);
DataSchema schema_from_json_line(const std::string& line);

}  // namespace graft
