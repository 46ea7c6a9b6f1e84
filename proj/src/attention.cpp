#include "graft/attention.hpp"

#include <algorithm>

namespace graft {

TokenLayout build_token_layout(const DataSchema& schema, const std::vector<int>& token_counts) {
  const int n_segments = static_cast<int>(schema.segments.size());
  if (static_cast<int>(token_counts.size()) != n_segments)
    throw data_error("build_token_layout: one token count per segment required");

  // Global generation order index of each target segment's first token.
  std::vector<int> order_base(n_segments, -1);
  int running = 0;
  for (int seg : schema.target_order) {
    order_base[seg] = running;
    running += token_counts[seg];
  }

  TokenLayout layout;
  layout.segment_len = token_counts;
  for (int seg = 0; seg < n_segments; ++seg) {
    const Segment& s = schema.segments[seg];
    for (int t = 0; t < token_counts[seg]; ++t) {
      int order = s.role == Role::target ? order_base[seg] + t : -1;
      layout.positions.push_back({seg, t, s.type, Stream::content, order});
    }
  }
  layout.n_content = static_cast<int>(layout.positions.size());
  for (int seg : schema.target_order) {
    for (int t = 0; t < token_counts[seg]; ++t) {
      layout.positions.push_back(
          {seg, t, schema.segments[seg].type, Stream::query, order_base[seg] + t});
    }
  }
  layout.n_query = static_cast<int>(layout.positions.size()) - layout.n_content;
  return layout;
}

bool pair_visible(const TokenPosition& q, const TokenPosition& k, const DataSchema& schema) {
  int category = schema.matrix.at(q.segment, k.segment);
  if (!schema.relations.at(category).visible) return false;
  // Hard rule, independent of the preset: target keys are never visible to
  // source queries.
  if (q.order < 0 && schema.segments[k.segment].role == Role::target) return false;
  return true;
}

VisibilityMask build_visibility_mask(const TokenLayout& layout, const DataSchema& schema) {
  VisibilityMask mask;
  mask.rows = layout.total();
  mask.cols = layout.n_content;
  mask.visible.assign(static_cast<std::size_t>(mask.rows) * mask.cols, 0);
  for (int r = 0; r < mask.rows; ++r) {
    const TokenPosition& q = layout.positions[r];
    for (int c = 0; c < mask.cols; ++c) {
      const TokenPosition& k = layout.positions[c];
      bool vis = pair_visible(q, k, schema);
      if (vis && q.order >= 0 && k.order >= 0) {
        // Two-stream causality over target content keys.
        vis = q.stream == Stream::content ? k.order <= q.order : k.order < q.order;
      }
      mask.visible[static_cast<std::size_t>(r) * mask.cols + c] = vis ? 1 : 0;
    }
  }
  return mask;
}

PairMaps build_pair_maps(const TokenLayout& layout, const RelationMatrix& matrix, int clip,
                         bool collapse_relations) {
  if (clip < 0) throw config_error("build_pair_maps: clip must be non-negative");
  PairMaps maps;
  maps.rows = layout.total();
  maps.cols = layout.n_content;
  maps.relation.resize(static_cast<std::size_t>(maps.rows) * maps.cols);
  maps.tau.resize(maps.relation.size());
  const int collapsed = matrix.side > 0 ? matrix.at(0, 0) : 0;  // the same-segment row
  for (int r = 0; r < maps.rows; ++r) {
    const TokenPosition& q = layout.positions[r];
    for (int c = 0; c < maps.cols; ++c) {
      const TokenPosition& k = layout.positions[c];
      const std::size_t at = static_cast<std::size_t>(r) * maps.cols + c;
      maps.relation[at] = collapse_relations ? collapsed : matrix.at(q.segment, k.segment);
      int tau = relative_position(q.pos, q.segment, k.pos, k.segment,
                                  layout.segment_len[k.segment]);
      maps.tau[at] = std::clamp(tau, -clip, clip) + clip;
    }
  }
  return maps;
}

}  // namespace graft
