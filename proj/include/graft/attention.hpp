#pragma once

#include <cstdint>
#include <vector>

#include "graft/errors.hpp"
#include "graft/schema.hpp"
#include "graft/tensor.hpp"

namespace graft {

enum class Stream { content, query };

/// Per-position bookkeeping: which segment and offset a token sits at, its
/// segment type, its stream, and (for target tokens) the generation order.
struct TokenPosition {
  int segment = 0;   // sigma
  int pos = 0;       // t, 0-based within the segment
  int type = 0;      // segment type b
  Stream stream = Stream::content;
  int order = -1;    // global generation order over target tokens; -1 for sources
};

/// Content positions first (concatenation order), query positions appended.
/// Every target content token has a query twin with identical (segment, pos).
struct TokenLayout {
  std::vector<TokenPosition> positions;
  std::vector<int> segment_len;  // content tokens per segment
  int n_content = 0;
  int n_query = 0;

  int total() const { return n_content + n_query; }
};

// Lays out the concatenated example: content tokens in segment-list order,
// then one query twin per target content token. token_counts gives the
// content length of each segment (targets usually include their EOS slot).
TokenLayout build_token_layout(const DataSchema& schema, const std::vector<int>& token_counts);

// Relative position of the query token i w.r.t. the key token j: positional
// difference inside one segment, otherwise as if the key's segment were
// concatenated in front of the query's.
inline int relative_position(int t_i, int seg_i, int t_j, int seg_j, int len_j) {
  if (t_j < 0 || t_j >= len_j) throw data_error("relative_position: t_j outside its segment");
  return seg_i == seg_j ? t_i - t_j : t_i - t_j + len_j;
}

/// Boolean visibility over (all positions) x (content positions). Query rows
/// cover both streams; the query stream never serves keys.
struct VisibilityMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> visible;

  bool at(int q, int k) const { return visible[static_cast<std::size_t>(q) * cols + k] != 0; }
  std::vector<std::uint8_t> row_block(int row_begin, int row_count) const {
    auto first = visible.begin() + static_cast<std::ptrdiff_t>(row_begin) * cols;
    return {first, first + static_cast<std::ptrdiff_t>(row_count) * cols};
  }
};

// One attention link, before stream causality: the relation category between
// the two segments must be visible, and source queries never see target keys
// (the hard mask that keeps generation from leaking into the encoder).
bool pair_visible(const TokenPosition& q, const TokenPosition& k, const DataSchema& schema);

// Full two-stream mask:
//  - source rows: source keys per category visibility, target keys hidden;
//  - target content rows at order o: sources per category, target content
//    tokens with order <= o;
//  - query rows at order o: sources per category, target content tokens with
//    order < o (never their own content token).
VisibilityMask build_visibility_mask(const TokenLayout& layout, const DataSchema& schema);

/// Integer lookup tables feeding the segment-wise and position-wise scores:
/// relation(q, k) = G(sigma_q, sigma_k), tau(q, k) clamped to [-clip, clip]
/// and shifted by clip. Shapes match the visibility mask.
struct PairMaps {
  int rows = 0;
  int cols = 0;
  std::vector<int> relation;
  std::vector<int> tau;

  std::vector<int> row_block(const std::vector<int>& table, int row_begin, int row_count) const {
    auto first = table.begin() + static_cast<std::ptrdiff_t>(row_begin) * cols;
    return {first, first + static_cast<std::ptrdiff_t>(row_count) * cols};
  }
};

PairMaps build_pair_maps(const TokenLayout& layout, const RelationMatrix& matrix, int clip,
                         bool collapse_relations = false);

/// Learnable per-layer attention tables, stored per head side by side:
/// relation embeddings H, relative-position embeddings R and the three
/// score biases, each of width heads * head_dim.
template <typename T>
struct AttentionTables {
  Tensor<T> relation_embed;  // (num_relations, heads * head_dim)
  Tensor<T> position_embed;  // (2 * clip + 1, heads * head_dim)
  Tensor<T> bias_content;    // (heads * head_dim)
  Tensor<T> bias_segment;
  Tensor<T> bias_position;
};

template <typename T>
struct AttentionScores {
  Tensor<T> content;
  Tensor<T> segment;
  Tensor<T> position;
  Tensor<T> total;  // (content + segment + position) / sqrt(head_dim)
};

// The three-component score for one head. h_q: (nq, head_dim) query-side
// hidden states, h_k: (nk, head_dim) key-side states; rel/tau: flattened
// (nq, nk) lookup tables; the table tensors are the per-head column slices.
template <typename T>
AttentionScores<T> attention_scores(const Tensor<T>& h_q, const Tensor<T>& h_k,
                                    const std::vector<int>& rel, const std::vector<int>& tau,
                                    const Tensor<T>& relation_embed,
                                    const Tensor<T>& position_embed,
                                    const Tensor<T>& bias_content,
                                    const Tensor<T>& bias_segment,
                                    const Tensor<T>& bias_position) {
  const std::int64_t nk = h_k.dim(0);
  const std::int64_t head_dim = h_q.dim(1);

  // a_content(i,j) = (h_q_i + phi_c)^T h_k_j
  Tensor<T> k_t = transpose(h_k);
  Tensor<T> a_content = matmul(add(h_q, bias_content), k_t);

  // a_segment(i,j) = (h_q_i + phi_b)^T H[G(sigma_i, sigma_j)]
  Tensor<T> rel_scores = matmul(add(h_q, bias_segment), transpose(relation_embed));
  Tensor<T> a_segment = gather_pairs(rel_scores, rel, nk);

  // a_pos(i,j) = (h_q_i + phi_p)^T R[tau(i,j)]
  Tensor<T> pos_scores = matmul(add(h_q, bias_position), transpose(position_embed));
  Tensor<T> a_position = gather_pairs(pos_scores, tau, nk);

  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(head_dim));
  Tensor<T> total = scale(add(add(a_content, a_segment), a_position), inv_sqrt_d);
  return {a_content, a_segment, a_position, total};
}

}  // namespace graft
