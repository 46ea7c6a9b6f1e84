#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "graft/errors.hpp"
#include "graft/model.hpp"
#include "graft/schema.hpp"
#include "graft/tensor.hpp"
#include "graft/tokenizer.hpp"

namespace graft {

enum class DecodeStrategy { greedy, beam };

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::greedy;
  int beam_width = 1;
  double alpha = 0.6;   // length-normalization exponent
  int max_tokens = 64;  // generated text tokens per target segment

  void check() const {
    if (beam_width < 1) throw config_error("decode: beam_width must be >= 1");
    if (max_tokens < 1) throw config_error("decode: max_tokens must be >= 1");
    if (alpha < 0) throw config_error("decode: alpha must be non-negative");
  }
};

// Copy of a schema with target texts removed, the shape generate() expects.
inline DataSchema strip_targets(const DataSchema& schema) {
  DataSchema s = schema;
  for (auto& seg : s.segments)
    if (seg.role == Role::target) seg.text.clear();
  return s;
}

namespace detail {

struct RowMaps {
  std::vector<int> rel, tau;
  std::vector<std::uint8_t> vis;
};

// Lookup rows for a set of query positions against a set of key positions,
// with the same category/causality rules as build_visibility_mask. seg_lens
// holds each key segment's final content length (needed by tau).
inline RowMaps maps_for(const std::vector<TokenPosition>& queries,
                        const std::vector<TokenPosition>& keys, const DataSchema& schema,
                        const std::vector<int>& seg_lens, int clip, bool collapse_relations) {
  RowMaps maps;
  const std::size_t total = queries.size() * keys.size();
  maps.rel.resize(total);
  maps.tau.resize(total);
  maps.vis.resize(total);
  const int collapsed = schema.matrix.at(0, 0);
  std::size_t at = 0;
  for (const TokenPosition& q : queries) {
    for (const TokenPosition& k : keys) {
      maps.rel[at] = collapse_relations ? collapsed : schema.matrix.at(q.segment, k.segment);
      int tau = relative_position(q.pos, q.segment, k.pos, k.segment, seg_lens[k.segment]);
      maps.tau[at] = std::clamp(tau, -clip, clip) + clip;
      bool vis = pair_visible(q, k, schema);
      if (vis && q.order >= 0 && k.order >= 0)
        vis = q.stream == Stream::content ? k.order <= q.order : k.order < q.order;
      maps.vis[at] = vis ? 1 : 0;
      ++at;
    }
  }
  return maps;
}

}  // namespace detail

/// Token-by-token evaluator: source hidden states and per-layer key/value
/// rows are computed once and reused; each appended target token adds one row
/// per layer. Copyable, so beam hypotheses can fork the full state.
template <typename T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Parameters<T>& params, const DataSchema& schema, const Vocab& vocab,
                     bool collapse_relations = false)
      : params_(&params), schema_(&schema), collapse_(collapse_relations) {
    NoGradGuard no_grad;
    const ModelConfig& cfg = params.config;
    seg_lens_.assign(schema.segments.size(), 0);

    // Content rows for all source segments, processed as one bidirectional
    // block (sources may attend later sources, so rows cannot be appended
    // one at a time).
    std::vector<int> source_ids;
    for (int seg = 0; seg < static_cast<int>(schema.segments.size()); ++seg) {
      if (schema.segments[seg].role == Role::target) continue;
      auto ids = vocab.encode(schema.segments[seg].text);
      if (ids.empty()) throw data_error("source segment " + std::to_string(seg) + " is empty");
      seg_lens_[seg] = static_cast<int>(ids.size());
      for (int t = 0; t < static_cast<int>(ids.size()); ++t) {
        committed_.push_back({seg, t, schema.segments[seg].type, Stream::content, -1});
        source_ids.push_back(ids[t]);
      }
    }
    k_cache_.resize(cfg.layers);
    v_cache_.resize(cfg.layers);

    if (!committed_.empty()) {
      std::vector<int> types;
      for (const auto& p : committed_) types.push_back(p.type);
      Tensor<T> x = add(embedding_gather(params.token_embed, source_ids),
                        embedding_gather(params.type_embed, types));
      detail::RowMaps maps =
          detail::maps_for(committed_, committed_, schema, seg_lens_, cfg.clip, collapse_);
      for (int l = 0; l < cfg.layers; ++l) {
        const LayerParams<T>& lp = params.layers[l];
        Tensor<T> a = layer_norm(x, lp.ln1_gamma, lp.ln1_beta);
        k_cache_[l] = matmul(a, lp.wk);
        v_cache_[l] = matmul(a, lp.wv);
        Tensor<T> attn = multi_head(lp, matmul(a, lp.wq), l, maps);
        x = add(x, matmul(attn, lp.wo));
        Tensor<T> norm = layer_norm(x, lp.ln2_gamma, lp.ln2_beta);
        x = add(x, add(matmul(gelu(add(matmul(norm, lp.w1), lp.b1)), lp.w2), lp.b2));
      }
    } else {
      for (int l = 0; l < cfg.layers; ++l) {
        k_cache_[l] = Tensor<T>::zeros({0, cfg.d_model});
        v_cache_[l] = Tensor<T>::zeros({0, cfg.d_model});
      }
    }
  }

  // Opens a target segment for generation; its final length must be declared
  // when known (closing the segment fixes it for later tau computations).
  void begin_segment(int segment) {
    if (schema_->segments[segment].role != Role::target)
      throw data_error("begin_segment: segment " + std::to_string(segment) + " is not a target");
    active_segment_ = segment;
  }

  int active_segment() const { return active_segment_; }
  int active_length() const { return seg_lens_[active_segment_]; }

  // Logits for the next slot of the active segment.
  std::vector<T> next_logits() {
    NoGradGuard no_grad;
    const ModelConfig& cfg = params_->config;
    TokenPosition slot{active_segment_, seg_lens_[active_segment_],
                       schema_->segments[active_segment_].type, Stream::query, next_order_};
    std::vector<int> query_id{Vocab::kQuery};
    std::vector<int> type_id{slot.type};
    Tensor<T> g = add(embedding_gather(params_->token_embed, query_id),
                      embedding_gather(params_->type_embed, type_id));
    g = run_row(g, slot, false);
    g = layer_norm(g, params_->final_ln_gamma, params_->final_ln_beta);
    Tensor<T> logits = matmul(g, transpose(params_->token_embed));
    return logits.data();
  }

  // Commits a content token (EOS included) to the active segment.
  void append_token(int id) {
    NoGradGuard no_grad;
    TokenPosition pos{active_segment_, seg_lens_[active_segment_],
                      schema_->segments[active_segment_].type, Stream::content, next_order_};
    std::vector<int> token_id{id};
    std::vector<int> type_id{pos.type};
    Tensor<T> x = add(embedding_gather(params_->token_embed, token_id),
                      embedding_gather(params_->type_embed, type_id));
    run_row(x, pos, true);
    committed_.push_back(pos);
    ++seg_lens_[active_segment_];
    ++next_order_;
  }

  // Per-layer key/value rows for the committed sequence; exposed so tests
  // can verify that prefilled source states are reusable across steps.
  const std::vector<Tensor<T>>& key_cache() const { return k_cache_; }
  const std::vector<Tensor<T>>& value_cache() const { return v_cache_; }

 private:
  Tensor<T> multi_head(const LayerParams<T>& lp, const Tensor<T>& q_proj, int layer,
                       const detail::RowMaps& maps) const {
    const ModelConfig& cfg = params_->config;
    const int hd = cfg.head_dim();
    std::vector<Tensor<T>> heads;
    for (int h = 0; h < cfg.heads; ++h) {
      AttentionScores<T> scores = attention_scores(
          slice_cols(q_proj, h * hd, hd), slice_cols(k_cache_[layer], h * hd, hd), maps.rel,
          maps.tau, slice_cols(lp.tables.relation_embed, h * hd, hd),
          slice_cols(lp.tables.position_embed, h * hd, hd),
          slice_rank1(lp.tables.bias_content, h * hd, hd),
          slice_rank1(lp.tables.bias_segment, h * hd, hd),
          slice_rank1(lp.tables.bias_position, h * hd, hd));
      Tensor<T> probs = softmax_masked(scores.total, maps.vis);
      heads.push_back(matmul(probs, slice_cols(v_cache_[layer], h * hd, hd)));
    }
    return concat_cols(heads);
  }

  // Pushes one row through the layer stack. Content rows add their key/value
  // projections to the caches before attending (they may see themselves).
  Tensor<T> run_row(Tensor<T> x, const TokenPosition& pos, bool append_kv) {
    const ModelConfig& cfg = params_->config;
    // tau against the active segment uses same-segment offsets only, so the
    // still-unknown final length of the open segment is never needed.
    std::vector<int> lens = seg_lens_;
    lens[pos.segment] = std::max(lens[pos.segment], pos.pos + 1);
    for (int l = 0; l < cfg.layers; ++l) {
      const LayerParams<T>& lp = params_->layers[l];
      Tensor<T> a = layer_norm(x, lp.ln1_gamma, lp.ln1_beta);
      if (append_kv) {
        k_cache_[l] = append_row(k_cache_[l], matmul(a, lp.wk));
        v_cache_[l] = append_row(v_cache_[l], matmul(a, lp.wv));
      }
      std::vector<TokenPosition> row_query{pos};
      std::vector<TokenPosition> keys = committed_;
      if (append_kv) keys.push_back(pos);
      detail::RowMaps maps =
          detail::maps_for(row_query, keys, *schema_, lens, cfg.clip, collapse_);
      Tensor<T> attn = multi_head(lp, matmul(a, lp.wq), l, maps);
      x = add(x, matmul(attn, lp.wo));
      Tensor<T> norm = layer_norm(x, lp.ln2_gamma, lp.ln2_beta);
      x = add(x, add(matmul(gelu(add(matmul(norm, lp.w1), lp.b1)), lp.w2), lp.b2));
    }
    return x;
  }

  static Tensor<T> append_row(const Tensor<T>& matrix, const Tensor<T>& row) {
    std::vector<T> data = matrix.data();
    data.insert(data.end(), row.data().begin(), row.data().end());
    return Tensor<T>::from_data({matrix.dim(0) + 1, matrix.dim(1)}, std::move(data));
  }

  const Parameters<T>* params_;
  const DataSchema* schema_;
  bool collapse_;
  int active_segment_ = -1;
  int next_order_ = 0;
  std::vector<TokenPosition> committed_;
  std::vector<int> seg_lens_;
  std::vector<Tensor<T>> k_cache_, v_cache_;
};

template <typename T>
struct GenerationResult {
  std::vector<std::string> segments;             // text per target segment
  std::vector<std::vector<int>> token_ids;       // text tokens, EOS excluded
  std::vector<std::vector<std::vector<T>>> step_logits;  // per segment, per scored slot
};

namespace detail {

template <typename T>
void suppress_non_content(std::vector<T>& logits) {
  // QUERY and PAD never appear as content during training.
  logits[Vocab::kQuery] = static_cast<T>(-1e30);
  logits[Vocab::kPad] = static_cast<T>(-1e30);
}

template <typename T>
std::vector<T> log_softmax_row(const std::vector<T>& logits) {
  T mx = logits[0];
  for (T v : logits) mx = std::max(mx, v);
  T denom = T(0);
  for (T v : logits) denom += std::exp(v - mx);
  const T lse = mx + std::log(denom);
  std::vector<T> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

template <typename T>
int argmax_lowest_id(const std::vector<T>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

template <typename T>
struct Hypothesis {
  IncrementalDecoder<T> decoder;
  std::vector<int> tokens;
  std::vector<std::vector<T>> logits_history;
  double logprob = 0;
  int scored_steps = 0;
};

}  // namespace detail

// Autoregressive generation over the target segments in target_order. Greedy
// picks the argmax each step (lowest id on ties); beam keeps beam_width
// hypotheses and returns the best normalized-score completion, ties broken by
// earlier completion then lexicographic token ids.
template <typename T>
GenerationResult<T> generate(const DataSchema& schema, const Parameters<T>& params,
                             const Vocab& vocab, const DecodeConfig& config,
                             bool collapse_relations = false) {
  config.check();
  validate(schema, ValidateMode::full);
  const ModelConfig& cfg = params.config;
  for (int idx : schema.target_order)
    if (!schema.segments[idx].text.empty())
      throw data_error("generate: target segment " + std::to_string(idx) + " is not empty");

  // Upfront budget: sources plus every target at its maximal extent.
  int source_len = 0;
  for (const auto& seg : schema.segments)
    if (seg.role == Role::source)
      source_len += static_cast<int>(vocab.encode(seg.text).size());
  const int maximal =
      source_len + static_cast<int>(schema.target_order.size()) * (config.max_tokens + 1);
  if (maximal > cfg.n_max)
    throw sizing_error("maximal generated length " + std::to_string(maximal) +
                       " exceeds the n_max budget of " + std::to_string(cfg.n_max));

  GenerationResult<T> result;
  IncrementalDecoder<T> decoder(params, schema, vocab, collapse_relations);

  for (int seg : schema.target_order) {
    std::vector<int> tokens;
    std::vector<std::vector<T>> history;

    if (config.strategy == DecodeStrategy::greedy) {
      decoder.begin_segment(seg);
      for (int step = 0; step <= config.max_tokens; ++step) {
        std::vector<T> raw = decoder.next_logits();
        history.push_back(raw);
        std::vector<T> logits = raw;
        detail::suppress_non_content(logits);
        const int id = detail::argmax_lowest_id(logits);
        if (id == Vocab::kEos || step == config.max_tokens) {
          decoder.append_token(Vocab::kEos);
          break;
        }
        tokens.push_back(id);
        decoder.append_token(id);
      }
    } else {
      using Hyp = detail::Hypothesis<T>;
      std::vector<Hyp> live;
      {
        Hyp root{decoder, {}, {}, 0.0, 0};
        root.decoder.begin_segment(seg);
        live.push_back(std::move(root));
      }
      std::vector<Hyp> finished;
      while (!live.empty() && static_cast<int>(finished.size()) < config.beam_width) {
        struct Candidate {
          double score;
          std::size_t parent;
          int token;
        };
        std::vector<Candidate> candidates;
        std::vector<std::vector<T>> parent_logits(live.size());
        for (std::size_t h = 0; h < live.size(); ++h) {
          std::vector<T> logits = live[h].decoder.next_logits();
          parent_logits[h] = logits;  // raw, for the incremental/full-pass check
          detail::suppress_non_content(logits);
          std::vector<T> logp = detail::log_softmax_row(logits);
          if (static_cast<int>(live[h].tokens.size()) >= config.max_tokens) {
            // budget reached: this slot can only close the segment
            candidates.push_back({live[h].logprob + static_cast<double>(logp[Vocab::kEos]), h,
                                  Vocab::kEos});
            continue;
          }
          std::vector<int> ids(logp.size());
          for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
          const std::size_t keep = std::min<std::size_t>(config.beam_width, ids.size());
          std::partial_sort(ids.begin(), ids.begin() + keep, ids.end(), [&](int a, int b) {
            if (logp[a] != logp[b]) return logp[a] > logp[b];
            return a < b;
          });
          for (std::size_t k = 0; k < keep; ++k)
            candidates.push_back(
                {live[h].logprob + static_cast<double>(logp[ids[k]]), h, ids[k]});
        }
        std::sort(candidates.begin(), candidates.end(),
                  [](const Candidate& a, const Candidate& b) {
                    if (a.score != b.score) return a.score > b.score;
                    if (a.parent != b.parent) return a.parent < b.parent;
                    return a.token < b.token;
                  });
        if (candidates.size() > static_cast<std::size_t>(config.beam_width))
          candidates.resize(config.beam_width);

        std::vector<Hyp> next_live;
        for (const Candidate& c : candidates) {
          Hyp hyp = live[c.parent];  // forks the cached decoder state
          hyp.logits_history.push_back(parent_logits[c.parent]);
          hyp.logprob = c.score;
          hyp.scored_steps += 1;
          if (c.token == Vocab::kEos) {
            hyp.decoder.append_token(Vocab::kEos);
            finished.push_back(std::move(hyp));
          } else {
            hyp.tokens.push_back(c.token);
            hyp.decoder.append_token(c.token);
            next_live.push_back(std::move(hyp));
          }
        }
        live = std::move(next_live);
      }
      // highest normalized score; ties: earlier completion, then token order
      auto normalized = [&](const Hyp& h) {
        return h.logprob / std::pow(static_cast<double>(std::max(h.scored_steps, 1)), config.alpha);
      };
      const Hyp* best = nullptr;
      for (const Hyp& h : finished) {
        if (!best || normalized(h) > normalized(*best) ||
            (normalized(h) == normalized(*best) &&
             (h.tokens.size() < best->tokens.size() ||
              (h.tokens.size() == best->tokens.size() && h.tokens < best->tokens))))
          best = &h;
      }
      if (!best) throw data_error("beam search finished no hypothesis");
      tokens = best->tokens;
      history = best->logits_history;
      decoder = best->decoder;  // commit the winning state for later segments
    }

    result.token_ids.push_back(tokens);
    result.segments.push_back(vocab.decode(tokens));
    result.step_logits.push_back(std::move(history));
  }
  return result;
}

// Fraction of examples whose every target segment is reproduced exactly
// (token-level comparison after vocabulary normalization).
template <typename T>
double exact_match_rate(const Parameters<T>& params, const Vocab& vocab,
                        const std::vector<DataSchema>& gold_schemas, const DecodeConfig& config,
                        bool collapse_relations = false) {
  if (gold_schemas.empty()) throw data_error("exact_match_rate: empty evaluation set");
  std::size_t hits = 0;
  for (const DataSchema& gold : gold_schemas) {
    GenerationResult<T> gen =
        generate(strip_targets(gold), params, vocab, config, collapse_relations);
    bool all = true;
    for (std::size_t k = 0; k < gold.target_order.size(); ++k) {
      auto expect = vocab.encode(gold.segments[gold.target_order[k]].text);
      all = all && gen.token_ids[k] == expect;
    }
    hits += all ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(gold_schemas.size());
}

}  // namespace graft
