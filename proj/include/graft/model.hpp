#pragma once

#include <string>
#include <vector>

#include "graft/attention.hpp"
#include "graft/errors.hpp"
#include "graft/rng.hpp"
#include "graft/schema.hpp"
#include "graft/tensor.hpp"
#include "graft/tokenizer.hpp"

namespace graft {

struct ModelConfig {
  int d_model = 128;
  int heads = 4;
  int layers = 4;
  int ffn_mult = 4;
  int clip = 128;
  double dropout = 0.0;
  int n_max = 512;
  // data-derived sizes, filled before parameter init
  int vocab_size = 0;
  int num_types = 0;
  int num_relations = 0;

  int head_dim() const { return d_model / heads; }
  int ffn_dim() const { return d_model * ffn_mult; }

  void check() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
      throw config_error("model: d_model must be a positive multiple of heads");
    if (layers <= 0 || ffn_mult <= 0 || clip < 0 || n_max <= 0)
      throw config_error("model: layers/ffn_mult/clip/n_max out of range");
    if (dropout < 0.0 || dropout >= 1.0) throw config_error("model: dropout must be in [0,1)");
    if (vocab_size < Vocab::kNumSpecials)
      throw config_error("model: vocab_size smaller than the special-token set");
    if (num_types <= 0 || num_relations <= 0)
      throw config_error("model: num_types and num_relations must be positive");
  }
};

template <typename T>
struct LayerParams {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> wq, wk, wv, wo;
  AttentionTables<T> tables;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> w1, b1, w2, b2;
};

/// All learnable arrays. The output projection is tied to token_embed.
/// visit() enumerates every array in a fixed order shared by the optimizer
/// state and the checkpoint format.
template <typename T>
struct Parameters {
  ModelConfig config;
  Tensor<T> token_embed;  // (vocab, d_model)
  Tensor<T> type_embed;   // (num_types, d_model)
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_ln_gamma, final_ln_beta;

  template <typename F>
  void visit(F&& f) {
    f("token_embed", token_embed);
    f("type_embed", type_embed);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerParams<T>& lp = layers[l];
      f(p + "ln1.gamma", lp.ln1_gamma);
      f(p + "ln1.beta", lp.ln1_beta);
      f(p + "wq", lp.wq);
      f(p + "wk", lp.wk);
      f(p + "wv", lp.wv);
      f(p + "wo", lp.wo);
      f(p + "relation_embed", lp.tables.relation_embed);
      f(p + "position_embed", lp.tables.position_embed);
      f(p + "bias_content", lp.tables.bias_content);
      f(p + "bias_segment", lp.tables.bias_segment);
      f(p + "bias_position", lp.tables.bias_position);
      f(p + "ln2.gamma", lp.ln2_gamma);
      f(p + "ln2.beta", lp.ln2_beta);
      f(p + "ffn.w1", lp.w1);
      f(p + "ffn.b1", lp.b1);
      f(p + "ffn.w2", lp.w2);
      f(p + "ffn.b2", lp.b2);
    }
    f("final_ln.gamma", final_ln_gamma);
    f("final_ln.beta", final_ln_beta);
  }

  void zero_grad() {
    visit([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }
};

// normal(0, 0.02) weights and tables, unit layer-norm gains, zero biases.
template <typename T>
Parameters<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.check();
  Rng rng = Rng::from(seed, 0x1417);
  const T std02 = static_cast<T>(0.02);
  const std::int64_t d = config.d_model;
  auto weight = [&](Shape shape) { return Tensor<T>::randn(std::move(shape), rng, std02, true); };
  auto zeros = [&](Shape shape) { return Tensor<T>::zeros(std::move(shape), true); };
  auto ones = [&](Shape shape) { return Tensor<T>::filled(std::move(shape), T(1), true); };

  Parameters<T> p;
  p.config = config;
  p.token_embed = weight({config.vocab_size, d});
  p.type_embed = weight({config.num_types, d});
  for (int l = 0; l < config.layers; ++l) {
    LayerParams<T> lp;
    lp.ln1_gamma = ones({d});
    lp.ln1_beta = zeros({d});
    lp.wq = weight({d, d});
    lp.wk = weight({d, d});
    lp.wv = weight({d, d});
    lp.wo = weight({d, d});
    lp.tables.relation_embed = weight({config.num_relations, d});
    lp.tables.position_embed = weight({2 * config.clip + 1, d});
    lp.tables.bias_content = zeros({d});
    lp.tables.bias_segment = zeros({d});
    lp.tables.bias_position = zeros({d});
    lp.ln2_gamma = ones({d});
    lp.ln2_beta = zeros({d});
    lp.w1 = weight({d, config.ffn_dim()});
    lp.b1 = zeros({config.ffn_dim()});
    lp.w2 = weight({config.ffn_dim(), d});
    lp.b2 = zeros({d});
    p.layers.push_back(std::move(lp));
  }
  p.final_ln_gamma = ones({d});
  p.final_ln_beta = zeros({d});
  return p;
}

/// A schema bound to a vocabulary: the concatenated token layout, per-token
/// ids, two-stream masks and the relation/position lookup tables.
struct EncodedExample {
  std::string id;
  TokenLayout layout;
  std::vector<int> content_ids;  // gold content tokens (targets end with EOS)
  std::vector<int> gold_ids;     // per query position: the token it predicts
  VisibilityMask mask;
  PairMaps maps;
};

inline EncodedExample encode_example(const DataSchema& schema, const Vocab& vocab,
                                     const ModelConfig& config, bool collapse_relations = false,
                                     std::string id = "") {
  validate(schema, ValidateMode::full);
  const int n_segments = static_cast<int>(schema.segments.size());
  std::vector<std::vector<int>> tokens(n_segments);
  std::vector<int> counts(n_segments);
  for (int i = 0; i < n_segments; ++i) {
    tokens[i] = vocab.encode(schema.segments[i].text);
    if (schema.segments[i].role == Role::target)
      tokens[i].push_back(Vocab::kEos);  // per-segment EOS terminates each target
    if (tokens[i].empty())
      throw data_error("segment " + std::to_string(i) + " encodes to no tokens");
    counts[i] = static_cast<int>(tokens[i].size());
  }

  EncodedExample ex;
  ex.id = std::move(id);
  ex.layout = build_token_layout(schema, counts);
  if (ex.layout.n_content > config.n_max)
    throw sizing_error("example length " + std::to_string(ex.layout.n_content) +
                       " exceeds the n_max budget of " + std::to_string(config.n_max));
  for (int i = 0; i < ex.layout.n_content; ++i) {
    const TokenPosition& pos = ex.layout.positions[i];
    ex.content_ids.push_back(tokens[pos.segment][pos.pos]);
  }
  for (int q = 0; q < ex.layout.n_query; ++q) {
    const TokenPosition& pos = ex.layout.positions[ex.layout.n_content + q];
    ex.gold_ids.push_back(tokens[pos.segment][pos.pos]);
  }
  ex.mask = build_visibility_mask(ex.layout, schema);
  ex.maps = build_pair_maps(ex.layout, schema.matrix, config.clip, collapse_relations);
  return ex;
}

template <typename T>
struct StreamPair {
  Tensor<T> content;  // (n_content, d_model)
  Tensor<T> query;    // (n_query, d_model)
};

// rep(i) = token_embed[token at i] + type_embed[type at i]; query twins use
// the QUERY token embedding with their segment's type.
template <typename T>
StreamPair<T> embed_inputs(const Parameters<T>& params, const EncodedExample& ex) {
  std::vector<int> content_types, query_types;
  for (int i = 0; i < ex.layout.n_content; ++i)
    content_types.push_back(ex.layout.positions[i].type);
  std::vector<int> query_ids(ex.layout.n_query, Vocab::kQuery);
  for (int q = 0; q < ex.layout.n_query; ++q)
    query_types.push_back(ex.layout.positions[ex.layout.n_content + q].type);

  Tensor<T> content = add(embedding_gather(params.token_embed, ex.content_ids),
                          embedding_gather(params.type_embed, content_types));
  Tensor<T> query;
  if (ex.layout.n_query > 0) {
    query = add(embedding_gather(params.token_embed, query_ids),
                embedding_gather(params.type_embed, query_types));
  } else {
    query = Tensor<T>::zeros({0, params.config.d_model});
  }
  return {content, query};
}

template <typename T>
struct ForwardTrace {
  // stream states entering layer 0, after layer 0, ..., after the last layer
  std::vector<Tensor<T>> content_states;
  std::vector<Tensor<T>> query_states;
  Tensor<T> logits;  // (n_query, vocab)
};

// Contiguous slice of a rank-1 tensor (per-head bias views).
template <typename T>
Tensor<T> slice_rank1(const Tensor<T>& v, std::int64_t start, std::int64_t len) {
  if (v.rank() != 1 || start < 0 || start + len > v.dim(0))
    throw data_error("slice_rank1: bad range");
  std::vector<T> out(v.data().begin() + start, v.data().begin() + start + len);
  auto vn = v.node();
  return graft::detail::make_result<T>(
      {len}, std::move(out), {v}, [vn, start, len](graft::detail::TensorNode<T>& self) {
        auto& g = vn->ensure_grad();
        for (std::int64_t i = 0; i < len; ++i) g[start + i] += self.grad[i];
      });
}

namespace detail {

// Multi-head attention rows for one stream: queries q_in (rows of the
// layout), keys/values from the content stream.
template <typename T>
Tensor<T> attend(const Parameters<T>& params, const LayerParams<T>& lp, const Tensor<T>& q_in,
                 const Tensor<T>& keys_in, const EncodedExample& ex, int row_begin,
                 int row_count) {
  const ModelConfig& cfg = params.config;
  const int hd = cfg.head_dim();
  Tensor<T> q_proj = matmul(q_in, lp.wq);
  Tensor<T> k_proj = matmul(keys_in, lp.wk);
  Tensor<T> v_proj = matmul(keys_in, lp.wv);

  std::vector<int> rel = ex.maps.row_block(ex.maps.relation, row_begin, row_count);
  std::vector<int> tau = ex.maps.row_block(ex.maps.tau, row_begin, row_count);
  std::vector<std::uint8_t> visible = ex.mask.row_block(row_begin, row_count);

  std::vector<Tensor<T>> head_outputs;
  for (int h = 0; h < cfg.heads; ++h) {
    Tensor<T> q_h = slice_cols(q_proj, h * hd, hd);
    Tensor<T> k_h = slice_cols(k_proj, h * hd, hd);
    Tensor<T> v_h = slice_cols(v_proj, h * hd, hd);
    AttentionScores<T> scores = attention_scores(
        q_h, k_h, rel, tau, slice_cols(lp.tables.relation_embed, h * hd, hd),
        slice_cols(lp.tables.position_embed, h * hd, hd),
        slice_rank1(lp.tables.bias_content, h * hd, hd),
        slice_rank1(lp.tables.bias_segment, h * hd, hd),
        slice_rank1(lp.tables.bias_position, h * hd, hd));
    Tensor<T> probs = softmax_masked(scores.total, visible);
    head_outputs.push_back(matmul(probs, v_h));
  }
  return matmul(concat_cols(head_outputs), lp.wo);
}

}  // namespace detail

// Two-stream forward pass. The content stream carries gold context; the
// query stream predicts each target token without seeing its own content.
template <typename T>
ForwardTrace<T> forward(const Parameters<T>& params, const EncodedExample& ex, bool train,
                        Rng* dropout_rng = nullptr) {
  const ModelConfig& cfg = params.config;
  const double rate = train ? cfg.dropout : 0.0;
  Rng fallback_rng(0);
  Rng& rng = dropout_rng ? *dropout_rng : fallback_rng;
  if (rate > 0.0 && dropout_rng == nullptr)
    throw config_error("forward: dropout requires an RNG in train mode");

  StreamPair<T> streams = embed_inputs(params, ex);
  Tensor<T> h = dropout(streams.content, rate, train, rng);
  Tensor<T> g = ex.layout.n_query > 0 ? dropout(streams.query, rate, train, rng)
                                      : streams.query;

  ForwardTrace<T> trace;
  trace.content_states.push_back(h);
  trace.query_states.push_back(g);

  for (int l = 0; l < cfg.layers; ++l) {
    const LayerParams<T>& lp = params.layers[l];
    Tensor<T> h_norm = layer_norm(h, lp.ln1_gamma, lp.ln1_beta);
    Tensor<T> attn_c = detail::attend(params, lp, h_norm, h_norm, ex, 0, ex.layout.n_content);
    h = add(h, dropout(attn_c, rate, train, rng));
    if (ex.layout.n_query > 0) {
      Tensor<T> g_norm = layer_norm(g, lp.ln1_gamma, lp.ln1_beta);
      Tensor<T> attn_q = detail::attend(params, lp, g_norm, h_norm, ex, ex.layout.n_content,
                                        ex.layout.n_query);
      g = add(g, dropout(attn_q, rate, train, rng));
    }

    auto ffn = [&](const Tensor<T>& x) {
      Tensor<T> norm = layer_norm(x, lp.ln2_gamma, lp.ln2_beta);
      Tensor<T> hidden = gelu(add(matmul(norm, lp.w1), lp.b1));
      return add(x, dropout(add(matmul(hidden, lp.w2), lp.b2), rate, train, rng));
    };
    h = ffn(h);
    if (ex.layout.n_query > 0) g = ffn(g);

    trace.content_states.push_back(h);
    trace.query_states.push_back(g);
  }

  if (ex.layout.n_query > 0) {
    Tensor<T> g_final = layer_norm(g, params.final_ln_gamma, params.final_ln_beta);
    trace.logits = matmul(g_final, transpose(params.token_embed));
  } else {
    trace.logits = Tensor<T>::zeros({0, cfg.vocab_size});
  }
  return trace;
}

// Mean cross-entropy per target token.
template <typename T>
Tensor<T> target_loss(const Tensor<T>& logits, std::span<const int> gold_ids) {
  if (logits.dim(0) != static_cast<std::int64_t>(gold_ids.size()))
    throw data_error("target_loss: " + std::to_string(gold_ids.size()) + " gold ids for " +
                     std::to_string(logits.dim(0)) + " query rows");
  return cross_entropy(logits, gold_ids);
}

}  // namespace graft
