#pragma once

#include <utility>

#include "loopnet/config.hpp"
#include "loopnet/ops.hpp"

namespace loopnet {

inline constexpr double kLayerNormEps = 1e-5;

/// A trainable tensor with its checkpoint name and weight-decay membership.
template <typename F>
struct NamedTensor {
  std::string name;
  Tensor<F> tensor;
  bool decay = false;
};

template <typename F>
struct BlockParams {
  Tensor<F> ln1_gain, ln1_bias;
  Tensor<F> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<F> ln2_gain, ln2_bias;
  Tensor<F> w_fc, b_fc, w_proj, b_proj;

  void collect(const std::string& prefix,
               std::vector<NamedTensor<F>>& out) const {
    out.push_back({prefix + "ln1_gain", ln1_gain, false});
    out.push_back({prefix + "ln1_bias", ln1_bias, false});
    out.push_back({prefix + "attn_wq", wq, true});
    out.push_back({prefix + "attn_bq", bq, false});
    out.push_back({prefix + "attn_wk", wk, true});
    out.push_back({prefix + "attn_bk", bk, false});
    out.push_back({prefix + "attn_wv", wv, true});
    out.push_back({prefix + "attn_bv", bv, false});
    out.push_back({prefix + "attn_wo", wo, true});
    out.push_back({prefix + "attn_bo", bo, false});
    out.push_back({prefix + "ln2_gain", ln2_gain, false});
    out.push_back({prefix + "ln2_bias", ln2_bias, false});
    out.push_back({prefix + "mlp_w_fc", w_fc, true});
    out.push_back({prefix + "mlp_b_fc", b_fc, false});
    out.push_back({prefix + "mlp_w_proj", w_proj, true});
    out.push_back({prefix + "mlp_b_proj", b_proj, false});
  }
};

template <typename F>
struct EmbeddingParams {
  Tensor<F> token_embedding;     // [vocab, d]
  Tensor<F> position_embedding;  // [context_len, d]
  Tensor<F> final_norm_gain, final_norm_bias;
  // Output projection, stored [vocab, d]. When tie_embeddings is set this is
  // the token_embedding handle itself (same storage, shared gradient).
  Tensor<F> head;
  bool tied = true;

  void collect(std::vector<NamedTensor<F>>& out) const {
    out.push_back({"token_embedding", token_embedding, true});
    out.push_back({"position_embedding", position_embedding, true});
    out.push_back({"final_norm_gain", final_norm_gain, false});
    out.push_back({"final_norm_bias", final_norm_bias, false});
    if (!tied) {
      out.push_back({"output_head", head, true});
    }
  }
};

namespace detail {

template <typename F>
BlockParams<F> init_block(const ModelConfig& cfg, F resid_std, Rng& rng) {
  const int64_t d = cfg.d_model;
  const F std = F(0.02);
  BlockParams<F> p;
  p.ln1_gain = Tensor<F>::full({d}, F(1), true);
  p.ln1_bias = Tensor<F>::zeros({d}, true);
  p.wq = Tensor<F>::randn({d, d}, rng, std, true);
  p.bq = Tensor<F>::zeros({d}, true);
  p.wk = Tensor<F>::randn({d, d}, rng, std, true);
  p.bk = Tensor<F>::zeros({d}, true);
  p.wv = Tensor<F>::randn({d, d}, rng, std, true);
  p.bv = Tensor<F>::zeros({d}, true);
  p.wo = Tensor<F>::randn({d, d}, rng, resid_std, true);
  p.bo = Tensor<F>::zeros({d}, true);
  p.ln2_gain = Tensor<F>::full({d}, F(1), true);
  p.ln2_bias = Tensor<F>::zeros({d}, true);
  p.w_fc = Tensor<F>::randn({d, 4 * d}, rng, std, true);
  p.b_fc = Tensor<F>::zeros({4 * d}, true);
  p.w_proj = Tensor<F>::randn({4 * d, d}, rng, resid_std, true);
  p.b_proj = Tensor<F>::zeros({d}, true);
  return p;
}

}  // namespace detail

/// Draws all block and embedding parameters. Weights are N(0, 0.02);
/// residual-branch output projections shrink that by
/// 1/sqrt(2 * n_layers * outer_loops * inner_loops) — the count of residual
/// additions per forward pass, so looped depth keeps activation variance
/// bounded just like plain depth. Biases are zero, norm gains one.
template <typename F>
std::pair<EmbeddingParams<F>, std::vector<BlockParams<F>>> init_params(
    const ModelConfig& cfg, const LoopConfig& loop, uint64_t seed) {
  cfg.validate();
  loop.validate();
  Rng rng(seed);
  const int64_t d = cfg.d_model;
  const double n_residual_adds = 2.0 * static_cast<double>(cfg.n_layers) *
                                 static_cast<double>(loop.outer_loops) *
                                 static_cast<double>(loop.inner_loops);
  const F resid_std = static_cast<F>(0.02 / std::sqrt(n_residual_adds));

  EmbeddingParams<F> e;
  e.token_embedding =
      Tensor<F>::randn({cfg.vocab_size, d}, rng, F(0.02), true);
  e.position_embedding =
      Tensor<F>::randn({cfg.context_len, d}, rng, F(0.02), true);
  e.final_norm_gain = Tensor<F>::full({d}, F(1), true);
  e.final_norm_bias = Tensor<F>::zeros({d}, true);
  e.tied = cfg.tie_embeddings;

  std::vector<BlockParams<F>> blocks;
  blocks.reserve(static_cast<size_t>(cfg.n_layers));
  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    blocks.push_back(detail::init_block<F>(cfg, resid_std, rng));
  }
  if (cfg.tie_embeddings) {
    e.head = e.token_embedding;
  } else {
    e.head = Tensor<F>::randn({cfg.vocab_size, d}, rng, F(0.02), true);
  }
  return {std::move(e), std::move(blocks)};
}

/// Token + learned absolute position embeddings -> [B, T, d].
template <typename F>
Tensor<F> embed_tokens(Tape<F>* tape, const EmbeddingParams<F>& e,
                       const ITensor& tokens, int64_t context_len) {
  if (tokens.rank() != 2) {
    throw ShapeError("embed_tokens: tokens must be [B,T], got " +
                     shape_string(tokens.shape));
  }
  if (tokens.dim(1) > context_len) {
    throw ContractError("embed_tokens: sequence length " +
                        std::to_string(tokens.dim(1)) +
                        " exceeds context_len " + std::to_string(context_len));
  }
  Tensor<F> tok = embedding(tape, e.token_embedding, tokens);
  Tensor<F> pos = first_rows(tape, e.position_embedding, tokens.dim(1));
  return add(tape, tok, pos);
}

/// Multi-head scaled dot-product attention with a strict causal mask.
template <typename F>
Tensor<F> causal_self_attention(Tape<F>* tape, const Tensor<F>& x,
                                const BlockParams<F>& p,
                                const ModelConfig& cfg) {
  if (x.rank() != 3 || x.dim(2) != cfg.d_model) {
    throw ShapeError("causal_self_attention: expected [B,T," +
                     std::to_string(cfg.d_model) + "], got " +
                     shape_string(x.shape()));
  }
  const int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  if (t > cfg.context_len) {
    throw ContractError("causal_self_attention: sequence length " +
                        std::to_string(t) + " exceeds context_len " +
                        std::to_string(cfg.context_len));
  }
  const int64_t h = cfg.n_heads;
  const int64_t hd = d / h;

  Tensor<F> q = add(tape, matmul(tape, x, p.wq), p.bq);
  // The key bias shifts every score in a softmax row by the same per-query
  // constant, so the attention output is mathematically independent of it.
  // Leaving it out of the computation makes that invariance exact (and its
  // gradient an exact zero) instead of rounding noise; the parameter stays
  // for convention and accounting.
  Tensor<F> k = matmul(tape, x, p.wk);
  Tensor<F> v = add(tape, matmul(tape, x, p.wv), p.bv);
  Tensor<F> qh = swap_axes_1_2(tape, reshape(tape, q, {b, t, h, hd}));
  Tensor<F> kh = swap_axes_1_2(tape, reshape(tape, k, {b, t, h, hd}));
  Tensor<F> vh = swap_axes_1_2(tape, reshape(tape, v, {b, t, h, hd}));

  Tensor<F> scores = scale(tape, matmul_nt(tape, qh, kh),
                           F(1) / static_cast<F>(std::sqrt(double(hd))));
  Tensor<F> att = causal_softmax(tape, scores);
  Tensor<F> ctx =
      reshape(tape, swap_axes_1_2(tape, matmul(tape, att, vh)), {b, t, d});
  return add(tape, matmul(tape, ctx, p.wo), p.bo);
}

/// Pre-LN block: x + Attn(LN1(x)), then + MLP(LN2(.)). The two internal
/// residual additions are part of the block itself.
template <typename F>
Tensor<F> transformer_block(Tape<F>* tape, const Tensor<F>& x,
                            const BlockParams<F>& p, const ModelConfig& cfg) {
  const F eps = static_cast<F>(kLayerNormEps);
  Tensor<F> a = causal_self_attention(
      tape, layer_norm(tape, x, p.ln1_gain, p.ln1_bias, eps), p, cfg);
  Tensor<F> h = add(tape, x, a);

  Tensor<F> n = layer_norm(tape, h, p.ln2_gain, p.ln2_bias, eps);
  Tensor<F> m = add(tape, matmul(tape, n, p.w_fc), p.b_fc);
  m = gelu(tape, m);
  m = add(tape, matmul(tape, m, p.w_proj), p.b_proj);
  return add(tape, h, m);
}

/// Final norm followed by the (possibly tied) output projection to logits.
template <typename F>
Tensor<F> lm_head(Tape<F>* tape, const Tensor<F>& x,
                  const EmbeddingParams<F>& e) {
  Tensor<F> h = layer_norm(tape, x, e.final_norm_gain, e.final_norm_bias,
                           static_cast<F>(kLayerNormEps));
  return matmul_nt(tape, h, e.head);
}

}  // namespace loopnet
