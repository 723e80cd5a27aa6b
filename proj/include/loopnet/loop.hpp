#pragma once

#include "loopnet/model.hpp"

namespace loopnet {

/// The learned per-iteration gate vectors. The skip term's coefficient
/// (all ones) is implicit: it is never stored and never trainable.
template <typename F>
struct GateBank {
  // outer_gates[n-1] is the d-vector gating stack iteration n.
  std::vector<Tensor<F>> outer_gates;
  // inner_gates[l][m-1] gates inner iteration m of layer l.
  std::vector<std::vector<Tensor<F>>> inner_gates;

  void collect(std::vector<NamedTensor<F>>& out) const {
    for (size_t n = 0; n < outer_gates.size(); ++n) {
      out.push_back(
          {"gates.outer." + std::to_string(n + 1), outer_gates[n], false});
    }
    for (size_t l = 0; l < inner_gates.size(); ++l) {
      for (size_t m = 0; m < inner_gates[l].size(); ++m) {
        out.push_back({"gates.inner." + std::to_string(l) + "." +
                           std::to_string(m + 1),
                       inner_gates[l][m], false});
      }
    }
  }
};

template <typename F>
struct Model {
  ModelConfig cfg;
  LoopConfig loop;
  EmbeddingParams<F> emb;
  std::vector<BlockParams<F>> blocks;
  GateBank<F> gates;

  /// Every trainable tensor exactly once (the tied head is the token
  /// embedding and is not listed twice).
  std::vector<NamedTensor<F>> parameters() const {
    std::vector<NamedTensor<F>> out;
    emb.collect(out);
    for (size_t l = 0; l < blocks.size(); ++l) {
      blocks[l].collect("blocks." + std::to_string(l) + ".", out);
    }
    gates.collect(out);
    return out;
  }
};

/// Builds a model with freshly drawn weights. Gates initialize to ones so
/// the looped network starts as a plain residual-of-residuals stack.
template <typename F>
Model<F> init_model(const ModelConfig& cfg, const LoopConfig& loop,
                    uint64_t seed) {
  Model<F> m;
  m.cfg = cfg;
  m.loop = loop;
  auto [emb, blocks] = init_params<F>(cfg, loop, seed);
  m.emb = std::move(emb);
  m.blocks = std::move(blocks);
  if (loop.mode == LoopMode::loop) {
    m.gates.outer_gates.reserve(static_cast<size_t>(loop.outer_loops));
    for (int64_t n = 0; n < loop.outer_loops; ++n) {
      m.gates.outer_gates.push_back(
          Tensor<F>::full({cfg.d_model}, F(1), true));
    }
    m.gates.inner_gates.resize(static_cast<size_t>(cfg.n_layers));
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
      auto& row = m.gates.inner_gates[static_cast<size_t>(l)];
      row.reserve(static_cast<size_t>(loop.inner_loops));
      for (int64_t i = 0; i < loop.inner_loops; ++i) {
        row.push_back(Tensor<F>::full({cfg.d_model}, F(1), true));
      }
    }
  }
  return m;
}

/// One gated residual step: x_prev + gate ⊙ f_out, with the d-vector gate
/// broadcast over batch and sequence positions.
template <typename F>
Tensor<F> gated_update(Tape<F>* tape, const Tensor<F>& x_prev,
                       const Tensor<F>& f_out, const Tensor<F>& gate) {
  if (x_prev.shape() != f_out.shape()) {
    throw ShapeError("gated_update: state " + shape_string(x_prev.shape()) +
                     " and correction " + shape_string(f_out.shape()) +
                     " differ");
  }
  if (gate.rank() != 1 ||
      gate.dim(0) != x_prev.dim(x_prev.rank() - 1)) {
    throw ShapeError("gated_update: gate " + shape_string(gate.shape()) +
                     " does not match channels of " +
                     shape_string(x_prev.shape()));
  }
  return add(tape, x_prev, mul(tape, f_out, gate));
}

namespace detail {

// One full pass over the block stack, each layer repeated inner_loops times
// behind its own gated skip. In baseline mode this is the plain chain.
template <typename F>
Tensor<F> stack_pass(Tape<F>* tape, const Model<F>& m, Tensor<F> h) {
  for (size_t l = 0; l < m.blocks.size(); ++l) {
    if (m.loop.mode == LoopMode::baseline) {
      h = transformer_block(tape, h, m.blocks[l], m.cfg);
      continue;
    }
    for (int64_t it = 0; it < m.loop.inner_loops; ++it) {
      Tensor<F> f = transformer_block(tape, h, m.blocks[l], m.cfg);
      h = gated_update(tape, h, f, m.gates.inner_gates[l][size_t(it)]);
    }
  }
  return h;
}

}  // namespace detail

/// Full forward pass. Loop mode iterates the stack outer_loops times, each
/// pass wrapped in a gated skip; each layer repeats inner_loops times behind
/// its own gated skip. Baseline mode is the plain one-pass stack with no
/// gated skips at all.
template <typename F>
Tensor<F> loop_forward(Tape<F>* tape, const Model<F>& m,
                       const ITensor& tokens) {
  Tensor<F> state = embed_tokens(tape, m.emb, tokens, m.cfg.context_len);
  if (m.loop.mode == LoopMode::baseline) {
    state = detail::stack_pass(tape, m, state);
  } else {
    for (int64_t n = 0; n < m.loop.outer_loops; ++n) {
      Tensor<F> f = detail::stack_pass(tape, m, state);
      state = gated_update(tape, state, f, m.gates.outer_gates[size_t(n)]);
    }
  }
  return lm_head(tape, state, m.emb);
}

struct UnrollStats {
  int64_t stack_terms = 0;  // materialized outer-level corrections
  int64_t block_terms = 0;  // materialized per-layer corrections
};

/// Equivalence oracle for loop_forward: computes the same logits as an
/// explicit accumulation x(N) = x(0) + sum_k a_k ⊙ f(x(k-1)), materializing
/// every correction term separately at both loop levels instead of updating
/// state in place. Exists only so the iterative path can be checked against
/// an independently structured computation.
template <typename F>
Tensor<F> unrolled_forward(Tape<F>* tape, const Model<F>& m,
                           const ITensor& tokens,
                           UnrollStats* stats = nullptr) {
  UnrollStats local;
  Tensor<F> x0 = embed_tokens(tape, m.emb, tokens, m.cfg.context_len);

  // Accumulates base + terms[0..k] by fresh left-to-right addition.
  const auto accumulate = [&](const Tensor<F>& base,
                              const std::vector<Tensor<F>>& terms,
                              size_t count) {
    Tensor<F> acc = base;
    for (size_t i = 0; i < count; ++i) {
      acc = add(tape, acc, terms[i]);
    }
    return acc;
  };

  const auto stack_unrolled = [&](const Tensor<F>& s0) {
    if (m.loop.mode == LoopMode::baseline) {
      Tensor<F> h = s0;
      for (size_t l = 0; l < m.blocks.size(); ++l) {
        h = transformer_block(tape, h, m.blocks[l], m.cfg);
      }
      return h;
    }
    Tensor<F> h = s0;
    for (size_t l = 0; l < m.blocks.size(); ++l) {
      std::vector<Tensor<F>> terms;
      const Tensor<F> h0 = h;
      for (int64_t it = 0; it < m.loop.inner_loops; ++it) {
        Tensor<F> prev = accumulate(h0, terms, terms.size());
        Tensor<F> f = transformer_block(tape, prev, m.blocks[l], m.cfg);
        terms.push_back(
            mul(tape, f, m.gates.inner_gates[l][size_t(it)]));
        ++local.block_terms;
      }
      h = accumulate(h0, terms, terms.size());
    }
    return h;
  };

  Tensor<F> out;
  if (m.loop.mode == LoopMode::baseline) {
    out = stack_unrolled(x0);
  } else {
    std::vector<Tensor<F>> terms;
    for (int64_t n = 0; n < m.loop.outer_loops; ++n) {
      Tensor<F> prev = accumulate(x0, terms, terms.size());
      Tensor<F> f = stack_unrolled(prev);
      terms.push_back(mul(tape, f, m.gates.outer_gates[size_t(n)]));
      ++local.stack_terms;
    }
    out = accumulate(x0, terms, terms.size());
  }
  if (stats) {
    *stats = local;
  }
  return lm_head(tape, out, m.emb);
}

struct DepthReport {
  int64_t total_loops = 0;
  int64_t effective_block_applications = 0;
};

/// Loops column accounting: total loops = outer × inner; block applications
/// per forward pass = layers × total loops.
inline DepthReport effective_depth(const ModelConfig& cfg,
                                   const LoopConfig& loop) {
  cfg.validate();
  loop.validate();
  DepthReport r;
  r.total_loops = loop.outer_loops * loop.inner_loops;
  r.effective_block_applications = cfg.n_layers * r.total_loops;
  return r;
}

/// Closed-form trainable-parameter count; must equal an exhaustive walk over
/// the instantiated tensors (tested). Per block: 12 d^2 + 13 d. Gates add
/// d * (outer + layers * inner) in loop mode only.
inline int64_t count_params(const ModelConfig& cfg, const LoopConfig& loop) {
  cfg.validate();
  loop.validate();
  const int64_t d = cfg.d_model;
  int64_t total = cfg.vocab_size * d;   // token embedding
  total += cfg.context_len * d;         // position embedding
  total += cfg.n_layers * (12 * d * d + 13 * d);
  total += 2 * d;                       // final norm
  if (!cfg.tie_embeddings) {
    total += cfg.vocab_size * d;
  }
  if (loop.mode == LoopMode::loop) {
    total += d * (loop.outer_loops + cfg.n_layers * loop.inner_loops);
  }
  return total;
}

}  // namespace loopnet
