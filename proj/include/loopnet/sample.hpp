#pragma once

#include "loopnet/data.hpp"
#include "loopnet/loop.hpp"

namespace loopnet {

/// Ancestral sampling through the forward pass with a sliding context
/// window. temperature == 0 means greedy argmax (ties -> lowest id).
/// Returns prompt + continuation as raw bytes.
template <typename F>
std::string sample_text(const Model<F>& m, const std::string& prompt,
                        int64_t n_tokens, double temperature, uint64_t seed) {
  if (n_tokens < 0) {
    throw ContractError("sample_text: n_tokens must be >= 0");
  }
  if (temperature < 0.0) {
    throw ContractError("sample_text: temperature must be >= 0");
  }
  std::vector<uint16_t> tokens = encode_bytes(prompt);
  if (tokens.empty()) {
    tokens.push_back(static_cast<uint16_t>('\n'));
  }
  for (auto t : tokens) {
    if (t >= m.cfg.vocab_size) {
      throw ContractError("sample_text: prompt byte " + std::to_string(t) +
                          " exceeds vocab_size " +
                          std::to_string(m.cfg.vocab_size));
    }
  }
  Rng rng(seed);
  std::vector<double> probs(static_cast<size_t>(m.cfg.vocab_size));
  for (int64_t i = 0; i < n_tokens; ++i) {
    const int64_t t_len = std::min<int64_t>(
        static_cast<int64_t>(tokens.size()), m.cfg.context_len);
    ITensor window = ITensor::zeros({1, t_len});
    for (int64_t j = 0; j < t_len; ++j) {
      window.data[size_t(j)] = static_cast<int32_t>(
          tokens[tokens.size() - size_t(t_len) + size_t(j)]);
    }
    Tensor<F> logits = loop_forward<F>(nullptr, m, window);
    const F* row = logits.data().data() + (t_len - 1) * m.cfg.vocab_size;

    int64_t pick = 0;
    if (temperature == 0.0) {
      for (int64_t v = 1; v < m.cfg.vocab_size; ++v) {
        if (row[v] > row[pick]) {
          pick = v;
        }
      }
    } else {
      double mx = static_cast<double>(row[0]);
      for (int64_t v = 1; v < m.cfg.vocab_size; ++v) {
        mx = std::max(mx, static_cast<double>(row[v]));
      }
      double denom = 0.0;
      for (int64_t v = 0; v < m.cfg.vocab_size; ++v) {
        probs[size_t(v)] =
            std::exp((static_cast<double>(row[v]) - mx) / temperature);
        denom += probs[size_t(v)];
      }
      double u = rng.uniform() * denom;
      pick = m.cfg.vocab_size - 1;
      for (int64_t v = 0; v < m.cfg.vocab_size; ++v) {
        u -= probs[size_t(v)];
        if (u <= 0.0) {
          pick = v;
          break;
        }
      }
    }
    tokens.push_back(static_cast<uint16_t>(pick));
  }
  return decode_bytes(tokens);
}

}  // namespace loopnet
