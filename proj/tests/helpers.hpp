#pragma once

// Shared test utilities: independent oracles (naive kernels, scalar
// reference implementations), a deterministic synthetic corpus, and process
// helpers for exercising the CLI binary.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "loopnet/loopnet.hpp"

namespace testutil {

using loopnet::ITensor;
using loopnet::Rng;
using loopnet::Tensor;

// ----------------------------- oracles -----------------------------

// Naive triple-loop matmul: c[m,n] = a[m,k] * b[k,n] (b transposed when tb).
template <typename F>
std::vector<F> matmul_oracle(const std::vector<F>& a, const std::vector<F>& b,
                             int64_t m, int64_t k, int64_t n,
                             bool tb = false) {
  std::vector<F> c(static_cast<size_t>(m * n), F(0));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      F acc = F(0);
      for (int64_t p = 0; p < k; ++p) {
        const F bv = tb ? b[static_cast<size_t>(j * k + p)]
                        : b[static_cast<size_t>(p * n + j)];
        acc += a[static_cast<size_t>(i * k + p)] * bv;
      }
      c[static_cast<size_t>(i * n + j)] = acc;
    }
  }
  return c;
}

// Scalar softmax cross-entropy, deliberately coded differently from the
// library (long double accumulation, no max subtraction).
inline double softmax_xent_oracle(const std::vector<double>& logits,
                                  const std::vector<int32_t>& targets,
                                  int64_t rows, int64_t vocab) {
  long double total = 0.0L;
  for (int64_t r = 0; r < rows; ++r) {
    long double denom = 0.0L;
    for (int64_t v = 0; v < vocab; ++v) {
      denom += expl((long double)logits[static_cast<size_t>(r * vocab + v)]);
    }
    const long double lt =
        (long double)logits[static_cast<size_t>(r * vocab + targets[size_t(r)])];
    total += logl(denom) - lt;
  }
  return static_cast<double>(total / (long double)rows);
}

// Central finite difference of a scalar-valued closure with respect to one
// memory location.
template <typename Fn>
double finite_diff(Fn&& f, double* slot, double h) {
  const double orig = *slot;
  *slot = orig + h;
  const double lp = f();
  *slot = orig - h;
  const double lm = f();
  *slot = orig;
  return (lp - lm) / (2.0 * h);
}

// Scalar-loop causal multi-head attention oracle (double precision).
// x: [B,T,d] row-major; weights d x d row-major; returns [B,T,d].
struct AttentionOracleParams {
  std::vector<double> wq, bq, wk, bk, wv, bv, wo, bo;
};

inline std::vector<double> attention_oracle(const std::vector<double>& x,
                                            int64_t b_sz, int64_t t_len,
                                            int64_t d, int64_t heads,
                                            const AttentionOracleParams& p) {
  const int64_t hd = d / heads;
  std::vector<double> out(static_cast<size_t>(b_sz * t_len * d), 0.0);
  const auto proj = [&](const std::vector<double>& w,
                        const std::vector<double>& bias, int64_t b, int64_t t,
                        int64_t j) {
    double acc = bias[size_t(j)];
    for (int64_t i = 0; i < d; ++i) {
      acc += x[static_cast<size_t>((b * t_len + t) * d + i)] *
             w[static_cast<size_t>(i * d + j)];
    }
    return acc;
  };
  std::vector<double> merged(static_cast<size_t>(t_len * d));
  for (int64_t b = 0; b < b_sz; ++b) {
    for (int64_t h = 0; h < heads; ++h) {
      for (int64_t t = 0; t < t_len; ++t) {
        // attention scores of query t against keys 0..t
        std::vector<double> w(static_cast<size_t>(t + 1));
        double mx = -1e300;
        for (int64_t s = 0; s <= t; ++s) {
          double dot = 0.0;
          for (int64_t j = 0; j < hd; ++j) {
            dot += proj(p.wq, p.bq, b, t, h * hd + j) *
                   proj(p.wk, p.bk, b, s, h * hd + j);
          }
          dot /= std::sqrt(static_cast<double>(hd));
          w[size_t(s)] = dot;
          mx = std::max(mx, dot);
        }
        double denom = 0.0;
        for (int64_t s = 0; s <= t; ++s) {
          w[size_t(s)] = std::exp(w[size_t(s)] - mx);
          denom += w[size_t(s)];
        }
        for (int64_t j = 0; j < hd; ++j) {
          double acc = 0.0;
          for (int64_t s = 0; s <= t; ++s) {
            acc += (w[size_t(s)] / denom) * proj(p.wv, p.bv, b, s, h * hd + j);
          }
          merged[static_cast<size_t>(t * d + h * hd + j)] = acc;
        }
      }
    }
    for (int64_t t = 0; t < t_len; ++t) {
      for (int64_t j = 0; j < d; ++j) {
        double acc = p.bo[size_t(j)];
        for (int64_t i = 0; i < d; ++i) {
          acc += merged[static_cast<size_t>(t * d + i)] *
                 p.wo[static_cast<size_t>(i * d + j)];
        }
        out[static_cast<size_t>((b * t_len + t) * d + j)] = acc;
      }
    }
  }
  return out;
}

// Independent scalar Adam with decoupled weight decay, mirroring the
// documented update rule one value at a time.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  int64_t t = 0;
  double step(double w, double g, double lr, double beta1, double beta2,
              double eps, double wd) {
    t += 1;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(beta1, double(t)));
    const double vhat = v / (1.0 - std::pow(beta2, double(t)));
    return w - lr * (mhat / (std::sqrt(vhat) + eps) + wd * w);
  }
};

// A plain one-pass GPT-2 forward composed directly from the building blocks,
// with no loop machinery involved: embed -> blocks -> head.
template <typename F>
Tensor<F> plain_gpt2_forward(const loopnet::Model<F>& m,
                             const ITensor& tokens) {
  Tensor<F> h =
      loopnet::embed_tokens<F>(nullptr, m.emb, tokens, m.cfg.context_len);
  for (const auto& block : m.blocks) {
    h = loopnet::transformer_block<F>(nullptr, h, block, m.cfg);
  }
  return loopnet::lm_head<F>(nullptr, h, m.emb);
}

// ----------------------------- corpus -----------------------------

/// Deterministic English-like filler text: a fixed Zipf-weighted vocabulary of
// syllable-built words, sentence casing and punctuation. Stable across runs
// for a given seed.
inline std::string synthetic_corpus(size_t min_bytes, uint64_t seed = 7) {
  Rng rng(seed);
  const char* onsets[] = {"b",  "br", "c",  "ch", "d",  "dr", "f",  "fl",
                          "g",  "gr", "h",  "j",  "k",  "l",  "m",  "n",
                          "p",  "pl", "qu", "r",  "s",  "sh", "sl", "st",
                          "t",  "th", "tr", "v",  "w",  "wh"};
  const char* nuclei[] = {"a", "ai", "e", "ea", "ee", "i", "o", "oa",
                          "oo", "ou", "u"};
  const char* codas[] = {"",  "b", "ck", "d",  "g",  "l", "ll", "m",
                         "n", "nd", "ng", "nt", "p",  "r", "rd", "s",
                         "st", "t", "th", "x"};
  const auto pick = [&](const char* const* arr, size_t n) {
    return std::string(arr[rng.bounded(n)]);
  };

  std::vector<std::string> words;
  words.reserve(800);
  // A handful of genuine function words keep the text plausible and give the
  // byte model very learnable high-frequency structure.
  for (const char* w :
       {"the", "of", "and", "to", "in", "a", "is", "that", "it", "was",
        "for", "on", "with", "as", "are", "be", "at", "by", "this", "had"}) {
    words.push_back(w);
  }
  while (words.size() < 800) {
    const int syllables = 1 + static_cast<int>(rng.bounded(3));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += pick(onsets, std::size(onsets));
      w += pick(nuclei, std::size(nuclei));
      if (s + 1 == syllables || rng.uniform() < 0.4) {
        w += pick(codas, std::size(codas));
      }
    }
    if (w.size() <= 12) {
      words.push_back(w);
    }
  }

  // Zipf weights over ranks.
  std::vector<double> cdf(words.size());
  double total = 0.0;
  for (size_t r = 0; r < words.size(); ++r) {
    total += 1.0 / std::pow(static_cast<double>(r + 1), 1.1);
    cdf[r] = total;
  }
  const auto draw_word = [&]() -> const std::string& {
    const double u = rng.uniform() * total;
    size_t lo = 0, hi = cdf.size() - 1;
    while (lo < hi) {
      const size_t mid = (lo + hi) / 2;
      if (cdf[mid] < u) {
        lo = mid + 1;
      } else {
        hi = mid;
      }
    }
    return words[lo];
  };

  std::string text;
  text.reserve(min_bytes + 256);
  int sentence_in_paragraph = 0;
  while (text.size() < min_bytes) {
    const int n_words = 4 + static_cast<int>(rng.bounded(9));
    for (int i = 0; i < n_words; ++i) {
      std::string w = draw_word();
      if (i == 0) {
        w[0] = static_cast<char>(std::toupper(w[0]));
      }
      text += w;
      if (i + 1 < n_words) {
        text += (rng.uniform() < 0.06) ? ", " : " ";
      }
    }
    text += ".";
    sentence_in_paragraph += 1;
    if (sentence_in_paragraph >= 6 && rng.uniform() < 0.5) {
      text += "\n\n";
      sentence_in_paragraph = 0;
    } else {
      text += " ";
    }
  }
  return text;
}

// Word-salad corpus whose next word is drawn from a few candidates determined
// by the previous `order` words. Squeezing the entropy floor therefore
// requires composing identities across several preceding words — structure
// that a model with more effective depth can exploit, unlike the purely
// frequency-driven text of synthetic_corpus. Deterministic per seed.
inline std::string markov_corpus(size_t min_bytes, uint64_t seed,
                                 size_t n_words = 10, int branch = 3,
                                 int order = 4) {
  const auto mix = [](uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  Rng rng(seed);
  const char* onsets[] = {"b",  "br", "c",  "ch", "d",  "dr", "f",  "fl",
                          "g",  "gr", "h",  "j",  "k",  "l",  "m",  "n",
                          "p",  "pl", "qu", "r",  "s",  "sh", "sl", "st",
                          "t",  "th", "tr", "v",  "w",  "wh"};
  const char* nuclei[] = {"a", "ai", "e", "ea", "ee", "i", "o", "oa",
                          "oo", "ou", "u"};
  const char* codas[] = {"",  "b", "ck", "d",  "g",  "l", "ll", "m",
                         "n", "nd", "ng", "nt", "p",  "r", "rd", "s",
                         "st", "t", "th", "x"};
  const auto pick = [&](const char* const* arr, size_t n) {
    return std::string(arr[rng.bounded(n)]);
  };

  std::vector<std::string> words;
  words.reserve(n_words);
  while (words.size() < n_words) {
    const int syllables = 1 + static_cast<int>(rng.bounded(3));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += pick(onsets, std::size(onsets));
      w += pick(nuclei, std::size(nuclei));
      if (s + 1 == syllables || rng.uniform() < 0.4) {
        w += pick(codas, std::size(codas));
      }
    }
    bool duplicate = false;
    for (const auto& u : words) {
      duplicate = duplicate || u == w;
    }
    if (!duplicate && w.size() <= 10) {
      words.push_back(w);
    }
  }

  // Successor candidates are a pure function of the state tuple, so the
  // transition table never has to be materialized.
  const uint64_t table_seed = mix(seed ^ 0x6d61726b6f763262ull);
  const auto candidate = [&](const std::vector<size_t>& state, uint64_t t) {
    uint64_t ix = 0;
    for (size_t w : state) {
      ix = ix * n_words + w;
    }
    return static_cast<size_t>(
        mix(table_seed ^ (ix * static_cast<uint64_t>(branch + 1) + t)) %
        n_words);
  };

  std::string text;
  text.reserve(min_bytes + 64);
  std::vector<size_t> state(static_cast<size_t>(order));
  for (auto& w : state) {
    w = rng.bounded(n_words);
  }
  for (size_t i = 0; i < state.size(); ++i) {
    text += (i ? " " : "") + words[state[i]];
  }
  int until_period = 6 + static_cast<int>(rng.bounded(7));
  while (text.size() < min_bytes) {
    const size_t next = candidate(state, rng.bounded(branch));
    if (--until_period <= 0) {
      text += ".";
      until_period = 6 + static_cast<int>(rng.bounded(7));
    }
    text += " " + words[next];
    state.erase(state.begin());
    state.push_back(next);
  }
  text += ".\n";
  return text;
}

// ----------------------------- filesystem / process -----------------------------

// Fresh scratch directory under the system tmp; removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("loopnet-" + tag + "-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr interleaved
};

// Runs a shell command, capturing combined output and the exit code.
inline CliResult run_command(const std::string& cmd) {
  CliResult r;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) {
    r.output = "popen failed";
    return r;
  }
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) {
    r.output.append(buf, n);
  }
  const int status = pclose(pipe);
  if (WIFEXITED(status)) {
    r.exit_code = WEXITSTATUS(status);
  }
  return r;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << content;
}

}  // namespace testutil
