#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "loopnet/tensor.hpp"

namespace loopnet {

namespace detail {

template <typename F>
using EMat = Eigen::Matrix<F, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// c[m,n] (+)= op(a) * op(b), where op(a) is [m,k] (stored [k,m] when ta)
// and op(b) is [k,n] (stored [n,k] when tb).
template <typename F>
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const F* a,
          const F* b, F* c, bool accumulate) {
  Eigen::Map<EMat<F>> mc(c, m, n);
  const auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      mc.noalias() += lhs * rhs;
    } else {
      mc.noalias() = lhs * rhs;
    }
  };
  if (!ta && !tb) {
    run(Eigen::Map<const EMat<F>>(a, m, k), Eigen::Map<const EMat<F>>(b, k, n));
  } else if (!ta && tb) {
    run(Eigen::Map<const EMat<F>>(a, m, k),
        Eigen::Map<const EMat<F>>(b, n, k).transpose());
  } else if (ta && !tb) {
    run(Eigen::Map<const EMat<F>>(a, k, m).transpose(),
        Eigen::Map<const EMat<F>>(b, k, n));
  } else {
    run(Eigen::Map<const EMat<F>>(a, k, m).transpose(),
        Eigen::Map<const EMat<F>>(b, n, k).transpose());
  }
}

template <typename F>
void maybe_check_finite(const Tensor<F>& out, const char* op) {
  const int every = runtime::finite_check_every.load();
  if (every <= 0) {
    return;
  }
  const uint64_t n = runtime::finite_check_counter.fetch_add(1);
  if (n % static_cast<uint64_t>(every) == 0) {
    out.check_finite(op);
  }
}

// True when small_shape equals the trailing dimensions of big_shape.
inline bool is_suffix_shape(const std::vector<int64_t>& big,
                            const std::vector<int64_t>& small) {
  if (small.size() > big.size()) {
    return false;
  }
  const size_t off = big.size() - small.size();
  for (size_t i = 0; i < small.size(); ++i) {
    if (big[off + i] != small[i]) {
      return false;
    }
  }
  return true;
}

// Test hook: the verification suite scales this to corrupt the GELU
// backward rule on purpose and confirm gradcheck catches it.
inline std::atomic<double> gelu_backward_fault_scale{1.0};

}  // namespace detail

// ----------------------------- elementwise -----------------------------

/// a + b. b must have the same shape as a, or a shape equal to a trailing
/// suffix of a's shape (broadcast over the leading dimensions).
template <typename F>
Tensor<F> add(Tape<F>* tape, const Tensor<F>& a, const Tensor<F>& b) {
  if (!detail::is_suffix_shape(a.shape(), b.shape())) {
    throw ShapeError("add: shape " + shape_string(b.shape()) +
                     " does not broadcast against " + shape_string(a.shape()));
  }
  const int64_t bn = b.size();
  Tensor<F> out = Tensor<F>::zeros(a.shape());
  const F* pa = a.data().data();
  const F* pb = b.data().data();
  F* po = out.data().data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) {
    po[i] = pa[i] + pb[i % bn];
  }
  detail::maybe_check_finite(out, "add");

  const bool rg = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(rg);
  if (tape && rg) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F* g = out.grad().data();
      const int64_t n = out.size();
      const int64_t bn = b.size();
      if (a.requires_grad()) {
        F* ga = a.grad().data();
        for (int64_t i = 0; i < n; ++i) {
          ga[i] += g[i];
        }
      }
      if (b.requires_grad()) {
        F* gb = b.grad().data();
        for (int64_t i = 0; i < n; ++i) {
          gb[i % bn] += g[i];
        }
      }
    });
  }
  return out;
}

/// a ⊙ b, with the same broadcast rule as add().
template <typename F>
Tensor<F> mul(Tape<F>* tape, const Tensor<F>& a, const Tensor<F>& b) {
  if (!detail::is_suffix_shape(a.shape(), b.shape())) {
    throw ShapeError("mul: shape " + shape_string(b.shape()) +
                     " does not broadcast against " + shape_string(a.shape()));
  }
  const int64_t bn = b.size();
  Tensor<F> out = Tensor<F>::zeros(a.shape());
  const F* pa = a.data().data();
  const F* pb = b.data().data();
  F* po = out.data().data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) {
    po[i] = pa[i] * pb[i % bn];
  }
  detail::maybe_check_finite(out, "mul");

  const bool rg = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(rg);
  if (tape && rg) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F* g = out.grad().data();
      const F* pa = a.data().data();
      const F* pb = b.data().data();
      const int64_t n = out.size();
      const int64_t bn = b.size();
      if (a.requires_grad()) {
        F* ga = a.grad().data();
        for (int64_t i = 0; i < n; ++i) {
          ga[i] += g[i] * pb[i % bn];
        }
      }
      if (b.requires_grad()) {
        F* gb = b.grad().data();
        for (int64_t i = 0; i < n; ++i) {
          gb[i % bn] += g[i] * pa[i];
        }
      }
    });
  }
  return out;
}

/// c · a for a plain constant c.
template <typename F>
Tensor<F> scale(Tape<F>* tape, const Tensor<F>& a, F c) {
  Tensor<F> out = Tensor<F>::zeros(a.shape());
  const F* pa = a.data().data();
  F* po = out.data().data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) {
    po[i] = pa[i] * c;
  }
  detail::maybe_check_finite(out, "scale");

  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad()) {
    tape->record([a, out, c]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F* g = out.grad().data();
      F* ga = a.grad().data();
      const int64_t n = out.size();
      for (int64_t i = 0; i < n; ++i) {
        ga[i] += g[i] * c;
      }
    });
  }
  return out;
}

/// Sum of all elements, as a scalar tensor.
template <typename F>
Tensor<F> sum(Tape<F>* tape, const Tensor<F>& a) {
  F total = F(0);
  for (F v : a.data()) {
    total += v;
  }
  Tensor<F> out = Tensor<F>::scalar(total);
  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad()) {
    tape->record([a, out]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F g = out.grad()[0];
      F* ga = a.grad().data();
      const int64_t n = a.size();
      for (int64_t i = 0; i < n; ++i) {
        ga[i] += g;
      }
    });
  }
  return out;
}

/// Elementwise GELU, tanh approximation (GPT-2 convention).
template <typename F>
Tensor<F> gelu(Tape<F>* tape, const Tensor<F>& x) {
  constexpr double c0 = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c1 = 0.044715;
  Tensor<F> out = Tensor<F>::zeros(x.shape());
  const F* px = x.data().data();
  F* po = out.data().data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(px[i]);
    const double t = std::tanh(c0 * (v + c1 * v * v * v));
    po[i] = static_cast<F>(0.5 * v * (1.0 + t));
  }
  detail::maybe_check_finite(out, "gelu");

  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const double fault = detail::gelu_backward_fault_scale.load();
      const F* g = out.grad().data();
      const F* px = x.data().data();
      F* gx = x.grad().data();
      const int64_t n = x.size();
      for (int64_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(px[i]);
        const double t = std::tanh(c0 * (v + c1 * v * v * v));
        const double du = c0 * (1.0 + 3.0 * c1 * v * v);
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        gx[i] += g[i] * static_cast<F>(d * fault);
      }
    });
  }
  return out;
}

// ----------------------------- shape ops -----------------------------

template <typename F>
Tensor<F> reshape(Tape<F>* tape, const Tensor<F>& a,
                  std::vector<int64_t> new_shape) {
  if (numel_of(new_shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) +
                     " as " + shape_string(new_shape));
  }
  Tensor<F> out = Tensor<F>::from_data(std::move(new_shape), a.data());
  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad()) {
    tape->record([a, out]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F* g = out.grad().data();
      F* ga = a.grad().data();
      const int64_t n = a.size();
      for (int64_t i = 0; i < n; ++i) {
        ga[i] += g[i];
      }
    });
  }
  return out;
}

/// Permutes axes 1 and 2 of a rank-4 tensor ([a,b,c,d] -> [a,c,b,d]).
template <typename F>
Tensor<F> swap_axes_1_2(Tape<F>* tape, const Tensor<F>& x) {
  if (x.rank() != 4) {
    throw ShapeError("swap_axes_1_2: expected rank-4 tensor, got " +
                     shape_string(x.shape()));
  }
  const int64_t d0 = x.dim(0), d1 = x.dim(1), d2 = x.dim(2), d3 = x.dim(3);
  Tensor<F> out = Tensor<F>::zeros({d0, d2, d1, d3});
  const F* px = x.data().data();
  F* po = out.data().data();
  for (int64_t i0 = 0; i0 < d0; ++i0) {
    for (int64_t i1 = 0; i1 < d1; ++i1) {
      for (int64_t i2 = 0; i2 < d2; ++i2) {
        const F* src = px + ((i0 * d1 + i1) * d2 + i2) * d3;
        F* dst = po + ((i0 * d2 + i2) * d1 + i1) * d3;
        std::copy(src, src + d3, dst);
      }
    }
  }
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, d0, d1, d2, d3]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F* g = out.grad().data();
      F* gx = x.grad().data();
      for (int64_t i0 = 0; i0 < d0; ++i0) {
        for (int64_t i1 = 0; i1 < d1; ++i1) {
          for (int64_t i2 = 0; i2 < d2; ++i2) {
            const F* src = g + ((i0 * d2 + i2) * d1 + i1) * d3;
            F* dst = gx + ((i0 * d1 + i1) * d2 + i2) * d3;
            for (int64_t i3 = 0; i3 < d3; ++i3) {
              dst[i3] += src[i3];
            }
          }
        }
      }
    });
  }
  return out;
}

// ----------------------------- matmul -----------------------------

namespace detail {

template <typename F>
void matmul_shapes(const Tensor<F>& a, const Tensor<F>& b, bool b_transposed,
                   int64_t& batch, int64_t& m, int64_t& k, int64_t& n) {
  const char* name = b_transposed ? "matmul_nt" : "matmul";
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError(std::string(name) + ": operands must be rank >= 2, got " +
                     shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  m = a.dim(a.rank() - 2);
  k = a.dim(a.rank() - 1);
  const int64_t bk = b_transposed ? b.dim(b.rank() - 1) : b.dim(b.rank() - 2);
  n = b_transposed ? b.dim(b.rank() - 2) : b.dim(b.rank() - 1);
  if (bk != k) {
    throw ShapeError(std::string(name) + ": inner dimensions disagree: " +
                     shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  if (b.rank() == 2) {
    batch = a.size() / (m * k);
    return;
  }
  if (a.rank() != b.rank()) {
    throw ShapeError(std::string(name) + ": rank mismatch: " +
                     shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  batch = 1;
  for (int i = 0; i + 2 < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError(std::string(name) + ": batch dimensions disagree: " +
                       shape_string(a.shape()) + " x " +
                       shape_string(b.shape()));
    }
    batch *= a.dim(i);
  }
}

template <typename F>
Tensor<F> matmul_impl(Tape<F>* tape, const Tensor<F>& a, const Tensor<F>& b,
                      bool b_transposed) {
  int64_t batch = 0, m = 0, k = 0, n = 0;
  matmul_shapes(a, b, b_transposed, batch, m, k, n);
  const bool b_is_weight = b.rank() == 2;

  std::vector<int64_t> out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tensor<F> out = Tensor<F>::zeros(out_shape);

  const F* pa = a.data().data();
  const F* pb = b.data().data();
  F* po = out.data().data();
  if (b_is_weight) {
    gemm<F>(false, b_transposed, batch * m, n, k, pa, pb, po, false);
  } else {
    parallel_for(batch, [&](int64_t i) {
      gemm<F>(false, b_transposed, m, n, k, pa + i * m * k, pb + i * k * n,
              po + i * m * n, false);
    });
  }
  maybe_check_finite(out, b_transposed ? "matmul_nt" : "matmul");

  const bool rg = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(rg);
  if (tape && rg) {
    tape->record([a, b, out, batch, m, k, n, b_is_weight,
                  b_transposed]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F* g = out.grad().data();
      const F* pa = a.data().data();
      const F* pb = b.data().data();
      if (b_is_weight) {
        const int64_t rows = batch * m;
        if (a.requires_grad()) {
          // dA = dC * op(B)^T
          gemm<F>(false, !b_transposed, rows, k, n, g, pb, a.grad().data(),
                  true);
        }
        if (b.requires_grad()) {
          // dB = A^T dC (or dC^T A when B entered transposed)
          if (!b_transposed) {
            gemm<F>(true, false, k, n, rows, pa, g, b.grad().data(), true);
          } else {
            gemm<F>(true, false, n, k, rows, g, pa, b.grad().data(), true);
          }
        }
      } else {
        F* ga = a.requires_grad() ? a.grad().data() : nullptr;
        F* gb = b.requires_grad() ? b.grad().data() : nullptr;
        parallel_for(batch, [&](int64_t i) {
          const F* gi = g + i * m * n;
          if (ga) {
            gemm<F>(false, !b_transposed, m, k, n, gi, pb + i * k * n,
                    ga + i * m * k, true);
          }
          if (gb) {
            if (!b_transposed) {
              gemm<F>(true, false, k, n, m, pa + i * m * k, gi, gb + i * k * n,
                      true);
            } else {
              gemm<F>(true, false, n, k, m, gi, pa + i * m * k, gb + i * k * n,
                      true);
            }
          }
        });
      }
    });
  }
  return out;
}

}  // namespace detail

/// Batched matrix product a[..., m, k] * b[..., k, n]. A rank-2 b is applied
/// to all leading dimensions of a; otherwise batch dimensions must match.
template <typename F>
Tensor<F> matmul(Tape<F>* tape, const Tensor<F>& a, const Tensor<F>& b) {
  return detail::matmul_impl(tape, a, b, false);
}

/// a[..., m, k] * b[..., n, k]^T — used for attention scores and the tied
/// output head, where the second operand is stored row-major untransposed.
template <typename F>
Tensor<F> matmul_nt(Tape<F>* tape, const Tensor<F>& a, const Tensor<F>& b) {
  return detail::matmul_impl(tape, a, b, true);
}

// ----------------------------- normalization -----------------------------

/// Per-last-axis standardization followed by a gain/bias affine map.
template <typename F>
Tensor<F> layer_norm(Tape<F>* tape, const Tensor<F>& x, const Tensor<F>& gain,
                     const Tensor<F>& bias, F eps) {
  const int64_t d = x.rank() > 0 ? x.dim(x.rank() - 1) : 0;
  if (d == 0) {
    throw ShapeError("layer_norm: zero-length last axis in " +
                     shape_string(x.shape()));
  }
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: gain/bias of shapes " +
                     shape_string(gain.shape()) + "/" +
                     shape_string(bias.shape()) + " do not match last axis of " +
                     shape_string(x.shape()));
  }
  if (!(eps > F(0))) {
    throw ContractError("layer_norm: eps must be positive");
  }
  const int64_t rows = x.size() / d;
  Tensor<F> out = Tensor<F>::zeros(x.shape());
  std::vector<F> xhat(static_cast<size_t>(x.size()));
  std::vector<F> rstd(static_cast<size_t>(rows));

  const F* px = x.data().data();
  const F* pg = gain.data().data();
  const F* pbi = bias.data().data();
  F* po = out.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const F* row = px + r * d;
    F mean = F(0);
    for (int64_t i = 0; i < d; ++i) {
      mean += row[i];
    }
    mean /= static_cast<F>(d);
    F var = F(0);
    for (int64_t i = 0; i < d; ++i) {
      const F c = row[i] - mean;
      var += c * c;
    }
    var /= static_cast<F>(d);
    const F rs = F(1) / std::sqrt(var + eps);
    rstd[static_cast<size_t>(r)] = rs;
    for (int64_t i = 0; i < d; ++i) {
      const F xh = (row[i] - mean) * rs;
      xhat[static_cast<size_t>(r * d + i)] = xh;
      po[r * d + i] = pg[i] * xh + pbi[i];
    }
  }
  detail::maybe_check_finite(out, "layer_norm");

  const bool rg =
      x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  out.set_requires_grad(rg);
  if (tape && rg) {
    tape->record([x, gain, bias, out, xhat = std::move(xhat),
                  rstd = std::move(rstd), rows, d]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F* g = out.grad().data();
      const F* pg = gain.data().data();
      F* ggain = gain.requires_grad() ? gain.grad().data() : nullptr;
      F* gbias = bias.requires_grad() ? bias.grad().data() : nullptr;
      F* gx = x.requires_grad() ? x.grad().data() : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const F* grow = g + r * d;
        const F* xh = xhat.data() + r * d;
        if (ggain) {
          for (int64_t i = 0; i < d; ++i) {
            ggain[i] += grow[i] * xh[i];
          }
        }
        if (gbias) {
          for (int64_t i = 0; i < d; ++i) {
            gbias[i] += grow[i];
          }
        }
        if (gx) {
          F mean_h = F(0);
          F mean_hx = F(0);
          for (int64_t i = 0; i < d; ++i) {
            const F h = pg[i] * grow[i];
            mean_h += h;
            mean_hx += h * xh[i];
          }
          mean_h /= static_cast<F>(d);
          mean_hx /= static_cast<F>(d);
          const F rs = rstd[static_cast<size_t>(r)];
          for (int64_t i = 0; i < d; ++i) {
            const F h = pg[i] * grow[i];
            gx[r * d + i] += rs * (h - mean_h - xh[i] * mean_hx);
          }
        }
      }
    });
  }
  return out;
}

// ----------------------------- attention helpers -----------------------------

/// Row softmax over the last axis of scores[B, H, T, T], restricted to the
/// causal prefix: row i attends to columns 0..i, later columns get weight 0.
template <typename F>
Tensor<F> causal_softmax(Tape<F>* tape, const Tensor<F>& scores) {
  if (scores.rank() != 4 || scores.dim(2) != scores.dim(3)) {
    throw ShapeError("causal_softmax: expected [B,H,T,T] scores, got " +
                     shape_string(scores.shape()));
  }
  const int64_t outer = scores.dim(0) * scores.dim(1);
  const int64_t t_len = scores.dim(2);
  Tensor<F> out = Tensor<F>::zeros(scores.shape());
  const F* ps = scores.data().data();
  F* po = out.data().data();
  parallel_for(outer, [&](int64_t b) {
    for (int64_t i = 0; i < t_len; ++i) {
      const F* row = ps + (b * t_len + i) * t_len;
      F* orow = po + (b * t_len + i) * t_len;
      const int64_t active = i + 1;
      F mx = row[0];
      for (int64_t j = 1; j < active; ++j) {
        mx = std::max(mx, row[j]);
      }
      F denom = F(0);
      for (int64_t j = 0; j < active; ++j) {
        orow[j] = std::exp(row[j] - mx);
        denom += orow[j];
      }
      const F inv = F(1) / denom;
      for (int64_t j = 0; j < active; ++j) {
        orow[j] *= inv;
      }
    }
  });
  detail::maybe_check_finite(out, "causal_softmax");

  out.set_requires_grad(scores.requires_grad());
  if (tape && scores.requires_grad()) {
    tape->record([scores, out, outer, t_len]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F* g = out.grad().data();
      const F* p = out.data().data();
      F* gs = scores.grad().data();
      parallel_for(outer, [&](int64_t b) {
        for (int64_t i = 0; i < t_len; ++i) {
          const int64_t off = (b * t_len + i) * t_len;
          const int64_t active = i + 1;
          F dot = F(0);
          for (int64_t j = 0; j < active; ++j) {
            dot += g[off + j] * p[off + j];
          }
          for (int64_t j = 0; j < active; ++j) {
            gs[off + j] += p[off + j] * (g[off + j] - dot);
          }
        }
      });
    });
  }
  return out;
}

// ----------------------------- embeddings -----------------------------

/// Gathers rows of table[V, d] by id; output shape = ids.shape + [d].
template <typename F>
Tensor<F> embedding(Tape<F>* tape, const Tensor<F>& table, const ITensor& ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding: table must be rank 2, got " +
                     shape_string(table.shape()));
  }
  const int64_t vocab = table.dim(0);
  const int64_t d = table.dim(1);
  for (size_t i = 0; i < ids.data.size(); ++i) {
    const int32_t id = ids.data[i];
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding: id " + std::to_string(id) +
                       " out of range [0," + std::to_string(vocab) +
                       ") at flat position " + std::to_string(i));
    }
  }
  std::vector<int64_t> out_shape = ids.shape;
  out_shape.push_back(d);
  Tensor<F> out = Tensor<F>::zeros(out_shape);
  const F* pt = table.data().data();
  F* po = out.data().data();
  for (size_t i = 0; i < ids.data.size(); ++i) {
    const F* src = pt + static_cast<int64_t>(ids.data[i]) * d;
    std::copy(src, src + d, po + static_cast<int64_t>(i) * d);
  }

  out.set_requires_grad(table.requires_grad());
  if (tape && table.requires_grad()) {
    tape->record([table, out, ids, d]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F* g = out.grad().data();
      F* gt = table.grad().data();
      for (size_t i = 0; i < ids.data.size(); ++i) {
        F* dst = gt + static_cast<int64_t>(ids.data[i]) * d;
        const F* src = g + static_cast<int64_t>(i) * d;
        for (int64_t j = 0; j < d; ++j) {
          dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

/// The first n rows of a rank-2 table, as a fresh [n, d] tensor.
template <typename F>
Tensor<F> first_rows(Tape<F>* tape, const Tensor<F>& table, int64_t n) {
  if (table.rank() != 2) {
    throw ShapeError("first_rows: table must be rank 2, got " +
                     shape_string(table.shape()));
  }
  if (n < 1 || n > table.dim(0)) {
    throw ContractError("first_rows: cannot take " + std::to_string(n) +
                        " rows from " + shape_string(table.shape()));
  }
  const int64_t d = table.dim(1);
  Tensor<F> out = Tensor<F>::zeros({n, d});
  std::copy(table.data().begin(), table.data().begin() + n * d,
            out.data().begin());
  out.set_requires_grad(table.requires_grad());
  if (tape && table.requires_grad()) {
    tape->record([table, out, n, d]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F* g = out.grad().data();
      F* gt = table.grad().data();
      for (int64_t i = 0; i < n * d; ++i) {
        gt[i] += g[i];
      }
    });
  }
  return out;
}

// ----------------------------- loss -----------------------------

/// Mean over all B*T positions of -log softmax(logits)[target], computed
/// with max-subtraction and a fused log-softmax.
template <typename F>
Tensor<F> softmax_cross_entropy(Tape<F>* tape, const Tensor<F>& logits,
                                const ITensor& targets) {
  if (logits.rank() != 3) {
    throw ShapeError("softmax_cross_entropy: expected [B,T,V] logits, got " +
                     shape_string(logits.shape()));
  }
  const int64_t b_dim = logits.dim(0);
  const int64_t t_dim = logits.dim(1);
  const int64_t vocab = logits.dim(2);
  if (targets.rank() != 2 || targets.dim(0) != b_dim ||
      targets.dim(1) != t_dim) {
    throw ShapeError("softmax_cross_entropy: targets " +
                     shape_string(targets.shape) + " do not match logits " +
                     shape_string(logits.shape()));
  }
  const int64_t rows = b_dim * t_dim;
  for (int64_t r = 0; r < rows; ++r) {
    const int32_t tgt = targets.data[static_cast<size_t>(r)];
    if (tgt < 0 || tgt >= vocab) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(tgt) +
                       " out of range [0," + std::to_string(vocab) +
                       ") at position (b=" + std::to_string(r / t_dim) +
                       ",t=" + std::to_string(r % t_dim) + ")");
    }
  }

  // Probabilities are kept for the backward pass.
  std::vector<F> probs(static_cast<size_t>(logits.size()));
  const F* pl = logits.data().data();
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const F* row = pl + r * vocab;
    F* prow = probs.data() + r * vocab;
    F mx = row[0];
    for (int64_t v = 1; v < vocab; ++v) {
      mx = std::max(mx, row[v]);
    }
    F denom = F(0);
    for (int64_t v = 0; v < vocab; ++v) {
      prow[v] = std::exp(row[v] - mx);
      denom += prow[v];
    }
    const F inv = F(1) / denom;
    for (int64_t v = 0; v < vocab; ++v) {
      prow[v] *= inv;
    }
    const int64_t tgt = targets.data[static_cast<size_t>(r)];
    total += -(static_cast<double>(row[tgt]) - static_cast<double>(mx) -
               std::log(static_cast<double>(denom)));
  }
  const F loss_value = static_cast<F>(total / static_cast<double>(rows));
  if (!std::isfinite(static_cast<double>(loss_value))) {
    throw NonFiniteError("softmax_cross_entropy: loss is not finite");
  }
  Tensor<F> out = Tensor<F>::scalar(loss_value);

  out.set_requires_grad(logits.requires_grad());
  if (tape && logits.requires_grad()) {
    tape->record([logits, out, targets, probs = std::move(probs), rows,
                  vocab]() mutable {
      if (!out.has_grad_storage()) {
        return;
      }
      const F g = out.grad()[0] / static_cast<F>(rows);
      F* gl = logits.grad().data();
      const F* p = probs.data();
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t tgt = targets.data[static_cast<size_t>(r)];
        F* grow = gl + r * vocab;
        const F* prow = p + r * vocab;
        for (int64_t v = 0; v < vocab; ++v) {
          grow[v] += g * prow[v];
        }
        grow[tgt] -= g;
      }
    });
  }
  return out;
}

}  // namespace loopnet
