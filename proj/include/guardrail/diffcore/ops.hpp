#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "guardrail/diffcore/tape.hpp"
#include "guardrail/diffcore/tensor.hpp"

namespace guardrail::diff {

namespace detail {

inline Tape& same_tape(Var a, Var b) {
    require(a.tape != nullptr && a.tape == b.tape, ErrorCode::invalid_argument,
            "op: operands live on different tapes");
    return *a.tape;
}

inline void require_matrix(const Tensor& t, const char* op) {
    require(t.rank() == 2, ErrorCode::shape_mismatch,
            std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// out[m×n] += a[m×k] · b[k×n]
inline void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                     std::size_t n) {
    const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
    MatMap(out, M, N).noalias() += ConstMatMap(a, M, K) * ConstMatMap(b, K, N);
}

// out[m×k] += g[m×n] · b[k×n]ᵀ
inline void gemm_nt_acc(const double* g, const double* b, double* out, std::size_t m,
                        std::size_t n, std::size_t k) {
    const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
    MatMap(out, M, K).noalias() += ConstMatMap(g, M, N) * ConstMatMap(b, K, N).transpose();
}

// out[k×n] += a[m×k]ᵀ · g[m×n]
inline void gemm_tn_acc(const double* a, const double* g, double* out, std::size_t m,
                        std::size_t k, std::size_t n) {
    const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
    MatMap(out, K, N).noalias() += ConstMatMap(a, M, K).transpose() * ConstMatMap(g, M, N);
}

inline void accumulate(Tensor& dst, std::span<const double> src) {
    auto d = dst.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    detail::require_matrix(av, "matmul");
    detail::require_matrix(bv, "matmul");
    const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    require(bv.shape()[0] == k, ErrorCode::shape_mismatch,
            "matmul: inner dimensions differ " + shape_string(av.shape()) + " · " +
                shape_string(bv.shape()));
    Tensor out(Shape{m, n});
    detail::gemm_acc(av.values().data(), bv.values().data(), out.values().data(), m, k, n);
    const std::size_t ia = a.id, ib = b.id;
    return t.push(OpKind::matmul, {ia, ib}, std::move(out), [ia, ib, m, k, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(ia)) {
            detail::gemm_nt_acc(g.values().data(), tp.value(ib).values().data(),
                                tp.grad_slot(ia).values().data(), m, n, k);
        }
        if (tp.requires_grad(ib)) {
            detail::gemm_tn_acc(tp.value(ia).values().data(), g.values().data(),
                                tp.grad_slot(ib).values().data(), m, k, n);
        }
    });
}

inline Var transpose(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    detail::require_matrix(av, "transpose");
    const std::size_t m = av.shape()[0], n = av.shape()[1];
    Tensor out(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
    const std::size_t ia = a.id;
    return t.push(OpKind::transpose, {ia}, std::move(out), [ia, m, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_slot(ia);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
    });
}

inline Var add(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require(av.shape() == bv.shape(), ErrorCode::shape_mismatch,
            "add: shapes differ " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
    Tensor out = av;
    detail::accumulate(out, bv.values());
    const std::size_t ia = a.id, ib = b.id;
    return t.push(OpKind::add, {ia, ib}, std::move(out), [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(ia)) detail::accumulate(tp.grad_slot(ia), g.values());
        if (tp.requires_grad(ib)) detail::accumulate(tp.grad_slot(ib), g.values());
    });
}

/// x[m×n] + bias[n] broadcast over rows.
inline Var add_row(Var x, Var bias) {
    Tape& t = detail::same_tape(x, bias);
    const Tensor& xv = t.value(x);
    const Tensor& bv = t.value(bias);
    require(bv.size() == xv.cols(), ErrorCode::shape_mismatch,
            "add_row: bias " + shape_string(bv.shape()) + " vs rows of " + shape_string(xv.shape()));
    Tensor out = xv;
    const std::size_t rows = xv.rows(), cols = xv.cols();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
    const std::size_t ix = x.id, ib = bias.id;
    return t.push(OpKind::add_row, {ix, ib}, std::move(out), [ix, ib, rows, cols](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(ix)) detail::accumulate(tp.grad_slot(ix), g.values());
        if (tp.requires_grad(ib)) {
            Tensor& gb = tp.grad_slot(ib);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
        }
    });
}

inline Var mul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require(av.shape() == bv.shape(), ErrorCode::shape_mismatch,
            "mul: shapes differ " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return t.push(OpKind::mul, {ia, ib}, std::move(out), [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(ia)) {
            Tensor& ga = tp.grad_slot(ia);
            const Tensor& bv2 = tp.value(ib);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
        }
        if (tp.requires_grad(ib)) {
            Tensor& gb = tp.grad_slot(ib);
            const Tensor& av2 = tp.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
        }
    });
}

inline Var scale(Var a, double factor) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.values()) v *= factor;
    const std::size_t ia = a.id;
    return t.push(OpKind::scale, {ia}, std::move(out), [ia, factor](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
}

/// Exact GELU: x·Φ(x).
inline Var gelu(Var a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.values()) v = v * detail::normal_cdf(v);
    const std::size_t ia = a.id;
    return t.push(OpKind::gelu, {ia}, std::move(out), [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& x = tp.value(ia);
        Tensor& ga = tp.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * (detail::normal_cdf(x[i]) + x[i] * detail::normal_pdf(x[i]));
        }
    });
}

/// Normalizes each row over the last axis, then applies gamma/beta.
inline Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    Tape& t = detail::same_tape(x, gamma);
    detail::same_tape(x, beta);
    require(eps > 0.0, ErrorCode::invalid_argument, "layernorm: eps must be positive");
    const Tensor& xv = t.value(x);
    const std::size_t rows = xv.rows(), cols = xv.cols();
    require(t.value(gamma).size() == cols && t.value(beta).size() == cols,
            ErrorCode::shape_mismatch, "layernorm: gamma/beta width mismatch");
    const Tensor& gv = t.value(gamma);
    const Tensor& bv = t.value(beta);
    Tensor out(xv.shape());
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.values().data() + r * cols;
        double mean = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean += row[c];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= static_cast<double>(cols);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) {
            const double h = (row[c] - mean) * inv_std[r];
            xhat[r * cols + c] = h;
            out[r * cols + c] = h * gv[c] + bv[c];
        }
    }
    const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
    return t.push(OpKind::layernorm, {ix, ig, ib}, std::move(out),
                  [ix, ig, ib, rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape& tp, std::size_t self) {
                      const Tensor& g = tp.grad(self);
                      const Tensor& gam = tp.value(ig);
                      if (tp.requires_grad(ig) || tp.requires_grad(ib)) {
                          for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < cols; ++c) {
                                  const double gi = g[r * cols + c];
                                  if (tp.requires_grad(ig)) tp.grad_slot(ig)[c] += gi * xhat[r * cols + c];
                                  if (tp.requires_grad(ib)) tp.grad_slot(ib)[c] += gi;
                              }
                          }
                      }
                      if (!tp.requires_grad(ix)) return;
                      Tensor& gx = tp.grad_slot(ix);
                      const double inv_n = 1.0 / static_cast<double>(cols);
                      for (std::size_t r = 0; r < rows; ++r) {
                          double mean_d = 0.0, mean_dx = 0.0;
                          for (std::size_t c = 0; c < cols; ++c) {
                              const double d = g[r * cols + c] * gam[c];
                              mean_d += d;
                              mean_dx += d * xhat[r * cols + c];
                          }
                          mean_d *= inv_n;
                          mean_dx *= inv_n;
                          for (std::size_t c = 0; c < cols; ++c) {
                              const double d = g[r * cols + c] * gam[c];
                              gx[r * cols + c] +=
                                  inv_std[r] * (d - mean_d - xhat[r * cols + c] * mean_dx);
                          }
                      }
                  });
}

/// Softmax along `axis` (rank-1: axis 0; rank-2: axis 0 = down columns,
/// axis 1 = along rows). Max-subtracted for stability.
inline Var softmax(Var x, std::size_t axis) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    require(xv.rank() <= 2 && axis < xv.rank(), ErrorCode::invalid_argument,
            "softmax: invalid axis " + std::to_string(axis) + " for shape " + shape_string(xv.shape()));
    const std::size_t rows = xv.rows(), cols = xv.cols();
    const bool along_rows = xv.rank() == 1 || axis == 1;
    // Lines are rows when normalizing along a row, columns otherwise.
    const std::size_t lines = along_rows ? rows : cols;
    const std::size_t len = along_rows ? cols : rows;
    const std::size_t stride = along_rows ? 1 : cols;
    auto offset = [=](std::size_t line) { return along_rows ? line * cols : line; };
    Tensor out(xv.shape());
    for (std::size_t l = 0; l < lines; ++l) {
        const std::size_t base = offset(l);
        double mx = xv[base];
        for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xv[base + i * stride]);
        double z = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(xv[base + i * stride] - mx);
            out[base + i * stride] = e;
            z += e;
        }
        for (std::size_t i = 0; i < len; ++i) out[base + i * stride] /= z;
    }
    const std::size_t ix = x.id;
    return t.push(OpKind::softmax, {ix}, std::move(out),
                  [ix, lines, len, stride, along_rows, cols](Tape& tp, std::size_t self) {
                      const Tensor& g = tp.grad(self);
                      const Tensor& y = tp.value(self);
                      Tensor& gx = tp.grad_slot(ix);
                      for (std::size_t l = 0; l < lines; ++l) {
                          const std::size_t base = along_rows ? l * cols : l;
                          double s = 0.0;
                          for (std::size_t i = 0; i < len; ++i)
                              s += g[base + i * stride] * y[base + i * stride];
                          for (std::size_t i = 0; i < len; ++i) {
                              const std::size_t k = base + i * stride;
                              gx[k] += y[k] * (g[k] - s);
                          }
                      }
                  });
}

/// Scales each row (or the whole rank-1 tensor) to unit ℓ2 norm.
inline Var l2_normalize(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    require(xv.rank() <= 2, ErrorCode::invalid_argument, "l2_normalize: rank > 2");
    const std::size_t rows = xv.rows(), cols = xv.cols();
    Tensor out(xv.shape());
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += xv[r * cols + c] * xv[r * cols + c];
        norms[r] = std::sqrt(s);
        require(norms[r] > 0.0, ErrorCode::non_finite, "l2_normalize: zero-norm row");
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] / norms[r];
    }
    const std::size_t ix = x.id;
    return t.push(OpKind::l2_normalize, {ix}, std::move(out),
                  [ix, rows, cols, norms = std::move(norms)](Tape& tp, std::size_t self) {
                      const Tensor& g = tp.grad(self);
                      const Tensor& y = tp.value(self);
                      Tensor& gx = tp.grad_slot(ix);
                      for (std::size_t r = 0; r < rows; ++r) {
                          double proj = 0.0;
                          for (std::size_t c = 0; c < cols; ++c) proj += y[r * cols + c] * g[r * cols + c];
                          for (std::size_t c = 0; c < cols; ++c) {
                              const std::size_t k = r * cols + c;
                              gx[k] += (g[k] - y[k] * proj) / norms[r];
                          }
                      }
                  });
}

inline Var dot(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require(av.size() == bv.size(), ErrorCode::shape_mismatch, "dot: sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return t.push(OpKind::dot, {ia, ib}, Tensor::scalar(s), [ia, ib](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)[0];
        if (tp.requires_grad(ia)) {
            Tensor& ga = tp.grad_slot(ia);
            const Tensor& bv2 = tp.value(ib);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv2[i];
        }
        if (tp.requires_grad(ib)) {
            Tensor& gb = tp.grad_slot(ib);
            const Tensor& av2 = tp.value(ia);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av2[i];
        }
    });
}

/// Rows of `table` at `ids`, stacked into [ids.size() × d].
inline Var embedding_gather(Var table, std::span<const std::size_t> ids) {
    Tape& t = *table.tape;
    const Tensor& tv = t.value(table);
    detail::require_matrix(tv, "embedding_gather");
    require(!ids.empty(), ErrorCode::empty_input, "embedding_gather: no ids");
    const std::size_t v = tv.shape()[0], d = tv.shape()[1];
    Tensor out(Shape{ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        require(ids[r] < v, ErrorCode::out_of_range,
                "embedding_gather: id " + std::to_string(ids[r]) + " >= vocab " + std::to_string(v));
        std::copy_n(tv.values().data() + ids[r] * d, d, out.values().data() + r * d);
    }
    const std::size_t it = table.id;
    return t.push(OpKind::embedding_gather, {it}, std::move(out),
                  [it, d, idv = std::vector<std::size_t>(ids.begin(), ids.end())](Tape& tp, std::size_t self) {
                      const Tensor& g = tp.grad(self);
                      Tensor& gt = tp.grad_slot(it);
                      for (std::size_t r = 0; r < idv.size(); ++r)
                          for (std::size_t c = 0; c < d; ++c) gt[idv[r] * d + c] += g[r * d + c];
                  });
}

/// Summed cross-entropy: Σ_r (logsumexp(logits_r) − logits_r[target_r]).
/// A rank-1 logits tensor is a single row with one target.
inline Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
    Tape& t = *logits.tape;
    const Tensor& lv = t.value(logits);
    require(lv.rank() <= 2, ErrorCode::invalid_argument, "cross_entropy: rank > 2");
    const std::size_t rows = lv.rows(), cols = lv.cols();
    require(targets.size() == rows, ErrorCode::shape_mismatch,
            "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                std::to_string(rows) + " rows");
    std::vector<double> probs(lv.size());
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        require(targets[r] < cols, ErrorCode::out_of_range, "cross_entropy: target out of range");
        const double* row = lv.values().data() + r * cols;
        const double mx = *std::max_element(row, row + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(row[c] - lse);
        loss += lse - row[targets[r]];
    }
    const std::size_t il = logits.id;
    return t.push(OpKind::cross_entropy, {il}, Tensor::scalar(loss),
                  [il, cols, probs = std::move(probs),
                   tg = std::vector<std::size_t>(targets.begin(), targets.end())](Tape& tp, std::size_t self) {
                      const double g = tp.grad(self)[0];
                      Tensor& gl = tp.grad_slot(il);
                      for (std::size_t i = 0; i < probs.size(); ++i) gl[i] += g * probs[i];
                      for (std::size_t r = 0; r < tg.size(); ++r) gl[r * cols + tg[r]] -= g;
                  });
}

inline Var cross_entropy(Var logits, std::size_t target) {
    const std::size_t tg[1] = {target};
    return cross_entropy(logits, std::span<const std::size_t>(tg, 1));
}

inline Var select_rows(Var x, std::span<const std::size_t> rows_idx) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    detail::require_matrix(xv, "select_rows");
    require(!rows_idx.empty(), ErrorCode::empty_input, "select_rows: no rows");
    const std::size_t n = xv.shape()[0], cols = xv.shape()[1];
    Tensor out(Shape{rows_idx.size(), cols});
    for (std::size_t r = 0; r < rows_idx.size(); ++r) {
        require(rows_idx[r] < n, ErrorCode::out_of_range, "select_rows: row out of range");
        std::copy_n(xv.values().data() + rows_idx[r] * cols, cols, out.values().data() + r * cols);
    }
    const std::size_t ix = x.id;
    return t.push(OpKind::select_rows, {ix}, std::move(out),
                  [ix, cols, idx = std::vector<std::size_t>(rows_idx.begin(), rows_idx.end())](
                      Tape& tp, std::size_t self) {
                      const Tensor& g = tp.grad(self);
                      Tensor& gx = tp.grad_slot(ix);
                      for (std::size_t r = 0; r < idx.size(); ++r)
                          for (std::size_t c = 0; c < cols; ++c) gx[idx[r] * cols + c] += g[r * cols + c];
                  });
}

inline Var select_cols(Var x, std::span<const std::size_t> cols_idx) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    detail::require_matrix(xv, "select_cols");
    require(!cols_idx.empty(), ErrorCode::empty_input, "select_cols: no columns");
    const std::size_t rows = xv.shape()[0], n = xv.shape()[1];
    Tensor out(Shape{rows, cols_idx.size()});
    for (std::size_t c = 0; c < cols_idx.size(); ++c) {
        require(cols_idx[c] < n, ErrorCode::out_of_range, "select_cols: column out of range");
        for (std::size_t r = 0; r < rows; ++r) out.at(r, c) = xv.at(r, cols_idx[c]);
    }
    const std::size_t ix = x.id;
    return t.push(OpKind::select_cols, {ix}, std::move(out),
                  [ix, rows, idx = std::vector<std::size_t>(cols_idx.begin(), cols_idx.end())](
                      Tape& tp, std::size_t self) {
                      const Tensor& g = tp.grad(self);
                      Tensor& gx = tp.grad_slot(ix);
                      for (std::size_t c = 0; c < idx.size(); ++c)
                          for (std::size_t r = 0; r < rows; ++r) gx.at(r, idx[c]) += g.at(r, c);
                  });
}

inline Var slice_cols(Var x, std::size_t start, std::size_t count) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    detail::require_matrix(xv, "slice_cols");
    const std::size_t rows = xv.shape()[0], n = xv.shape()[1];
    require(count > 0 && start + count <= n, ErrorCode::out_of_range, "slice_cols: range out of bounds");
    Tensor out(Shape{rows, count});
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(xv.values().data() + r * n + start, count, out.values().data() + r * count);
    const std::size_t ix = x.id;
    return t.push(OpKind::slice_cols, {ix}, std::move(out),
                  [ix, rows, n, start, count](Tape& tp, std::size_t self) {
                      const Tensor& g = tp.grad(self);
                      Tensor& gx = tp.grad_slot(ix);
                      for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t c = 0; c < count; ++c) gx[r * n + start + c] += g[r * count + c];
                  });
}

inline Var concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), ErrorCode::empty_input, "concat_cols: no parts");
    Tape& t = *parts[0].tape;
    const std::size_t rows = t.value(parts[0]).rows();
    std::size_t total = 0;
    std::vector<std::size_t> ids, widths;
    for (Var p : parts) {
        const Tensor& pv = detail::same_tape(parts[0], p).value(p);
        detail::require_matrix(pv, "concat_cols");
        require(pv.shape()[0] == rows, ErrorCode::shape_mismatch, "concat_cols: row counts differ");
        ids.push_back(p.id);
        widths.push_back(pv.shape()[1]);
        total += pv.shape()[1];
    }
    Tensor out(Shape{rows, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const Tensor& pv = t.value(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(pv.values().data() + r * widths[k], widths[k], out.values().data() + r * total + off);
        off += widths[k];
    }
    return t.push(OpKind::concat_cols, ids, std::move(out),
                  [ids, widths, rows, total](Tape& tp, std::size_t self) {
                      const Tensor& g = tp.grad(self);
                      std::size_t o = 0;
                      for (std::size_t k = 0; k < ids.size(); ++k) {
                          if (tp.requires_grad(ids[k])) {
                              Tensor& gp = tp.grad_slot(ids[k]);
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < widths[k]; ++c)
                                      gp[r * widths[k] + c] += g[r * total + o + c];
                          }
                          o += widths[k];
                      }
                  });
}

inline Var reshape(Var x, Shape shape) {
    Tape& t = *x.tape;
    Tensor out = t.value(x).reshaped(std::move(shape));
    const std::size_t ix = x.id;
    return t.push(OpKind::reshape, {ix}, std::move(out), [ix](Tape& tp, std::size_t self) {
        detail::accumulate(tp.grad_slot(ix), tp.grad(self).values());
    });
}

inline Var sum(Var x) {
    Tape& t = *x.tape;
    double s = 0.0;
    for (double v : t.value(x).values()) s += v;
    const std::size_t ix = x.id;
    return t.push(OpKind::sum, {ix}, Tensor::scalar(s), [ix](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)[0];
        for (double& v : tp.grad_slot(ix).values()) v += g;
    });
}

}  // namespace guardrail::diff
