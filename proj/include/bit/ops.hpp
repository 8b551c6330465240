// Differentiable operations on ad::Var. Every op computes its value eagerly
// and, when the tape records, registers a closure for its vector-Jacobian
// product.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "bit/autodiff.hpp"

namespace bit::ad {

// Left operands with at most this many rows are multiplied one row at a time,
// so each output row depends only on its own input row and not on where it
// sits in the matrix (blocked GEMM treats remainder rows differently).
inline constexpr Index kRowExactLimit = 128;

template <typename S, typename B>
void product_into(Matrix<S>& out, const Matrix<S>& a, const B& b) {
  if (a.rows() > kRowExactLimit) {
    out.noalias() = a * b;
    return;
  }
  Eigen::Matrix<S, 1, Eigen::Dynamic> in_row(a.cols()), out_row(b.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    in_row = a.row(r);
    out_row.noalias() = in_row * b;
    out.row(r) = out_row;
  }
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  return a.tape().record("add", a.value() + b.value(), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

// a (R x C) + row (1 x C) broadcast over rows.
template <typename S>
Var<S> add_row(Var<S> a, Var<S> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Matrix<S> out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape().record("add_row", std::move(out), {a, row}, [a, row](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g);
    t.accumulate(row, g.colwise().sum());
  });
}

template <typename S>
Var<S> scale(Var<S> a, S s) {
  return a.tape().record("scale", a.value() * s, {a}, [a, s](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g * s);
  });
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix<S> out(a.rows(), b.cols());
  product_into(out, a.value(), b.value());
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

// a * b^T
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Matrix<S> out(a.rows(), b.rows());
  product_into(out, a.value(), b.value().transpose());
  return a.tape().record("matmul_nt", std::move(out), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value());
    if (t.needs_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

// x * W + b with W (in x out) and b (1 x out).
template <typename S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
  if (x.cols() != w.rows() || b.cols() != w.cols()) throw std::invalid_argument("linear: shape mismatch");
  Matrix<S> out(x.rows(), w.cols());
  product_into(out, x.value(), w.value());
  out.rowwise() += b.value().row(0);
  return x.tape().record("linear", std::move(out), {x, w, b}, [x, w, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(x)) t.accumulate(x, g * w.value().transpose());
    if (t.needs_grad(w)) t.accumulate(w, x.value().transpose() * g);
    if (t.needs_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

template <typename S>
Var<S> relu(Var<S> a) {
  Matrix<S> out = a.value().cwiseMax(S(0));
  return a.tape().record("relu", std::move(out), {a}, [a](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, (a.value().array() > S(0)).select(g.array(), S(0)).matrix());
  });
}

// Multiplies by a fixed mask (already scaled by 1/keep).
template <typename S>
Var<S> mask(Var<S> a, Matrix<S> m) {
  Matrix<S> out = a.value().cwiseProduct(m);
  return a.tape().record("mask", std::move(out), {a}, [a, m = std::move(m)](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g.cwiseProduct(m));
  });
}

template <typename S>
Matrix<S> softmax_rows_value(const Matrix<S>& x) {
  // Rows go through an aligned temporary so vectorisation, and with it the
  // rounding, is the same for every row.
  Matrix<S> y(x.rows(), x.cols());
  Eigen::Matrix<S, 1, Eigen::Dynamic> row(x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    row = x.row(r);
    row = (row.array() - row.maxCoeff()).exp().matrix();
    row /= row.sum();
    y.row(r) = row;
  }
  return y;
}

template <typename S>
Var<S> softmax_rows(Var<S> a) {
  Matrix<S> y = softmax_rows_value(a.value());
  return a.tape().record("softmax_rows", y, {a}, [a, y](Tape<S>& t, const Matrix<S>& g) {
    Eigen::Matrix<S, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    Matrix<S> ga = g;
    ga.colwise() -= dot;
    t.accumulate(a, ga.cwiseProduct(y));
  });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Matrix<S> out = a.value().transpose();
  return a.tape().record("transpose", std::move(out), {a}, [a](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g.transpose());
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<S> out(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape().record("concat_cols", std::move(out), parts, [parts](Tape<S>& t, const Matrix<S>& g) {
    Index c = 0;
    for (const auto& p : parts) {
      if (t.needs_grad(p)) t.accumulate(p, g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Index start, Index count) {
  Matrix<S> out = a.value().middleCols(start, count);
  return a.tape().record("slice_cols", std::move(out), {a}, [a, start, count](Tape<S>& t, const Matrix<S>& g) {
    t.grad_buffer(a).middleCols(start, count) += g;
  });
}

// out.row(r) = a.row(index[r]).
template <typename S>
Var<S> gather_rows(Var<S> a, std::vector<Index> index) {
  Matrix<S> out(static_cast<Index>(index.size()), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) out.row(static_cast<Index>(r)) = a.value().row(index[r]);
  return a.tape().record("gather_rows", std::move(out), {a},
                         [a, index = std::move(index)](Tape<S>& t, const Matrix<S>& g) {
                           Matrix<S>& ga = t.grad_buffer(a);
                           for (std::size_t r = 0; r < index.size(); ++r) ga.row(index[r]) += g.row(static_cast<Index>(r));
                         });
}

// Mean of row ranges [start_k, end_k) of a.
template <typename S>
Var<S> segment_mean(Var<S> a, std::vector<std::pair<Index, Index>> ranges) {
  Matrix<S> out(static_cast<Index>(ranges.size()), a.cols());
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    const auto [s, e] = ranges[k];
    out.row(static_cast<Index>(k)) = a.value().middleRows(s, e - s).colwise().sum() / static_cast<S>(e - s);
  }
  return a.tape().record("segment_mean", std::move(out), {a},
                         [a, ranges = std::move(ranges)](Tape<S>& t, const Matrix<S>& g) {
                           Matrix<S>& ga = t.grad_buffer(a);
                           for (std::size_t k = 0; k < ranges.size(); ++k) {
                             const auto [s, e] = ranges[k];
                             const S inv = S(1) / static_cast<S>(e - s);
                             for (Index r = s; r < e; ++r) ga.row(r) += g.row(static_cast<Index>(k)) * inv;
                           }
                         });
}

// out.col(t) = a.col(index[t]) * factor[t].
template <typename S>
Var<S> expand_cols(Var<S> a, std::vector<Index> index, std::vector<S> factor) {
  Matrix<S> out(a.rows(), static_cast<Index>(index.size()));
  for (std::size_t c = 0; c < index.size(); ++c) out.col(static_cast<Index>(c)) = a.value().col(index[c]) * factor[c];
  return a.tape().record("expand_cols", std::move(out), {a},
                         [a, index = std::move(index), factor = std::move(factor)](Tape<S>& t, const Matrix<S>& g) {
                           Matrix<S>& ga = t.grad_buffer(a);
                           for (std::size_t c = 0; c < index.size(); ++c)
                             ga.col(index[c]) += g.col(static_cast<Index>(c)) * factor[c];
                         });
}

// Row-wise layer normalisation with affine gain and bias (both 1 x C).
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  const Matrix<S>& xv = x.value();
  const Index n = xv.cols();
  Matrix<S> xhat(xv.rows(), n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(xv.rows());
  Eigen::Matrix<S, 1, Eigen::Dynamic> row(n);
  for (Index r = 0; r < xv.rows(); ++r) {
    row = xv.row(r);
    const S mean = row.mean();
    row.array() -= mean;
    inv_std(r) = S(1) / std::sqrt(row.squaredNorm() / static_cast<S>(n) + eps);
    xhat.row(r) = row * inv_std(r);
  }
  Matrix<S> out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return x.tape().record("layer_norm", std::move(out), {x, gain, bias},
                         [x, gain, bias, xhat, inv_std, n](Tape<S>& t, const Matrix<S>& g) {
                           if (t.needs_grad(gain)) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                           if (t.needs_grad(bias)) t.accumulate(bias, g.colwise().sum());
                           if (!t.needs_grad(x)) return;
                           Matrix<S> dxhat = g.array().rowwise() * gain.value().row(0).array();
                           Matrix<S> dx(g.rows(), n);
                           for (Index r = 0; r < g.rows(); ++r) {
                             const S m1 = dxhat.row(r).mean();
                             const S m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<S>(n);
                             dx.row(r) = ((dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r)).matrix();
                           }
                           t.accumulate(x, dx);
                         });
}

// Centered temporal convolution with kernel size 3 along rows (time).
// w stacks the three taps as (3*Cin) x Cout: tap k reads frame t + (k-1)*dilation.
// Frames outside [0, T) read zero.
template <typename S>
Var<S> conv_temporal(Var<S> x, Var<S> w, Var<S> b, Index dilation) {
  const Index T = x.rows();
  const Index cin = x.cols();
  if (w.rows() != 3 * cin || b.cols() != w.cols()) throw std::invalid_argument("conv_temporal: shape mismatch");
  Matrix<S> out(T, w.cols());
  out.rowwise() = b.value().row(0);
  const Matrix<S>& xv = x.value();
  const Matrix<S>& wv = w.value();
  for (Index k = 0; k < 3; ++k) {
    const Index shift = (k - 1) * dilation;
    // Output rows t with 0 <= t + shift < T.
    const Index lo = std::max<Index>(0, -shift);
    const Index hi = std::min<Index>(T, T - shift);
    if (hi <= lo) continue;
    out.middleRows(lo, hi - lo).noalias() += xv.middleRows(lo + shift, hi - lo) * wv.middleRows(k * cin, cin);
  }
  return x.tape().record("conv_temporal", std::move(out), {x, w, b},
                         [x, w, b, dilation, T, cin](Tape<S>& t, const Matrix<S>& g) {
                           const bool gx = t.needs_grad(x), gw = t.needs_grad(w);
                           if (t.needs_grad(b)) t.accumulate(b, g.colwise().sum());
                           for (Index k = 0; k < 3; ++k) {
                             const Index shift = (k - 1) * dilation;
                             const Index lo = std::max<Index>(0, -shift);
                             const Index hi = std::min<Index>(T, T - shift);
                             if (hi <= lo) continue;
                             if (gx) {
                               t.grad_buffer(x).middleRows(lo + shift, hi - lo).noalias() +=
                                   g.middleRows(lo, hi - lo) * w.value().middleRows(k * cin, cin).transpose();
                             }
                             if (gw) {
                               t.grad_buffer(w).middleRows(k * cin, cin).noalias() +=
                                   x.value().middleRows(lo + shift, hi - lo).transpose() * g.middleRows(lo, hi - lo);
                             }
                           }
                         });
}

// Single-layer unidirectional GRU over the rows of x, zero initial state.
// wx: Cin x 3H, wh: H x 3H, gate order (reset, update, candidate).
template <typename S>
Var<S> gru(Var<S> x, Var<S> wx, Var<S> wh, Var<S> bx, Var<S> bh) {
  const Index K = x.rows();
  const Index H = wh.rows();
  if (wx.cols() != 3 * H || wh.cols() != 3 * H || wx.rows() != x.cols()) throw std::invalid_argument("gru: shape mismatch");
  Matrix<S> xp(K, 3 * H);
  xp.noalias() = x.value() * wx.value();
  xp.rowwise() += bx.value().row(0);

  Matrix<S> h(K, H), r(K, H), z(K, H), n(K, H), hn(K, H);
  Eigen::Matrix<S, 1, Eigen::Dynamic> prev = Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(H);
  Eigen::Matrix<S, 1, Eigen::Dynamic> hp(3 * H);
  const auto sigmoid = [](S v) { return S(1) / (S(1) + std::exp(-v)); };
  for (Index k = 0; k < K; ++k) {
    hp.noalias() = prev * wh.value();
    hp += bh.value().row(0);
    for (Index j = 0; j < H; ++j) {
      r(k, j) = sigmoid(xp(k, j) + hp(j));
      z(k, j) = sigmoid(xp(k, H + j) + hp(H + j));
      hn(k, j) = hp(2 * H + j);
      n(k, j) = std::tanh(xp(k, 2 * H + j) + r(k, j) * hn(k, j));
      h(k, j) = (S(1) - z(k, j)) * n(k, j) + z(k, j) * prev(j);
    }
    prev = h.row(k);
  }
  return x.tape().record(
      "gru", h, {x, wx, wh, bx, bh}, [x, wx, wh, bx, bh, h, r, z, n, hn, K, H](Tape<S>& t, const Matrix<S>& g) {
        Matrix<S> dxp(K, 3 * H);  // grad wrt input pre-activations
        Matrix<S> dhp(K, 3 * H);  // grad wrt hidden pre-activations
        Eigen::Matrix<S, 1, Eigen::Dynamic> carry = Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(H);
        for (Index k = K - 1; k >= 0; --k) {
          Eigen::Matrix<S, 1, Eigen::Dynamic> dh = g.row(k) + carry;
          Eigen::Matrix<S, 1, Eigen::Dynamic> dprev(H);
          for (Index j = 0; j < H; ++j) {
            const S hprev = k > 0 ? h(k - 1, j) : S(0);
            const S dn = dh(j) * (S(1) - z(k, j));
            const S dz = dh(j) * (hprev - n(k, j));
            const S da_n = dn * (S(1) - n(k, j) * n(k, j));
            const S dr = da_n * hn(k, j);
            const S da_r = dr * r(k, j) * (S(1) - r(k, j));
            const S da_z = dz * z(k, j) * (S(1) - z(k, j));
            dxp(k, j) = da_r;
            dxp(k, H + j) = da_z;
            dxp(k, 2 * H + j) = da_n;
            dhp(k, j) = da_r;
            dhp(k, H + j) = da_z;
            dhp(k, 2 * H + j) = da_n * r(k, j);
            dprev(j) = dh(j) * z(k, j);
          }
          dprev.noalias() += dhp.row(k) * wh.value().transpose();
          carry = dprev;
        }
        if (t.needs_grad(x)) t.accumulate(x, dxp * wx.value().transpose());
        if (t.needs_grad(wx)) t.accumulate(wx, x.value().transpose() * dxp);
        if (t.needs_grad(bx)) t.accumulate(bx, dxp.colwise().sum());
        if (t.needs_grad(bh)) t.accumulate(bh, dhp.colwise().sum());
        if (t.needs_grad(wh) && K > 1) {
          // Hidden state feeding step k is h(k-1); step 0 reads zeros.
          t.accumulate(wh, h.topRows(K - 1).transpose() * dhp.bottomRows(K - 1));
        }
      });
}

// Sum of scalar (1x1) vars.
template <typename S>
Var<S> sum_scalars(const std::vector<Var<S>>& xs) {
  if (xs.empty()) throw std::invalid_argument("sum_scalars: no inputs");
  Matrix<S> out = Matrix<S>::Zero(1, 1);
  for (const auto& v : xs) out(0, 0) += v.value()(0, 0);
  return xs.front().tape().record("sum_scalars", std::move(out), xs, [xs](Tape<S>& t, const Matrix<S>& g) {
    for (const auto& v : xs) t.accumulate(v, g);
  });
}

struct Pick {
  Index row;
  Index col;
  double weight;
};

// sum_i -weight_i * log(max(a(row_i, col_i), floor)). Entries below the
// floor get zero gradient.
template <typename S>
Var<S> neg_log_picks(Var<S> a, std::vector<Pick> picks, S floor = S(1e-8)) {
  S total = 0;
  for (const auto& p : picks) total -= static_cast<S>(p.weight) * std::log(std::max(a.value()(p.row, p.col), floor));
  Matrix<S> out(1, 1);
  out(0, 0) = total;
  return a.tape().record("neg_log_picks", std::move(out), {a},
                         [a, picks = std::move(picks), floor](Tape<S>& t, const Matrix<S>& g) {
                           Matrix<S>& ga = t.grad_buffer(a);
                           for (const auto& p : picks) {
                             const S v = a.value()(p.row, p.col);
                             if (v > floor) ga(p.row, p.col) -= g(0, 0) * static_cast<S>(p.weight) / v;
                           }
                         });
}

// Truncated squared log-difference between consecutive rows:
// mean over (t, c) of min(|log q(t,c) - log q(t-1,c)|, tau)^2, with q clamped
// below at floor. Rows are the temporal axis. Zero when there is one row.
template <typename S>
Var<S> truncated_smoothing(Var<S> q, S tau, S floor = S(1e-8)) {
  const Matrix<S>& v = q.value();
  const Index T = v.rows();
  const Index C = v.cols();
  Matrix<S> out = Matrix<S>::Zero(1, 1);
  if (T < 2) return q.tape().record("truncated_smoothing", std::move(out), {q}, {});
  // Scalar log: equal probabilities must give equal logs wherever they sit.
  Matrix<S> logq = v.cwiseMax(floor).unaryExpr([](S x) { return std::log(x); });
  Matrix<S> diff = logq.bottomRows(T - 1) - logq.topRows(T - 1);
  const S denom = static_cast<S>((T - 1) * C);
  out(0, 0) = diff.cwiseAbs().cwiseMin(tau).array().square().sum() / denom;
  return q.tape().record("truncated_smoothing", std::move(out), {q},
                         [q, diff, tau, floor, denom, T](Tape<S>& t, const Matrix<S>& g) {
                           // d/d(diff) of min(|d|,tau)^2 is 2d inside the band, 0 outside.
                           Matrix<S> dd = (diff.array().abs() < tau).select(diff.array() * (S(2) * g(0, 0) / denom), S(0)).matrix();
                           Matrix<S> dlog = Matrix<S>::Zero(T, diff.cols());
                           dlog.bottomRows(T - 1) += dd;
                           dlog.topRows(T - 1) -= dd;
                           const Matrix<S>& v = q.value();
                           Matrix<S> gq = (v.array() > floor).select(dlog.array() / v.array(), S(0)).matrix();
                           t.accumulate(q, gq);
                         });
}

}  // namespace bit::ad
