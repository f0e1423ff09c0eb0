#ifndef GPOINTX_DIFF_HPP_
#define GPOINTX_DIFF_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gpointx/errors.hpp"
#include "gpointx/rng.hpp"

namespace gpx {

using NodeId = int;

enum class ReduceMode { max, sum, mean };

// Training rebuilds multi-megabyte tapes per sample; keeping large blocks on
// the heap instead of mmap halves the step time. Safe to call repeatedly.
inline void tune_allocator_for_tapes() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

// One value in the computation graph. Forward kernels keep a fixed
// per-element accumulation order (ascending contraction index) so that a
// forward pass is reproducible bit for bit; backward kernels are free to
// block their accumulators.
template <class Real>
struct DiffNode {
  std::vector<std::size_t> shape;
  std::vector<Real> values;
  std::vector<Real> gradient;
  std::vector<NodeId> parents;
  bool needs_grad = false;
  std::function<void()> backward_fn;

  std::size_t numel() const { return values.size(); }
};

template <class Real>
class Tape {
 public:
  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}

  std::size_t size() const { return nodes_.size(); }
  const DiffNode<Real>& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::span<const Real> values(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].values; }
  std::span<Real> values_mut(NodeId id) { return nodes_[static_cast<std::size_t>(id)].values; }
  std::span<const Real> gradient(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].gradient; }
  const std::vector<std::size_t>& shape(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].shape; }

  NodeId constant(std::vector<std::size_t> shape, std::vector<Real> values) {
    return leaf(std::move(shape), std::move(values), false);
  }

  NodeId param(std::vector<std::size_t> shape, std::vector<Real> values) {
    return leaf(std::move(shape), std::move(values), true);
  }

  // y[i][j] = b[j] + sum_k x[i][k] * w[j][k], k ascending. w is d_out x d_in.
  // An optional fused relu keeps the intermediate pre-activation off the tape.
  NodeId affine(NodeId x, NodeId w, NodeId b, bool fused_relu = false) {
    const auto& xs = shape(x);
    const auto& ws = shape(w);
    const auto& bs = shape(b);
    if (xs.size() != 2 || ws.size() != 2 || bs.size() != 1)
      throw ShapeError("affine: expected x rank 2, w rank 2, b rank 1");
    const std::size_t rows = xs[0], din = xs[1], dout = ws[0];
    if (ws[1] != din || bs[0] != dout)
      throw ShapeError("affine: dimension mismatch (x " + std::to_string(rows) + "x" + std::to_string(din) +
                       ", w " + std::to_string(dout) + "x" + std::to_string(ws[1]) + ")");
    NodeId y = fresh({rows, dout}, {x, w, b});
    {
      // Transposed copy of w so the inner loop runs over contiguous output lanes.
      std::vector<Real> wt(din * dout);
      const Real* __restrict wp = nodes_[static_cast<std::size_t>(w)].values.data();
      for (std::size_t j = 0; j < dout; ++j)
        for (std::size_t k = 0; k < din; ++k) wt[k * dout + j] = wp[j * din + k];
      const Real* __restrict xp = nodes_[static_cast<std::size_t>(x)].values.data();
      const Real* __restrict bp = nodes_[static_cast<std::size_t>(b)].values.data();
      Real* __restrict yp = nodes_[static_cast<std::size_t>(y)].values.data();
      for (std::size_t i = 0; i < rows; ++i) {
        Real* __restrict yrow = yp + i * dout;
        for (std::size_t j = 0; j < dout; ++j) yrow[j] = bp[j];
        const Real* __restrict xrow = xp + i * din;
        for (std::size_t k = 0; k < din; ++k) {
          const Real xv = xrow[k];
          const Real* __restrict wrow = wt.data() + k * dout;
          for (std::size_t j = 0; j < dout; ++j) yrow[j] += xv * wrow[j];
        }
        if (fused_relu)
          for (std::size_t j = 0; j < dout; ++j) yrow[j] = yrow[j] > Real(0) ? yrow[j] : Real(0);
      }
    }
    set_backward(y, [this, x, w, b, y, rows, din, dout, fused_relu]() {
      const auto& ynode = nodes_[static_cast<std::size_t>(y)];
      const Real* __restrict dy = ynode.gradient.data();
      const Real* __restrict yv = ynode.values.data();
      const Real* __restrict xp = nodes_[static_cast<std::size_t>(x)].values.data();
      const Real* __restrict wp = nodes_[static_cast<std::size_t>(w)].values.data();
      // With the fused relu, a zero output means the unit was clamped (relu'(0)=0).
      auto upstream = [&](std::size_t idx) -> Real {
        return fused_relu && yv[idx] <= Real(0) ? Real(0) : dy[idx];
      };
      if (nodes_[static_cast<std::size_t>(x)].needs_grad) {
        Real* __restrict dx = nodes_[static_cast<std::size_t>(x)].gradient.data();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < dout; ++j) {
            const Real g = upstream(i * dout + j);
            if (g == Real(0)) continue;
            const Real* __restrict wrow = wp + j * din;
            Real* __restrict dxrow = dx + i * din;
            for (std::size_t k = 0; k < din; ++k) dxrow[k] += g * wrow[k];
          }
      }
      if (nodes_[static_cast<std::size_t>(w)].needs_grad) {
        Real* __restrict dw = nodes_[static_cast<std::size_t>(w)].gradient.data();
        Real* __restrict db = nodes_[static_cast<std::size_t>(b)].gradient.data();
        const bool want_b = nodes_[static_cast<std::size_t>(b)].needs_grad;
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < dout; ++j) {
            const Real g = upstream(i * dout + j);
            if (g == Real(0)) continue;
            if (want_b) db[j] += g;
            const Real* __restrict xrow = xp + i * din;
            Real* __restrict wrow = dw + j * din;
            for (std::size_t k = 0; k < din; ++k) wrow[k] += g * xrow[k];
          }
      } else if (nodes_[static_cast<std::size_t>(b)].needs_grad) {
        Real* __restrict db = nodes_[static_cast<std::size_t>(b)].gradient.data();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < dout; ++j) db[j] += upstream(i * dout + j);
      }
    });
    return finish(y);
  }

  // Fused continuous-convolution kernel for a single-affine kernel net:
  // per row, W = aw * rel + ab evaluated exactly like affine, then
  //   y[r][o] = sum_k W[k*dout + o] * f[r][k], k ascending.
  // The (rows x din*dout) kernel tensor is never materialized.
  NodeId kernel_affine_apply(NodeId aw, NodeId ab, NodeId rel, NodeId f, std::size_t dout) {
    const auto& ws = shape(aw);
    const auto& bs = shape(ab);
    const auto& rs = shape(rel);
    const auto& fs = shape(f);
    if (ws.size() != 2 || ws[1] != 3 || bs.size() != 1 || rs.size() != 2 || rs[1] != 3 || fs.size() != 2)
      throw ShapeError("kernel_affine_apply: bad operand ranks");
    const std::size_t rows = rs[0], din = fs[1], dd = ws[0];
    if (bs[0] != dd || dd != din * dout || fs[0] != rows)
      throw ShapeError("kernel_affine_apply: kernel width must be d_in*d_out");
    if (nodes_[static_cast<std::size_t>(rel)].needs_grad)
      throw ShapeError("kernel_affine_apply: offsets must be constants");
    NodeId y = fresh({rows, dout}, {aw, ab, rel, f});
    std::vector<Real> wt(3 * dd);  // aw transposed, kept for the backward pass
    {
      const Real* __restrict wp = nodes_[static_cast<std::size_t>(aw)].values.data();
      for (std::size_t u = 0; u < dd; ++u)
        for (std::size_t j = 0; j < 3; ++j) wt[j * dd + u] = wp[u * 3 + j];
    }
    auto wt_shared = std::make_shared<std::vector<Real>>(std::move(wt));
    {
      const Real* __restrict bp = nodes_[static_cast<std::size_t>(ab)].values.data();
      const Real* __restrict rp = nodes_[static_cast<std::size_t>(rel)].values.data();
      const Real* __restrict fp = nodes_[static_cast<std::size_t>(f)].values.data();
      const Real* __restrict wtp = wt_shared->data();
      Real* __restrict yp = nodes_[static_cast<std::size_t>(y)].values.data();
      std::vector<Real> kernel(dd);
      Real* __restrict kp = kernel.data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t u = 0; u < dd; ++u) kp[u] = bp[u];
        for (std::size_t j = 0; j < 3; ++j) {
          const Real rv = rp[r * 3 + j];
          const Real* __restrict wrow = wtp + j * dd;
          for (std::size_t u = 0; u < dd; ++u) kp[u] += rv * wrow[u];
        }
        Real* __restrict yrow = yp + r * dout;
        for (std::size_t o = 0; o < dout; ++o) yrow[o] = Real(0);
        const Real* __restrict frow = fp + r * din;
        for (std::size_t k = 0; k < din; ++k) {
          const Real fv = frow[k];
          const Real* __restrict wk = kp + k * dout;
          for (std::size_t o = 0; o < dout; ++o) yrow[o] += fv * wk[o];
        }
      }
    }
    set_backward(y, [this, aw, ab, rel, f, y, rows, din, dout, dd, wt_shared]() {
      const Real* __restrict dy = nodes_[static_cast<std::size_t>(y)].gradient.data();
      const Real* __restrict bp = nodes_[static_cast<std::size_t>(ab)].values.data();
      const Real* __restrict rp = nodes_[static_cast<std::size_t>(rel)].values.data();
      const Real* __restrict fp = nodes_[static_cast<std::size_t>(f)].values.data();
      const Real* __restrict wtp = wt_shared->data();
      const bool want_w = nodes_[static_cast<std::size_t>(aw)].needs_grad;
      const bool want_b = nodes_[static_cast<std::size_t>(ab)].needs_grad;
      const bool want_f = nodes_[static_cast<std::size_t>(f)].needs_grad;
      std::vector<Real> kernel(want_f ? dd : 0);
      // dW planes accumulated contiguously, folded into the node at the end.
      std::vector<Real> acc_b(want_w || want_b ? dd : 0, Real(0));
      std::vector<Real> acc_w(want_w ? 3 * dd : 0, Real(0));
      Real* __restrict df = want_f ? nodes_[static_cast<std::size_t>(f)].gradient.data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* __restrict dyrow = dy + r * dout;
        const Real* __restrict frow = fp + r * din;
        if (want_f) {
          Real* __restrict kp = kernel.data();
          for (std::size_t u = 0; u < dd; ++u) kp[u] = bp[u];
          for (std::size_t j = 0; j < 3; ++j) {
            const Real rv = rp[r * 3 + j];
            const Real* __restrict wrow = wtp + j * dd;
            for (std::size_t u = 0; u < dd; ++u) kp[u] += rv * wrow[u];
          }
          Real* __restrict dfrow = df + r * din;
          for (std::size_t k = 0; k < din; ++k)
            dfrow[k] += blocked_dot(dyrow, kp + k * dout, dout);
        }
        if (want_w || want_b) {
          const Real r0 = rp[r * 3 + 0], r1 = rp[r * 3 + 1], r2 = rp[r * 3 + 2];
          Real* __restrict ab_acc = acc_b.data();
          Real* __restrict a0 = acc_w.data();
          Real* __restrict a1 = acc_w.data() + dd;
          Real* __restrict a2 = acc_w.data() + 2 * dd;
          for (std::size_t k = 0; k < din; ++k) {
            const Real fv = frow[k];
            const std::size_t base = k * dout;
            if (want_w) {
              for (std::size_t o = 0; o < dout; ++o) {
                const Real g = fv * dyrow[o];
                ab_acc[base + o] += g;
                a0[base + o] += g * r0;
                a1[base + o] += g * r1;
                a2[base + o] += g * r2;
              }
            } else {
              for (std::size_t o = 0; o < dout; ++o) ab_acc[base + o] += fv * dyrow[o];
            }
          }
        }
      }
      if (want_b) {
        Real* __restrict db = nodes_[static_cast<std::size_t>(ab)].gradient.data();
        for (std::size_t u = 0; u < dd; ++u) db[u] += acc_b[u];
      }
      if (want_w) {
        Real* __restrict dw = nodes_[static_cast<std::size_t>(aw)].gradient.data();
        for (std::size_t u = 0; u < dd; ++u) {
          dw[u * 3 + 0] += acc_w[u];
          dw[u * 3 + 1] += acc_w[dd + u];
          dw[u * 3 + 2] += acc_w[2 * dd + u];
        }
      }
    });
    return finish(y);
  }

  NodeId relu(NodeId x) {
    NodeId y = fresh(shape(x), {x});
    const auto& xv = nodes_[static_cast<std::size_t>(x)].values;
    auto& yv = nodes_[static_cast<std::size_t>(y)].values;
    for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > Real(0) ? xv[i] : Real(0);
    set_backward(y, [this, x, y]() {
      if (!nodes_[static_cast<std::size_t>(x)].needs_grad) return;
      const auto& xv = nodes_[static_cast<std::size_t>(x)].values;
      const auto& dy = nodes_[static_cast<std::size_t>(y)].gradient;
      auto& dx = nodes_[static_cast<std::size_t>(x)].gradient;
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (xv[i] > Real(0)) dx[i] += dy[i];
    });
    return finish(y);
  }

  NodeId add(NodeId a, NodeId b) { return elementwise_binary(a, b, /*mul=*/false); }
  NodeId mul_elem(NodeId a, NodeId b) { return elementwise_binary(a, b, /*mul=*/true); }

  NodeId sub(NodeId a, NodeId b) {
    if (shape(a) != shape(b)) throw ShapeError("sub: shape mismatch");
    NodeId y = fresh(shape(a), {a, b});
    const auto& av = nodes_[static_cast<std::size_t>(a)].values;
    const auto& bv = nodes_[static_cast<std::size_t>(b)].values;
    auto& yv = nodes_[static_cast<std::size_t>(y)].values;
    for (std::size_t i = 0; i < av.size(); ++i) yv[i] = av[i] - bv[i];
    set_backward(y, [this, a, b, y]() {
      const auto& dy = nodes_[static_cast<std::size_t>(y)].gradient;
      if (nodes_[static_cast<std::size_t>(a)].needs_grad) {
        auto& da = nodes_[static_cast<std::size_t>(a)].gradient;
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (nodes_[static_cast<std::size_t>(b)].needs_grad) {
        auto& db = nodes_[static_cast<std::size_t>(b)].gradient;
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
      }
    });
    return finish(y);
  }

  // out[r] = x[rows[r]] for rank-2 x.
  NodeId gather_rows(NodeId x, std::vector<int> rows) {
    const auto& xs = shape(x);
    if (xs.size() != 2) throw ShapeError("gather_rows: expected rank 2");
    const std::size_t n = xs[0], d = xs[1];
    for (int r : rows)
      if (r < 0 || static_cast<std::size_t>(r) >= n) throw IndexError("gather_rows: row out of range");
    NodeId y = fresh({rows.size(), d}, {x});
    const Real* __restrict xp = nodes_[static_cast<std::size_t>(x)].values.data();
    Real* __restrict yp = nodes_[static_cast<std::size_t>(y)].values.data();
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) yp[r * d + c] = xp[static_cast<std::size_t>(rows[r]) * d + c];
    set_backward(y, [this, x, y, rows = std::move(rows), d]() {
      if (!nodes_[static_cast<std::size_t>(x)].needs_grad) return;
      const Real* __restrict dy = nodes_[static_cast<std::size_t>(y)].gradient.data();
      Real* __restrict dx = nodes_[static_cast<std::size_t>(x)].gradient.data();
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < d; ++c) dx[static_cast<std::size_t>(rows[r]) * d + c] += dy[r * d + c];
    });
    return finish(y);
  }

  // [a | b] along the last axis of two rank-2 nodes with equal row counts.
  NodeId concat_cols(NodeId a, NodeId b) {
    const auto& as = shape(a);
    const auto& bs = shape(b);
    if (as.size() != 2 || bs.size() != 2 || as[0] != bs[0])
      throw ShapeError("concat_cols: expected rank-2 operands with equal rows");
    const std::size_t rows = as[0], da = as[1], db = bs[1];
    NodeId y = fresh({rows, da + db}, {a, b});
    const Real* __restrict ap = nodes_[static_cast<std::size_t>(a)].values.data();
    const Real* __restrict bp = nodes_[static_cast<std::size_t>(b)].values.data();
    Real* __restrict yp = nodes_[static_cast<std::size_t>(y)].values.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < da; ++c) yp[r * (da + db) + c] = ap[r * da + c];
      for (std::size_t c = 0; c < db; ++c) yp[r * (da + db) + da + c] = bp[r * db + c];
    }
    set_backward(y, [this, a, b, y, rows, da, db]() {
      const Real* __restrict dy = nodes_[static_cast<std::size_t>(y)].gradient.data();
      if (nodes_[static_cast<std::size_t>(a)].needs_grad) {
        Real* __restrict dap = nodes_[static_cast<std::size_t>(a)].gradient.data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < da; ++c) dap[r * da + c] += dy[r * (da + db) + c];
      }
      if (nodes_[static_cast<std::size_t>(b)].needs_grad) {
        Real* __restrict dbp = nodes_[static_cast<std::size_t>(b)].gradient.data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < db; ++c) dbp[r * db + c] += dy[r * (da + db) + da + c];
      }
    });
    return finish(y);
  }

  // Reduces one axis. max routes the gradient to the first-encountered
  // argmax; sum/mean accumulate in ascending index order.
  NodeId reduce(NodeId x, int axis, ReduceMode mode) {
    const auto xs = shape(x);
    if (axis < 0 || static_cast<std::size_t>(axis) >= xs.size())
      throw ShapeError("reduce: axis out of range");
    const std::size_t n = xs[static_cast<std::size_t>(axis)];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < static_cast<std::size_t>(axis); ++i) outer *= xs[i];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < xs.size(); ++i) inner *= xs[i];
    std::vector<std::size_t> yshape;
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (i != static_cast<std::size_t>(axis)) yshape.push_back(xs[i]);
    return reduce_impl(x, outer, n, inner, mode, std::move(yshape));
  }

  // Rank-2 convenience: x is (outer*group_size) x d, reduced over the
  // group_size blocks to outer x d.
  NodeId reduce_grouped(NodeId x, std::size_t group_size, ReduceMode mode) {
    const auto& xs = shape(x);
    if (xs.size() != 2 || group_size == 0 || xs[0] % group_size != 0)
      throw ShapeError("reduce_grouped: rows must be a multiple of the group size");
    return reduce_impl(x, xs[0] / group_size, group_size, xs[1], mode, {xs[0] / group_size, xs[1]});
  }

 private:
  NodeId reduce_impl(NodeId x, std::size_t outer, std::size_t n, std::size_t inner, ReduceMode mode,
                     std::vector<std::size_t> yshape) {
    if (n == 0) throw EmptyReduction("reduce: empty axis");
    NodeId y = fresh(std::move(yshape), {x});
    auto argmax = std::make_shared<std::vector<int>>();
    const Real* __restrict xp = nodes_[static_cast<std::size_t>(x)].values.data();
    Real* __restrict yp = nodes_[static_cast<std::size_t>(y)].values.data();
    if (mode == ReduceMode::max) {
      argmax->assign(outer * inner, 0);
      int* __restrict am = argmax->data();
      for (std::size_t o = 0; o < outer; ++o) {
        const Real* __restrict base = xp + o * n * inner;
        Real* __restrict yrow = yp + o * inner;
        int* __restrict arow = am + o * inner;
        for (std::size_t c = 0; c < inner; ++c) yrow[c] = base[c];
        for (std::size_t k = 1; k < n; ++k) {
          const Real* __restrict slice = base + k * inner;
          for (std::size_t c = 0; c < inner; ++c)
            if (slice[c] > yrow[c]) {
              yrow[c] = slice[c];
              arow[c] = static_cast<int>(k);
            }
        }
      }
    } else {
      const Real scale = mode == ReduceMode::mean ? Real(1) / static_cast<Real>(n) : Real(1);
      for (std::size_t o = 0; o < outer; ++o) {
        const Real* __restrict base = xp + o * n * inner;
        Real* __restrict yrow = yp + o * inner;
        for (std::size_t c = 0; c < inner; ++c) yrow[c] = base[c];
        for (std::size_t k = 1; k < n; ++k) {
          const Real* __restrict slice = base + k * inner;
          for (std::size_t c = 0; c < inner; ++c) yrow[c] += slice[c];
        }
        if (mode == ReduceMode::mean)
          for (std::size_t c = 0; c < inner; ++c) yrow[c] *= scale;
      }
    }
    set_backward(y, [this, x, y, mode, outer, n, inner, argmax]() {
      if (!nodes_[static_cast<std::size_t>(x)].needs_grad) return;
      const Real* __restrict dy = nodes_[static_cast<std::size_t>(y)].gradient.data();
      Real* __restrict dx = nodes_[static_cast<std::size_t>(x)].gradient.data();
      if (mode == ReduceMode::max) {
        const int* __restrict am = argmax->data();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t c = 0; c < inner; ++c)
            dx[(o * n + static_cast<std::size_t>(am[o * inner + c])) * inner + c] += dy[o * inner + c];
      } else {
        const Real scale = mode == ReduceMode::mean ? Real(1) / static_cast<Real>(n) : Real(1);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t k = 0; k < n; ++k) {
            const Real* __restrict dyrow = dy + o * inner;
            Real* __restrict dxrow = dx + (o * n + k) * inner;
            for (std::size_t c = 0; c < inner; ++c) dxrow[c] += scale * dyrow[c];
          }
      }
    });
    return finish(y);
  }

 public:
  // Per-row kernel contraction for continuous convolutions:
  //   y[r][o] = sum_k w[r][k*dout + o] * f[r][k], k ascending.
  // The kernel entries are laid out neighbor-feature-major (k slow, o fast).
  NodeId kernel_apply(NodeId w, NodeId f, std::size_t dout) {
    const auto& ws = shape(w);
    const auto& fs = shape(f);
    if (ws.size() != 2 || fs.size() != 2 || ws[0] != fs[0])
      throw ShapeError("kernel_apply: expected rank-2 operands with equal rows");
    const std::size_t rows = ws[0], din = fs[1];
    if (ws[1] != din * dout) throw ShapeError("kernel_apply: kernel width must be d_in*d_out");
    NodeId y = fresh({rows, dout}, {w, f});
    const Real* __restrict wp = nodes_[static_cast<std::size_t>(w)].values.data();
    const Real* __restrict fp = nodes_[static_cast<std::size_t>(f)].values.data();
    Real* __restrict yp = nodes_[static_cast<std::size_t>(y)].values.data();
    for (std::size_t r = 0; r < rows; ++r) {
      Real* __restrict yrow = yp + r * dout;
      for (std::size_t o = 0; o < dout; ++o) yrow[o] = Real(0);
      const Real* __restrict frow = fp + r * din;
      const Real* __restrict wrow = wp + r * din * dout;
      for (std::size_t k = 0; k < din; ++k) {
        const Real fv = frow[k];
        const Real* __restrict wk = wrow + k * dout;
        for (std::size_t o = 0; o < dout; ++o) yrow[o] += fv * wk[o];
      }
    }
    set_backward(y, [this, w, f, y, rows, din, dout]() {
      const Real* __restrict dy = nodes_[static_cast<std::size_t>(y)].gradient.data();
      const Real* __restrict wp = nodes_[static_cast<std::size_t>(w)].values.data();
      const Real* __restrict fp = nodes_[static_cast<std::size_t>(f)].values.data();
      if (nodes_[static_cast<std::size_t>(w)].needs_grad) {
        Real* __restrict dw = nodes_[static_cast<std::size_t>(w)].gradient.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* __restrict dyrow = dy + r * dout;
          const Real* __restrict frow = fp + r * din;
          Real* __restrict dwrow = dw + r * din * dout;
          for (std::size_t k = 0; k < din; ++k) {
            const Real fv = frow[k];
            Real* __restrict dwk = dwrow + k * dout;
            for (std::size_t o = 0; o < dout; ++o) dwk[o] += fv * dyrow[o];
          }
        }
      }
      if (nodes_[static_cast<std::size_t>(f)].needs_grad) {
        Real* __restrict df = nodes_[static_cast<std::size_t>(f)].gradient.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* __restrict dyrow = dy + r * dout;
          const Real* __restrict wrow = wp + r * din * dout;
          Real* __restrict dfrow = df + r * din;
          for (std::size_t k = 0; k < din; ++k) dfrow[k] += blocked_dot(dyrow, wrow + k * dout, dout);
        }
      }
    });
    return finish(y);
  }

  // out[r][c] = x[r][c] * s[r][0]
  NodeId scale_rows(NodeId x, NodeId s) {
    const auto& xs = shape(x);
    const auto& ss = shape(s);
    if (xs.size() != 2 || ss.size() != 2 || ss[1] != 1 || ss[0] != xs[0])
      throw ShapeError("scale_rows: expected x rank 2 and s of shape rows x 1");
    const std::size_t rows = xs[0], d = xs[1];
    NodeId y = fresh({rows, d}, {x, s});
    const Real* __restrict xp = nodes_[static_cast<std::size_t>(x)].values.data();
    const Real* __restrict sp = nodes_[static_cast<std::size_t>(s)].values.data();
    Real* __restrict yp = nodes_[static_cast<std::size_t>(y)].values.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const Real sv = sp[r];
      for (std::size_t c = 0; c < d; ++c) yp[r * d + c] = xp[r * d + c] * sv;
    }
    set_backward(y, [this, x, s, y, rows, d]() {
      const Real* __restrict dy = nodes_[static_cast<std::size_t>(y)].gradient.data();
      const Real* __restrict xp = nodes_[static_cast<std::size_t>(x)].values.data();
      const Real* __restrict sp = nodes_[static_cast<std::size_t>(s)].values.data();
      if (nodes_[static_cast<std::size_t>(x)].needs_grad) {
        Real* __restrict dx = nodes_[static_cast<std::size_t>(x)].gradient.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const Real sv = sp[r];
          for (std::size_t c = 0; c < d; ++c) dx[r * d + c] += dy[r * d + c] * sv;
        }
      }
      if (nodes_[static_cast<std::size_t>(s)].needs_grad) {
        Real* __restrict ds = nodes_[static_cast<std::size_t>(s)].gradient.data();
        for (std::size_t r = 0; r < rows; ++r) ds[r] += blocked_dot(dy + r * d, xp + r * d, d);
      }
    });
    return finish(y);
  }

  // out[r] = sum_i weights[r][i].second * x[weights[r][i].first]
  NodeId weighted_gather(NodeId x, std::vector<std::vector<std::pair<int, Real>>> weights) {
    const auto& xs = shape(x);
    if (xs.size() != 2) throw ShapeError("weighted_gather: expected rank 2");
    const std::size_t n = xs[0], d = xs[1];
    for (const auto& row : weights)
      for (const auto& [idx, w] : row)
        if (idx < 0 || static_cast<std::size_t>(idx) >= n) throw IndexError("weighted_gather: index out of range");
    NodeId y = fresh({weights.size(), d}, {x});
    const Real* __restrict xp = nodes_[static_cast<std::size_t>(x)].values.data();
    Real* __restrict yp = nodes_[static_cast<std::size_t>(y)].values.data();
    for (std::size_t r = 0; r < weights.size(); ++r) {
      Real* __restrict yrow = yp + r * d;
      for (std::size_t c = 0; c < d; ++c) yrow[c] = Real(0);
      for (const auto& [idx, wv] : weights[r]) {
        const Real* __restrict xrow = xp + static_cast<std::size_t>(idx) * d;
        for (std::size_t c = 0; c < d; ++c) yrow[c] += wv * xrow[c];
      }
    }
    set_backward(y, [this, x, y, weights = std::move(weights), d]() {
      if (!nodes_[static_cast<std::size_t>(x)].needs_grad) return;
      const Real* __restrict dy = nodes_[static_cast<std::size_t>(y)].gradient.data();
      Real* __restrict dx = nodes_[static_cast<std::size_t>(x)].gradient.data();
      for (std::size_t r = 0; r < weights.size(); ++r)
        for (const auto& [idx, wv] : weights[r]) {
          Real* __restrict dxrow = dx + static_cast<std::size_t>(idx) * d;
          const Real* __restrict dyrow = dy + r * d;
          for (std::size_t c = 0; c < d; ++c) dxrow[c] += wv * dyrow[c];
        }
    });
    return finish(y);
  }

  // Mean over the batch of -log softmax(logits)[label]; max-subtracted.
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
    const auto& ls = shape(logits);
    if (ls.size() != 2) throw ShapeError("softmax_cross_entropy: expected rank-2 logits");
    const std::size_t batch = ls[0], classes = ls[1];
    if (labels.size() != batch) throw ShapeError("softmax_cross_entropy: one label per row required");
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= classes)
        throw LabelError("softmax_cross_entropy: label " + std::to_string(l) + " out of range");
    NodeId y = fresh({}, {logits});
    const Real* __restrict lp = nodes_[static_cast<std::size_t>(logits)].values.data();
    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      const Real* __restrict row = lp + i * classes;
      Real m = row[0];
      for (std::size_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
      Real z = Real(0);
      for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - m);
      total += static_cast<double>(std::log(z) - (row[static_cast<std::size_t>(labels[i])] - m));
    }
    nodes_[static_cast<std::size_t>(y)].values[0] = static_cast<Real>(total / static_cast<double>(batch));
    set_backward(y, [this, logits, y, labels = std::move(labels), batch, classes]() {
      if (!nodes_[static_cast<std::size_t>(logits)].needs_grad) return;
      const Real g = nodes_[static_cast<std::size_t>(y)].gradient[0] / static_cast<Real>(batch);
      const Real* __restrict lp = nodes_[static_cast<std::size_t>(logits)].values.data();
      Real* __restrict dl = nodes_[static_cast<std::size_t>(logits)].gradient.data();
      for (std::size_t i = 0; i < batch; ++i) {
        const Real* __restrict row = lp + i * classes;
        Real m = row[0];
        for (std::size_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
        Real z = Real(0);
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - m);
        for (std::size_t c = 0; c < classes; ++c) {
          Real p = std::exp(row[c] - m) / z;
          if (c == static_cast<std::size_t>(labels[i])) p -= Real(1);
          dl[i * classes + c] += g * p;
        }
      }
    });
    return finish(y);
  }

  // Reverse accumulation from a scalar root over the whole tape. Gradients
  // are reset first; creation order is the topological order. Only nodes on
  // a differentiable path carry gradient storage.
  void backward(NodeId root) {
    auto& rn = nodes_[static_cast<std::size_t>(root)];
    if (rn.numel() != 1) throw ShapeError("backward: root must be scalar");
    for (auto& n : nodes_)
      if (n.needs_grad) n.gradient.assign(n.values.size(), Real(0));
    if (rn.gradient.empty()) rn.gradient.assign(1, Real(0));
    rn.gradient[0] = Real(1);
    for (NodeId id = root; id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward_fn && n.needs_grad) n.backward_fn();
    }
  }

 private:
  NodeId leaf(std::vector<std::size_t> shape, std::vector<Real> values, bool needs_grad) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    if (values.size() != n) throw ShapeError("leaf: values do not match shape");
    DiffNode<Real> node;
    node.shape = std::move(shape);
    node.values = std::move(values);
    node.needs_grad = needs_grad;
    nodes_.push_back(std::move(node));
    NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    return finish(id);
  }

  NodeId fresh(std::vector<std::size_t> shape, std::vector<NodeId> parents) {
    DiffNode<Real> node;
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    node.shape = std::move(shape);
    node.values.assign(n, Real(0));
    for (NodeId p : parents)
      if (nodes_[static_cast<std::size_t>(p)].needs_grad) node.needs_grad = true;
    node.parents = std::move(parents);
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void set_backward(NodeId id, std::function<void()> fn) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = std::move(fn);
  }

  NodeId finish(NodeId id) {
    if (check_finite_) {
      for (Real v : nodes_[static_cast<std::size_t>(id)].values)
        if (!std::isfinite(static_cast<double>(v)))
          throw NonFiniteValue("forward pass produced a non-finite value");
    }
    return id;
  }

  // Four-lane dot product; used only on gradient paths where accumulation
  // order is unconstrained.
  static Real blocked_dot(const Real* __restrict a, const Real* __restrict b, std::size_t n) {
    Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4) {
      s0 += a[k] * b[k];
      s1 += a[k + 1] * b[k + 1];
      s2 += a[k + 2] * b[k + 2];
      s3 += a[k + 3] * b[k + 3];
    }
    for (; k < n; ++k) s0 += a[k] * b[k];
    return (s0 + s1) + (s2 + s3);
  }

  NodeId elementwise_binary(NodeId a, NodeId b, bool mul) {
    if (shape(a) != shape(b)) throw ShapeError("elementwise op: shape mismatch");
    NodeId y = fresh(shape(a), {a, b});
    const auto& av = nodes_[static_cast<std::size_t>(a)].values;
    const auto& bv = nodes_[static_cast<std::size_t>(b)].values;
    auto& yv = nodes_[static_cast<std::size_t>(y)].values;
    for (std::size_t i = 0; i < av.size(); ++i) yv[i] = mul ? av[i] * bv[i] : av[i] + bv[i];
    set_backward(y, [this, a, b, y, mul]() {
      const auto& dy = nodes_[static_cast<std::size_t>(y)].gradient;
      const auto& av = nodes_[static_cast<std::size_t>(a)].values;
      const auto& bv = nodes_[static_cast<std::size_t>(b)].values;
      if (nodes_[static_cast<std::size_t>(a)].needs_grad) {
        auto& da = nodes_[static_cast<std::size_t>(a)].gradient;
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += mul ? dy[i] * bv[i] : dy[i];
      }
      if (nodes_[static_cast<std::size_t>(b)].needs_grad) {
        auto& db = nodes_[static_cast<std::size_t>(b)].gradient;
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += mul ? dy[i] * av[i] : dy[i];
      }
    });
    return finish(y);
  }

  bool check_finite_;
  std::vector<DiffNode<Real>> nodes_;
};

enum class Activation { relu, none };

template <class Real>
struct MlpLayerParams {
  std::size_t d_in = 0, d_out = 0;
  std::vector<Real> weight;  // d_out x d_in, row-major
  std::vector<Real> bias;    // d_out
  Activation activation = Activation::none;
};

template <class Real>
struct MlpParams {
  std::vector<MlpLayerParams<Real>> layers;

  std::size_t d_in() const { return layers.front().d_in; }
  std::size_t d_out() const { return layers.back().d_out; }

  void validate() const {
    if (layers.empty()) throw ConfigError("MlpParams: no layers");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
      if (layers[i].d_out != layers[i + 1].d_in)
        throw ConfigError("MlpParams: layer dimensions do not chain");
  }
};

// Uniform in +-sqrt(6/(d_in+d_out)), biases zero, final layer linear.
template <class Real>
MlpParams<Real> make_mlp(const std::vector<std::size_t>& dims, Rng& rng) {
  if (dims.size() < 2) throw ConfigError("make_mlp: need at least input and output dims");
  MlpParams<Real> mlp;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    MlpLayerParams<Real> layer;
    layer.d_in = dims[i];
    layer.d_out = dims[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[i] + dims[i + 1]));
    layer.weight.resize(layer.d_in * layer.d_out);
    for (Real& w : layer.weight) w = static_cast<Real>(rng.uniform(-bound, bound));
    layer.bias.assign(layer.d_out, Real(0));
    layer.activation = (i + 2 < dims.size()) ? Activation::relu : Activation::none;
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

// Graph-side handle of an MLP: parameter node ids in tape order.
template <class Real>
struct MlpNodes {
  struct Layer {
    NodeId weight, bias;
    Activation activation;
    std::size_t d_in, d_out;
  };
  std::vector<Layer> layers;
};

template <class Real>
MlpNodes<Real> bind_mlp(Tape<Real>& tape, const MlpParams<Real>& mlp, bool trainable = true) {
  mlp.validate();
  MlpNodes<Real> nodes;
  for (const auto& layer : mlp.layers) {
    NodeId w = trainable ? tape.param({layer.d_out, layer.d_in}, layer.weight)
                         : tape.constant({layer.d_out, layer.d_in}, layer.weight);
    NodeId b = trainable ? tape.param({layer.d_out}, layer.bias)
                         : tape.constant({layer.d_out}, layer.bias);
    nodes.layers.push_back({w, b, layer.activation, layer.d_in, layer.d_out});
  }
  return nodes;
}

template <class Real>
NodeId mlp_forward(Tape<Real>& tape, const MlpNodes<Real>& mlp, NodeId x) {
  if (tape.shape(x).size() != 2 || tape.shape(x)[1] != mlp.layers.front().d_in)
    throw ShapeError("mlp_forward: input width does not match first layer");
  NodeId h = x;
  for (const auto& layer : mlp.layers)
    h = tape.affine(h, layer.weight, layer.bias, layer.activation == Activation::relu);
  return h;
}

template <class Real>
NodeId mlp_forward(Tape<Real>& tape, const MlpParams<Real>& mlp, NodeId x) {
  return mlp_forward(tape, bind_mlp(tape, mlp), x);
}

template <class Real>
struct AdamState {
  std::vector<Real> m, v;
  long long step = 0;
};

// Standard bias-corrected Adam on a flat parameter block.
template <class Real>
void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState<Real>& state,
               double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), Real(0));
    state.v.assign(params.size(), Real(0));
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state size mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    const double m = beta1 * static_cast<double>(state.m[i]) + (1.0 - beta1) * g;
    const double v = beta2 * static_cast<double>(state.v[i]) + (1.0 - beta2) * g * g;
    state.m[i] = static_cast<Real>(m);
    state.v[i] = static_cast<Real>(v);
    params[i] -= static_cast<Real>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
  }
}

// Central differences against the analytic gradient of f. f fills *grad with
// df/dx when grad is non-null. Returns the max relative error
// |a-n| / max(1e-8, |a|+|n|).
template <class F>
double gradient_check(F&& f, std::vector<double> x, double h) {
  if (h <= 0.0) throw ConfigError("gradient_check: step must be positive");
  std::vector<double> analytic(x.size(), 0.0);
  f(x, &analytic);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x, nullptr);
    x[i] = keep - h;
    const double fm = f(x, nullptr);
    x[i] = keep;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max(1e-8, std::fabs(analytic[i]) + std::fabs(numeric));
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace gpx

#endif  // GPOINTX_DIFF_HPP_
