// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable primitives over Tensor<Real>. Every op validates shapes,
// computes its value eagerly, and (when recording) pushes one backward
// closure onto the tape. Gradients accumulate with +=; the caller owns
// zeroing between steps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "deskt5/tensor.hpp"

#ifndef DESKT5_NO_BLAS
#include <cblas.h>
#endif

namespace deskt5 {

namespace detail {

template <class Real>
inline Real* grad_buf(const std::shared_ptr<TensorImpl<Real>>& t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), Real(0));
    return t->grad.data();
}

#ifndef DESKT5_NO_BLAS
inline void gemm_raw(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                     double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
                     double beta, double* c, std::int64_t ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda),
                b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm_raw(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                     float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
                     float beta, float* c, std::int64_t ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda),
                b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}
#else
// Reference kernel for builds without a BLAS. Fixed summation order, so
// results stay deterministic run to run.
template <class Real>
inline void gemm_raw(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                     Real alpha, const Real* a, std::int64_t lda, const Real* b, std::int64_t ldb,
                     Real beta, Real* c, std::int64_t ldc) {
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
            const Real av = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
            if (av == Real(0)) continue;
            for (std::int64_t j = 0; j < n; ++j)
                c[i * ldc + j] += av * (trans_b ? b[j * ldb + p] : b[p * ldb + j]);
        }
    }
}
#endif

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

/// a + b. Shapes must match exactly, or `a` may carry one extra leading
/// batch dimension over which `b` is broadcast.
template <class Real>
Tensor<Real> add(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    const bool broadcast = a.ndim() == b.ndim() + 1 &&
                           std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin(), b.shape().end());
    if (!broadcast && a.shape() != b.shape())
        throw DimensionError("add: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));

    Tensor<Real> out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    const std::int64_t bn = b.numel();
    for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + bv[bn ? i % bn : 0];

    if (detail::grad_enabled(tape, {&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([ai, bi, oi, bn] {
            if (oi->grad.empty()) return;
            const std::int64_t n = static_cast<std::int64_t>(oi->grad.size());
            if (ai->requires_grad) ai->accumulate_grad(oi->grad.data(), n);
            if (bi->requires_grad && bn > 0) {
                Real* gb = detail::grad_buf(bi);
                for (std::int64_t i = 0; i < n; ++i) gb[i % bn] += oi->grad[static_cast<std::size_t>(i)];
            }
        });
    }
    return out;
}

/// Elementwise a * b, with the same leading-batch broadcast rule as add().
template <class Real>
Tensor<Real> multiply(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    const bool broadcast = a.ndim() == b.ndim() + 1 &&
                           std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin(), b.shape().end());
    if (!broadcast && a.shape() != b.shape())
        throw DimensionError("multiply: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));

    Tensor<Real> out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    const std::int64_t bn = b.numel();
    for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] * bv[bn ? i % bn : 0];

    if (detail::grad_enabled(tape, {&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([ai, bi, oi, bn] {
            if (oi->grad.empty() || bn == 0) return;
            const std::int64_t n = static_cast<std::int64_t>(oi->grad.size());
            if (ai->requires_grad) {
                Real* ga = detail::grad_buf(ai);
                for (std::int64_t i = 0; i < n; ++i)
                    ga[i] += oi->grad[static_cast<std::size_t>(i)] * bi->data[static_cast<std::size_t>(i % bn)];
            }
            if (bi->requires_grad) {
                Real* gb = detail::grad_buf(bi);
                for (std::int64_t i = 0; i < n; ++i)
                    gb[i % bn] += oi->grad[static_cast<std::size_t>(i)] * ai->data[static_cast<std::size_t>(i)];
            }
        });
    }
    return out;
}

/// c * a for a plain scalar c.
template <class Real>
Tensor<Real> scale(Tape<Real>& tape, const Tensor<Real>& a, Real c) {
    Tensor<Real> out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out.values()[i] = c * a.values()[i];
    if (detail::grad_enabled(tape, {&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([ai, oi, c] {
            if (oi->grad.empty() || !ai->requires_grad) return;
            Real* ga = detail::grad_buf(ai);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) ga[i] += c * oi->grad[i];
        });
    }
    return out;
}

/// Sum of all entries, as a scalar tensor.
template <class Real>
Tensor<Real> sum(Tape<Real>& tape, const Tensor<Real>& a) {
    Real s = 0;
    for (Real x : a.values()) s += x;
    Tensor<Real> out = Tensor<Real>::scalar(s);
    if (detail::grad_enabled(tape, {&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([ai, oi] {
            if (oi->grad.empty() || !ai->requires_grad) return;
            Real* ga = detail::grad_buf(ai);
            const Real g = oi->grad[0];
            for (std::size_t i = 0; i < ai->data.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// Matrix product. Accepts [m,k]x[k,n], [B,m,k]x[k,n] (b shared across the
/// batch), and [B,m,k]x[B,k,n] (pairwise). Backward follows dA = dC.B^T,
/// dB = A^T.dC per slice.
template <class Real>
Tensor<Real> matmul(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    const int an = a.ndim(), bn = b.ndim();
    const auto bad = [&] {
        return DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    };
    std::int64_t batch = 1, m = 0, k = 0, n = 0;
    enum class Mode { plain, shared_b, batched } mode;
    if (an == 2 && bn == 2) {
        mode = Mode::plain;
        m = a.dim(0), k = a.dim(1), n = b.dim(1);
        if (b.dim(0) != k) throw bad();
    } else if (an == 3 && bn == 2) {
        mode = Mode::shared_b;
        batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
        if (b.dim(0) != k) throw bad();
    } else if (an == 3 && bn == 3) {
        mode = Mode::batched;
        batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
        if (b.dim(0) != batch || b.dim(1) != k) throw bad();
    } else {
        throw bad();
    }

    Shape out_shape = (mode == Mode::plain) ? Shape{m, n} : Shape{batch, m, n};
    Tensor<Real> out(out_shape);
    const Real* ap = a.values().data();
    const Real* bp = b.values().data();
    Real* op = out.values().data();
    if (m && n && k) {
        if (mode == Mode::batched) {
            for (std::int64_t s = 0; s < batch; ++s)
                detail::gemm_raw(false, false, m, n, k, Real(1), ap + s * m * k, k, bp + s * k * n, n, Real(0),
                                 op + s * m * n, n);
        } else {
            // shared_b collapses to one gemm over batch*m rows
            detail::gemm_raw(false, false, batch * m, n, k, Real(1), ap, k, bp, n, Real(0), op, n);
        }
    }

    if (detail::grad_enabled(tape, {&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([ai, bi, oi, mode, batch, m, k, n] {
            if (oi->grad.empty() || !m || !n || !k) return;
            const Real* go = oi->grad.data();
            if (mode == Mode::batched) {
                if (ai->requires_grad) {
                    Real* ga = detail::grad_buf(ai);
                    for (std::int64_t s = 0; s < batch; ++s)
                        detail::gemm_raw(false, true, m, k, n, Real(1), go + s * m * n, n, bi->data.data() + s * k * n,
                                         n, Real(1), ga + s * m * k, k);
                }
                if (bi->requires_grad) {
                    Real* gb = detail::grad_buf(bi);
                    for (std::int64_t s = 0; s < batch; ++s)
                        detail::gemm_raw(true, false, k, n, m, Real(1), ai->data.data() + s * m * k, k, go + s * m * n,
                                         n, Real(1), gb + s * k * n, n);
                }
            } else {
                const std::int64_t rows = batch * m;
                if (ai->requires_grad)
                    detail::gemm_raw(false, true, rows, k, n, Real(1), go, n, bi->data.data(), n, Real(1),
                                     detail::grad_buf(ai), k);
                if (bi->requires_grad)
                    detail::gemm_raw(true, false, k, n, rows, Real(1), ai->data.data(), k, go, n, Real(1),
                                     detail::grad_buf(bi), n);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layout
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::int64_t> contiguous_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size());
    std::int64_t acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Walks src linearly; dst offset computed through permuted strides.
// mode 0 writes, mode 1 accumulates.
template <class Real>
inline void permute_pass(const Real* src, Real* dst, const Shape& src_shape, const std::vector<int>& perm, int mode) {
    const std::size_t nd = src_shape.size();
    Shape dst_shape(nd);
    for (std::size_t d = 0; d < nd; ++d) dst_shape[d] = src_shape[static_cast<std::size_t>(perm[d])];
    const auto dst_strides = contiguous_strides(dst_shape);
    // stride of src axis d in the destination layout
    std::vector<std::int64_t> axis_stride(nd);
    for (std::size_t d = 0; d < nd; ++d) axis_stride[static_cast<std::size_t>(perm[d])] = dst_strides[d];

    std::vector<std::int64_t> idx(nd, 0);
    const std::int64_t total = shape_numel(src_shape);
    std::int64_t dst_off = 0;
    for (std::int64_t i = 0; i < total; ++i) {
        if (mode == 0)
            dst[dst_off] = src[i];
        else
            dst[dst_off] += src[i];
        for (std::size_t d = nd; d-- > 0;) {
            idx[d] += 1;
            dst_off += axis_stride[d];
            if (idx[d] < src_shape[d]) break;
            dst_off -= axis_stride[d] * src_shape[d];
            idx[d] = 0;
        }
    }
}

}  // namespace detail

/// Permutes axes: out.shape[d] == x.shape[perm[d]].
template <class Real>
Tensor<Real> transpose(Tape<Real>& tape, const Tensor<Real>& x, const std::vector<int>& perm) {
    const std::size_t nd = x.shape().size();
    std::vector<bool> seen(nd, false);
    if (perm.size() != nd) throw DimensionError("transpose: permutation rank does not match tensor " + shape_str(x.shape()));
    for (int p : perm) {
        if (p < 0 || static_cast<std::size_t>(p) >= nd || seen[static_cast<std::size_t>(p)])
            throw DimensionError("transpose: invalid permutation for shape " + shape_str(x.shape()));
        seen[static_cast<std::size_t>(p)] = true;
    }
    Shape out_shape(nd);
    for (std::size_t d = 0; d < nd; ++d) out_shape[d] = x.dim(perm[d]);
    Tensor<Real> out(out_shape);

    if (out.numel()) detail::permute_pass(x.values().data(), out.values().data(), x.shape(), perm, 0);

    if (detail::grad_enabled(tape, {&x})) {
        out.set_requires_grad(true);
        // the gradient walk applies the inverse permutation
        std::vector<int> inv(nd);
        for (std::size_t d = 0; d < nd; ++d) inv[static_cast<std::size_t>(perm[d])] = static_cast<int>(d);
        auto xi = x.impl(), oi = out.impl();
        Shape oshape = out.shape();
        out.impl()->tape_id = tape.record([xi, oi, inv = std::move(inv), oshape] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            detail::permute_pass(oi->grad.data(), detail::grad_buf(xi), oshape, inv, 1);
        });
    }
    return out;
}

/// Copying reshape; element count must be preserved.
template <class Real>
Tensor<Real> reshape(Tape<Real>& tape, const Tensor<Real>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    Tensor<Real> out(std::move(new_shape), x.values());
    if (detail::grad_enabled(tape, {&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([xi, oi] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->accumulate_grad(oi->grad.data(), static_cast<std::int64_t>(oi->grad.size()));
        });
    }
    return out;
}

/// Concatenation along `axis`. All inputs must agree on every other extent.
template <class Real>
Tensor<Real> concatenate(Tape<Real>& tape, const std::vector<Tensor<Real>>& parts, int axis) {
    if (parts.empty()) throw ValueError("concatenate: empty input list");
    const auto& first = parts.front().shape();
    const std::size_t nd = first.size();
    if (axis < 0 || static_cast<std::size_t>(axis) >= nd)
        throw DimensionError("concatenate: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& t : parts) {
        if (t.shape().size() != nd)
            throw DimensionError("concatenate: rank mismatch " + shape_str(first) + " vs " + shape_str(t.shape()));
        for (std::size_t d = 0; d < nd; ++d)
            if (d != static_cast<std::size_t>(axis) && t.shape()[d] != first[d])
                throw DimensionError("concatenate: shape mismatch " + shape_str(first) + " vs " + shape_str(t.shape()));
        out_shape[static_cast<std::size_t>(axis)] += t.shape()[static_cast<std::size_t>(axis)];
    }
    Tensor<Real> out(out_shape);

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= first[static_cast<std::size_t>(d)];
    for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < nd; ++d) inner *= first[d];
    const std::int64_t out_row = out_shape[static_cast<std::size_t>(axis)] * inner;

    std::int64_t col_off = 0;
    std::vector<std::int64_t> offsets;
    for (const auto& t : parts) {
        offsets.push_back(col_off);
        const std::int64_t block = t.shape()[static_cast<std::size_t>(axis)] * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(t.values().data() + o * block, block, out.values().data() + o * out_row + col_off);
        col_off += block;
    }

    bool any_grad = false;
    for (const auto& t : parts) any_grad = any_grad || t.requires_grad();
    if (tape.recording() && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<detail::TensorImpl<Real>>> impls;
        std::vector<std::int64_t> blocks;
        for (const auto& t : parts) {
            impls.push_back(t.impl());
            blocks.push_back(t.shape()[static_cast<std::size_t>(axis)] * inner);
        }
        auto oi = out.impl();
        out.impl()->tape_id = tape.record([impls, blocks, offsets, oi, outer, out_row] {
            if (oi->grad.empty()) return;
            for (std::size_t p = 0; p < impls.size(); ++p) {
                if (!impls[p]->requires_grad) continue;
                Real* g = detail::grad_buf(impls[p]);
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t i = 0; i < blocks[p]; ++i)
                        g[o * blocks[p] + i] += oi->grad[static_cast<std::size_t>(o * out_row + offsets[p] + i)];
            }
        });
    }
    return out;
}

/// Replaces entries where mask is nonzero with `value`; gradient flows only
/// through surviving entries.
template <class Real>
Tensor<Real> masked_fill(Tape<Real>& tape, const Tensor<Real>& x, const std::vector<std::uint8_t>& mask, Real value) {
    if (static_cast<std::int64_t>(mask.size()) != x.numel())
        throw DimensionError("masked_fill: mask length " + std::to_string(mask.size()) + " vs tensor " +
                             shape_str(x.shape()));
    Tensor<Real> out(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i)
        out.values()[i] = mask[static_cast<std::size_t>(i)] ? value : x.values()[i];
    if (detail::grad_enabled(tape, {&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([xi, oi, mask] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            Real* g = detail::grad_buf(xi);
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                if (!mask[i]) g[i] += oi->grad[i];
        });
    }
    return out;
}

/// Row lookup: out[i,:] = table[ids[i],:]. Backward scatter-adds into the
/// table, which is how embedding gradients stay sparse-friendly.
template <class Real>
Tensor<Real> embedding_gather(Tape<Real>& tape, const Tensor<Real>& table, const std::vector<std::int32_t>& ids) {
    if (table.ndim() != 2) throw DimensionError("embedding_gather: table must be 2-d, got " + shape_str(table.shape()));
    const std::int64_t rows = table.dim(0), width = table.dim(1);
    for (std::int32_t id : ids)
        if (id < 0 || id >= rows)
            throw IndexError("embedding_gather: id " + std::to_string(id) + " outside table of " + std::to_string(rows));
    Tensor<Real> out({static_cast<std::int64_t>(ids.size()), width});
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.values().data() + static_cast<std::int64_t>(ids[i]) * width, width,
                    out.values().data() + static_cast<std::int64_t>(i) * width);
    if (detail::grad_enabled(tape, {&table})) {
        out.set_requires_grad(true);
        auto ti = table.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([ti, oi, ids, width] {
            if (oi->grad.empty() || !ti->requires_grad) return;
            Real* g = detail::grad_buf(ti);
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::int64_t j = 0; j < width; ++j)
                    g[static_cast<std::int64_t>(ids[i]) * width + j] +=
                        oi->grad[static_cast<std::size_t>(static_cast<std::int64_t>(i) * width + j)];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

/// Gaussian error linear unit, tanh form.
template <class Real>
Tensor<Real> gelu(Tape<Real>& tape, const Tensor<Real>& x) {
    constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kCubic = 0.044715;
    Tensor<Real> out(x.shape());
    std::vector<Real> th(static_cast<std::size_t>(x.numel()));
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double v = static_cast<double>(x.values()[i]);
        const double t = std::tanh(kAlpha * (v + kCubic * v * v * v));
        th[static_cast<std::size_t>(i)] = static_cast<Real>(t);
        out.values()[i] = static_cast<Real>(0.5 * v * (1.0 + t));
    }
    if (detail::grad_enabled(tape, {&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([xi, oi, th = std::move(th)] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            Real* g = detail::grad_buf(xi);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                const double v = static_cast<double>(xi->data[i]);
                const double t = static_cast<double>(th[i]);
                const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kAlpha * (1.0 + 3.0 * kCubic * v * v);
                g[i] += static_cast<Real>(d) * oi->grad[i];
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> sigmoid(Tape<Real>& tape, const Tensor<Real>& x) {
    Tensor<Real> out(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i)
        out.values()[i] = static_cast<Real>(1.0 / (1.0 + std::exp(-static_cast<double>(x.values()[i]))));
    if (detail::grad_enabled(tape, {&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([xi, oi] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            Real* g = detail::grad_buf(xi);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                const Real y = oi->data[i];
                g[i] += y * (Real(1) - y) * oi->grad[i];
            }
        });
    }
    return out;
}

/// Softmax over the last dimension, max-subtracted for stability.
template <class Real>
Tensor<Real> softmax(Tape<Real>& tape, const Tensor<Real>& x) {
    if (x.ndim() == 0 || x.dim(x.ndim() - 1) == 0)
        throw DimensionError("softmax: empty last dimension in " + shape_str(x.shape()));
    const std::int64_t d = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.numel() / d;
    Tensor<Real> out(x.shape());
    const Real* xp = x.values().data();
    Real* op = out.values().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* xr = xp + r * d;
        Real* orow = op + r * d;
        Real m = xr[0];
        for (std::int64_t j = 1; j < d; ++j) m = std::max(m, xr[j]);
        double s = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double e = std::exp(static_cast<double>(xr[j] - m));
            orow[j] = static_cast<Real>(e);
            s += e;
        }
        const Real inv = static_cast<Real>(1.0 / s);
        for (std::int64_t j = 0; j < d; ++j) orow[j] *= inv;
    }
    if (detail::grad_enabled(tape, {&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([xi, oi, rows, d] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            Real* g = detail::grad_buf(xi);
            for (std::int64_t r = 0; r < rows; ++r) {
                const Real* y = oi->data.data() + r * d;
                const Real* gy = oi->grad.data() + r * d;
                double dot = 0;
                for (std::int64_t j = 0; j < d; ++j) dot += static_cast<double>(gy[j]) * static_cast<double>(y[j]);
                for (std::int64_t j = 0; j < d; ++j)
                    g[r * d + j] += y[j] * (gy[j] - static_cast<Real>(dot));
            }
        });
    }
    return out;
}

/// RMS normalization over the last dimension:
/// out = weight * x / sqrt(mean(x^2) + eps).
template <class Real>
Tensor<Real> rms_norm(Tape<Real>& tape, const Tensor<Real>& x, const Tensor<Real>& weight, Real eps) {
    if (x.ndim() == 0 || weight.ndim() != 1)
        throw DimensionError("rms_norm: need [...,d] input and [d] weight, got " + shape_str(x.shape()) + " and " +
                             shape_str(weight.shape()));
    const std::int64_t d = x.dim(x.ndim() - 1);
    if (d == 0 || d != weight.numel())
        throw DimensionError("rms_norm: last dimension of " + shape_str(x.shape()) + " vs weight " +
                             shape_str(weight.shape()));
    if (eps < Real(0)) throw ValueError("rms_norm: negative eps");
    const std::int64_t rows = x.numel() / d;
    Tensor<Real> out(x.shape());
    std::vector<Real> inv(static_cast<std::size_t>(rows));
    const Real* xp = x.values().data();
    const Real* wp = weight.values().data();
    Real* op = out.values().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        double ss = 0;
        const Real* xr = xp + r * d;
        for (std::int64_t j = 0; j < d; ++j) ss += static_cast<double>(xr[j]) * static_cast<double>(xr[j]);
        const Real iv = static_cast<Real>(1.0 / std::sqrt(ss / static_cast<double>(d) + static_cast<double>(eps)));
        inv[static_cast<std::size_t>(r)] = iv;
        for (std::int64_t j = 0; j < d; ++j) op[r * d + j] = wp[j] * xr[j] * iv;
    }
    if (detail::grad_enabled(tape, {&x, &weight})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), wi = weight.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([xi, wi, oi, inv = std::move(inv), rows, d] {
            if (oi->grad.empty()) return;
            const Real* xp2 = xi->data.data();
            const Real* wp2 = wi->data.data();
            Real* gx = xi->requires_grad ? detail::grad_buf(xi) : nullptr;
            Real* gw = wi->requires_grad ? detail::grad_buf(wi) : nullptr;
            for (std::int64_t r = 0; r < rows; ++r) {
                const Real* xr = xp2 + r * d;
                const Real* gy = oi->grad.data() + r * d;
                const double iv = static_cast<double>(inv[static_cast<std::size_t>(r)]);
                if (gx) {
                    double dot = 0;  // sum_k gy_k * w_k * x_k
                    for (std::int64_t j = 0; j < d; ++j)
                        dot += static_cast<double>(gy[j]) * static_cast<double>(wp2[j]) * static_cast<double>(xr[j]);
                    const double c = dot * iv * iv * iv / static_cast<double>(d);
                    for (std::int64_t j = 0; j < d; ++j)
                        gx[r * d + j] += static_cast<Real>(static_cast<double>(gy[j]) * static_cast<double>(wp2[j]) * iv -
                                                           static_cast<double>(xr[j]) * c);
                }
                if (gw)
                    for (std::int64_t j = 0; j < d; ++j)
                        gw[j] += static_cast<Real>(static_cast<double>(gy[j]) * static_cast<double>(xr[j]) * iv);
            }
        });
    }
    return out;
}

/// Inverted dropout with a caller-seeded mask. rate 0 returns the input
/// tensor unchanged.
template <class Real>
Tensor<Real> dropout(Tape<Real>& tape, const Tensor<Real>& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ValueError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (rate == 0.0) return x;
    Tensor<Real> out(x.shape());
    std::vector<Real> mask(static_cast<std::size_t>(x.numel()));
    const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        mask[static_cast<std::size_t>(i)] = rng.uniform() >= rate ? keep_scale : Real(0);
        out.values()[i] = x.values()[i] * mask[static_cast<std::size_t>(i)];
    }
    if (detail::grad_enabled(tape, {&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([xi, oi, mask = std::move(mask)] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            Real* g = detail::grad_buf(xi);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i] += mask[i] * oi->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

/// Mean negative log-likelihood over the non-ignored rows of [n,V] logits.
/// Backward distributes (softmax - onehot) / count to active rows.
template <class Real>
Tensor<Real> softmax_cross_entropy(Tape<Real>& tape, const Tensor<Real>& logits,
                                   const std::vector<std::int32_t>& targets, std::int32_t ignore_index) {
    if (logits.ndim() != 2) throw DimensionError("cross_entropy: logits must be [n,V], got " + shape_str(logits.shape()));
    const std::int64_t n = logits.dim(0), V = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != n)
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                             " rows");
    std::int64_t count = 0;
    for (std::int32_t t : targets) {
        if (t == ignore_index) continue;
        if (t < 0 || t >= V)
            throw IndexError("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " + std::to_string(V));
        ++count;
    }
    if (count == 0) throw ValueError("cross_entropy: every position ignored; mean loss undefined");

    std::vector<Real> probs(static_cast<std::size_t>(n * V));
    const Real* lp = logits.values().data();
    double total = 0;
    for (std::int64_t r = 0; r < n; ++r) {
        const Real* row = lp + r * V;
        Real m = row[0];
        for (std::int64_t j = 1; j < V; ++j) m = std::max(m, row[j]);
        double s = 0;
        for (std::int64_t j = 0; j < V; ++j) {
            const double e = std::exp(static_cast<double>(row[j] - m));
            probs[static_cast<std::size_t>(r * V + j)] = static_cast<Real>(e);
            s += e;
        }
        const double inv = 1.0 / s;
        for (std::int64_t j = 0; j < V; ++j) probs[static_cast<std::size_t>(r * V + j)] *= static_cast<Real>(inv);
        if (targets[static_cast<std::size_t>(r)] != ignore_index) {
            const double lse = static_cast<double>(m) + std::log(s);
            total += lse - static_cast<double>(row[targets[static_cast<std::size_t>(r)]]);
        }
    }
    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(total / static_cast<double>(count)));

    if (detail::grad_enabled(tape, {&logits})) {
        out.set_requires_grad(true);
        auto li = logits.impl(), oi = out.impl();
        out.impl()->tape_id = tape.record([li, oi, probs = std::move(probs), targets, ignore_index, n, V, count] {
            if (oi->grad.empty() || !li->requires_grad) return;
            Real* g = detail::grad_buf(li);
            const Real gscale = oi->grad[0] / static_cast<Real>(count);
            for (std::int64_t r = 0; r < n; ++r) {
                const std::int32_t t = targets[static_cast<std::size_t>(r)];
                if (t == ignore_index) continue;
                const Real* p = probs.data() + r * V;
                Real* gr = g + r * V;
                for (std::int64_t j = 0; j < V; ++j) gr[j] += gscale * p[j];
                gr[t] -= gscale;
            }
        });
    }
    return out;
}

}  // namespace deskt5
