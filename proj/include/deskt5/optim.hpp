// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Optimizer steps. All arithmetic runs in 64-bit regardless of the stored
// Real so float training uses the same update math as the double oracles.
// Each *_step advances the shared counter t once, then updates every named
// parameter in place from its accumulated gradient; a parameter without a
// gradient buffer is treated as having zero gradient.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deskt5/error.hpp"
#include "deskt5/tensor.hpp"

namespace deskt5 {

enum class OptimizerKind { adamw, adamw_rms, adafactor };

inline const char* to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::adamw: return "adamw";
        case OptimizerKind::adamw_rms: return "adamw_rms";
        case OptimizerKind::adafactor: return "adafactor";
    }
    throw InternalError("unknown optimizer kind");
}

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "adamw") return OptimizerKind::adamw;
    if (s == "adamw_rms") return OptimizerKind::adamw_rms;
    if (s == "adafactor") return OptimizerKind::adafactor;
    throw ConfigError("unknown optimizer '" + s + "' (expected adamw, adamw_rms, or adafactor)");
}

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double rms_eps = 1e-3;  // learning-rate scale floor, RMS variant only

    void validate() const {
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("adamw: betas must lie in [0,1)");
        if (eps < 0) throw ConfigError("adamw: eps must be >= 0");
        if (rms_eps <= 0) throw ConfigError("adamw: rms_eps must be > 0");
    }
};

struct AdafactorHyper {
    double eps1 = 1e-30;          // added to squared gradients
    double eps2 = 1e-3;           // parameter-scale floor
    double clip_threshold = 1.0;  // update RMS ceiling d
    double beta2_exponent = 0.8;  // decay 1 - t^-c

    void validate() const {
        if (eps1 <= 0) throw ConfigError("adafactor: eps1 must be > 0");
        if (eps2 <= 0) throw ConfigError("adafactor: eps2 must be > 0");
        if (clip_threshold <= 0) throw ConfigError("adafactor: clip_threshold must be > 0");
        if (beta2_exponent <= 0 || beta2_exponent > 1)
            throw ConfigError("adafactor: beta2 exponent must lie in (0,1]");
    }
};

/// Per-parameter accumulators plus the shared step counter. Slots are
/// created lazily on the first step; a state belongs to one optimizer kind
/// for its whole life.
template <class Real>
struct OptimizerState {
    struct Slot {
        std::vector<double> m, v;      // AdamW first/second moment, or full v for 1-d Adafactor
        std::vector<double> row, col;  // factored second moment, parameters with >= 2 dims
    };
    std::int64_t t = 0;
    std::map<std::string, Slot> slots;
};

/// Root mean square of all entries.
template <class Real>
double rms(const Tensor<Real>& x) {
    if (x.numel() == 0) throw ValueError("rms of an empty tensor is undefined");
    double ss = 0;
    for (Real v : x.values()) ss += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(ss / static_cast<double>(x.numel()));
}

namespace detail {

template <class Real>
inline void check_gradient_finite(const std::string& name, const std::vector<Real>& g) {
    for (Real v : g)
        if (!std::isfinite(static_cast<double>(v)))
            throw DivergenceError(name, "non-finite gradient entry");
}

template <class Real>
inline void check_param_finite(const std::string& name, const Tensor<Real>& w) {
    if (!w.all_finite()) throw DivergenceError(name, "non-finite parameter after update");
}

// Shared AdamW core; `lr` already carries any per-tensor scaling.
template <class Real>
inline void adamw_update(const std::string& name, Tensor<Real>& w,
                         typename OptimizerState<Real>::Slot& slot, const AdamHyper& h, double lr,
                         std::int64_t t) {
    const std::size_t n = static_cast<std::size_t>(w.numel());
    if (slot.m.empty()) {
        slot.m.assign(n, 0.0);
        slot.v.assign(n, 0.0);
    }
    if (slot.m.size() != n)
        throw DimensionError("optimizer state for '" + name + "' holds " + std::to_string(slot.m.size()) +
                             " entries, parameter has " + std::to_string(n));
    const bool has_grad = w.has_grad();
    if (has_grad) check_gradient_finite(name, w.grad_view());
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = has_grad ? static_cast<double>(w.grad_view()[i]) : 0.0;
        slot.m[i] = h.beta1 * slot.m[i] + (1.0 - h.beta1) * g;
        slot.v[i] = h.beta2 * slot.v[i] + (1.0 - h.beta2) * g * g;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        const double denom = std::sqrt(vhat) + h.eps;
        const double wv = static_cast<double>(w.values()[i]);
        const double step = (denom > 0 ? mhat / denom : 0.0) + h.weight_decay * wv;
        w.values()[i] = static_cast<Real>(wv - lr * step);
    }
    check_param_finite(name, w);
}

}  // namespace detail

/// Decoupled-weight-decay Adam with bias correction.
template <class Real>
void adamw_step(NamedParams<Real>& params, OptimizerState<Real>& state, const AdamHyper& h, double lr) {
    h.validate();
    state.t += 1;
    for (auto& [name, w] : params) detail::adamw_update(name, w, state.slots[name], h, lr, state.t);
}

/// AdamW with the learning rate of each parameter tensor scaled by
/// max(rms_eps, rms(W)) of its pre-update value. One-dimensional parameters
/// get the same treatment, with the rms_eps floor keeping their scale sane.
template <class Real>
void adamw_rms_step(NamedParams<Real>& params, OptimizerState<Real>& state, const AdamHyper& h, double lr) {
    h.validate();
    state.t += 1;
    for (auto& [name, w] : params) {
        const double scale = std::max(h.rms_eps, rms(w));
        detail::adamw_update(name, w, state.slots[name], h, lr * scale, state.t);
    }
}

/// Adafactor with factored second moments for parameters of two or more
/// dimensions (factoring the trailing two, per leading slice), full second
/// moments for vectors, update clipping, and relative step sizing by
/// max(eps2, rms(W)).
template <class Real>
void adafactor_step(NamedParams<Real>& params, OptimizerState<Real>& state, const AdafactorHyper& h, double lr) {
    h.validate();
    state.t += 1;
    const double beta2 = 1.0 - std::pow(static_cast<double>(state.t), -h.beta2_exponent);
    for (auto& [name, w] : params) {
        auto& slot = state.slots[name];
        const std::size_t n = static_cast<std::size_t>(w.numel());
        const bool has_grad = w.has_grad();
        if (has_grad) detail::check_gradient_finite(name, w.grad_view());
        const auto g_at = [&](std::size_t i) {
            return has_grad ? static_cast<double>(w.grad_view()[i]) : 0.0;
        };
        const double wscale = std::max(h.eps2, rms(w));

        std::vector<double> u(n);
        if (w.ndim() >= 2) {
            const std::int64_t r = w.dim(w.ndim() - 2);
            const std::int64_t c = w.dim(w.ndim() - 1);
            const std::int64_t slices = w.numel() / (r * c);
            if (slot.row.empty()) {
                slot.row.assign(static_cast<std::size_t>(slices * r), 0.0);
                slot.col.assign(static_cast<std::size_t>(slices * c), 0.0);
            }
            if (slot.row.size() != static_cast<std::size_t>(slices * r))
                throw DimensionError("optimizer state for '" + name + "' does not match parameter shape " +
                                     shape_str(w.shape()));
            for (std::int64_t s = 0; s < slices; ++s) {
                double* R = slot.row.data() + s * r;
                double* C = slot.col.data() + s * c;
                const std::size_t base = static_cast<std::size_t>(s * r * c);
                for (std::int64_t i = 0; i < r; ++i) {
                    double rs = 0;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const double gv = g_at(base + static_cast<std::size_t>(i * c + j));
                        rs += gv * gv + h.eps1;
                    }
                    R[i] = beta2 * R[i] + (1.0 - beta2) * rs;
                }
                for (std::int64_t j = 0; j < c; ++j) {
                    double cs = 0;
                    for (std::int64_t i = 0; i < r; ++i) {
                        const double gv = g_at(base + static_cast<std::size_t>(i * c + j));
                        cs += gv * gv + h.eps1;
                    }
                    C[j] = beta2 * C[j] + (1.0 - beta2) * cs;
                }
                double rsum = 0;
                for (std::int64_t i = 0; i < r; ++i) rsum += R[i];
                if (!(rsum > 0)) throw DivergenceError(name, "factored second moment collapsed to zero");
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j) {
                        const std::size_t at = base + static_cast<std::size_t>(i * c + j);
                        const double vhat = R[i] * C[j] / rsum;
                        u[at] = g_at(at) / std::sqrt(vhat);
                    }
            }
        } else {
            if (slot.v.empty()) slot.v.assign(n, 0.0);
            if (slot.v.size() != n)
                throw DimensionError("optimizer state for '" + name + "' does not match parameter shape " +
                                     shape_str(w.shape()));
            for (std::size_t i = 0; i < n; ++i) {
                const double gv = g_at(i);
                slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * (gv * gv + h.eps1);
                u[i] = gv / std::sqrt(slot.v[i]);
            }
        }

        double uss = 0;
        for (double x : u) uss += x * x;
        const double urms = n ? std::sqrt(uss / static_cast<double>(n)) : 0.0;
        const double clip = std::max(1.0, urms / h.clip_threshold);
        const double factor = lr * wscale / clip;
        for (std::size_t i = 0; i < n; ++i)
            w.values()[i] = static_cast<Real>(static_cast<double>(w.values()[i]) - factor * u[i]);
        detail::check_param_finite(name, w);
    }
}

/// Single entry point used by the trainer.
template <class Real>
void optimizer_step(OptimizerKind kind, NamedParams<Real>& params, OptimizerState<Real>& state,
                    const AdamHyper& adam, const AdafactorHyper& adafactor, double lr) {
    switch (kind) {
        case OptimizerKind::adamw: adamw_step(params, state, adam, lr); return;
        case OptimizerKind::adamw_rms: adamw_rms_step(params, state, adam, lr); return;
        case OptimizerKind::adafactor: adafactor_step(params, state, adafactor, lr); return;
    }
    throw InternalError("unknown optimizer kind");
}

/// Scales every gradient by max_norm/norm when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
template <class Real>
double clip_global_norm(NamedParams<Real>& params, double max_norm) {
    if (max_norm <= 0) throw ValueError("clip_global_norm: max_norm must be > 0");
    double ss = 0;
    for (auto& [name, w] : params) {
        if (!w.has_grad()) continue;
        for (Real g : w.grad_view()) {
            const double gv = static_cast<double>(g);
            if (!std::isfinite(gv)) throw DivergenceError(name, "non-finite gradient entry");
            ss += gv * gv;
        }
    }
    const double norm = std::sqrt(ss);
    if (!std::isfinite(norm)) throw DivergenceError("<global-norm>", "gradient norm overflowed");
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& [name, w] : params) {
            (void)name;
            if (!w.has_grad()) continue;
            for (Real& g : w.grad()) g = static_cast<Real>(static_cast<double>(g) * scale);
        }
    }
    return norm;
}

}  // namespace deskt5
