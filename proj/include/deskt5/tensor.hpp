// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "deskt5/error.hpp"
#include "deskt5/rng.hpp"

namespace deskt5 {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

template <class Real>
struct TensorImpl {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until a backward pass reaches this tensor
    bool requires_grad = false;
    std::int64_t tape_id = -1;

    void accumulate_grad(const Real* src, std::int64_t n) {
        if (grad.empty()) grad.assign(data.size(), Real(0));
        for (std::int64_t i = 0; i < n; ++i) grad[static_cast<std::size_t>(i)] += src[i];
    }
};

}  // namespace detail

/// Dense row-major tensor. Copies share storage (handle semantics); ops treat
/// tensors as immutable once they enter a graph. Gradients accumulate with +=
/// and are cleared by the caller between steps.
template <class Real>
class Tensor {
  public:
    using Impl = detail::TensorImpl<Real>;

    Tensor() : impl_(std::make_shared<Impl>()) {}

    /// Zero-filled tensor of the given shape.
    explicit Tensor(Shape shape) : impl_(std::make_shared<Impl>()) {
        validate_shape(shape);
        impl_->shape = std::move(shape);
        impl_->data.assign(static_cast<std::size_t>(shape_numel(impl_->shape)), Real(0));
    }

    Tensor(Shape shape, std::vector<Real> values) : impl_(std::make_shared<Impl>()) {
        validate_shape(shape);
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
    }

    static Tensor full(Shape shape, Real value) {
        Tensor t(std::move(shape));
        for (auto& x : t.impl_->data) x = value;
        return t;
    }

    static Tensor scalar(Real value) { return Tensor({1}, {value}); }

    /// Entries drawn from a truncated normal (+-2 sigma).
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (auto& x : t.impl_->data) x = static_cast<Real>(rng.truncated_normal(0.0, stddev));
        return t;
    }

    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

    std::vector<Real>& values() { return impl_->data; }
    const std::vector<Real>& values() const { return impl_->data; }

    Real item() const {
        if (numel() != 1) throw ValueError("item() on tensor with " + std::to_string(numel()) + " elements");
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }

    /// Gradient buffer, allocated as zeros on first access.
    std::vector<Real>& grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), Real(0));
        return impl_->grad;
    }
    const std::vector<Real>& grad_view() const { return impl_->grad; }

    /// Drops the gradient buffer; the next accumulation starts from zero.
    void zero_grad() { impl_->grad.clear(); }

    std::int64_t tape_id() const { return impl_->tape_id; }

    bool all_finite() const {
        for (Real x : impl_->data)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    const std::shared_ptr<Impl>& impl() const { return impl_; }

  private:
    static void validate_shape(const Shape& s) {
        for (auto d : s)
            if (d < 0) throw DimensionError("negative extent in shape " + shape_str(s));
    }

    std::shared_ptr<Impl> impl_;
};

/// Parameter list in a stable schema order; the names key optimizer slots
/// and checkpoint entries.
template <class Real>
using NamedParams = std::vector<std::pair<std::string, Tensor<Real>>>;

/// Records one backward closure per produced tensor, in execution order, so
/// reverse iteration is a valid topological order. A tape and the graph built
/// on it belong to a single thread.
template <class Real>
class Tape {
  public:
    bool recording() const { return recording_; }
    void set_recording(bool v) { recording_ = v; }

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    std::int64_t record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
        return static_cast<std::int64_t>(nodes_.size()) - 1;
    }

    /// Reverse-mode sweep from `loss`, seeding d(loss)/d(loss) = seed.
    /// Gradients accumulate into every reachable tensor with requires_grad.
    /// The supported accumulation pattern is one backward per forward graph
    /// (clear() between micro-batches): leaf grads then add up exactly.
    /// Re-running backward on the same graph also re-seeds intermediate
    /// cotangents, which compounds; it is not a way to scale gradients.
    void backward(const Tensor<Real>& loss, Real seed = Real(1)) {
        if (loss.numel() != 1)
            throw ValueError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        loss.impl()->accumulate_grad(&seed, 1);
        const std::int64_t start = loss.tape_id();
        if (start >= static_cast<std::int64_t>(nodes_.size()))
            throw InternalError("loss tape_id out of range");
        for (std::int64_t i = start; i >= 0; --i) nodes_[static_cast<std::size_t>(i)]();
    }

  private:
    std::vector<std::function<void()>> nodes_;
    bool recording_ = true;
};

namespace detail {

/// True when the op should participate in autodiff.
template <class Real>
inline bool grad_enabled(const Tape<Real>& tape, std::initializer_list<const Tensor<Real>*> inputs) {
    if (!tape.recording()) return false;
    for (const auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace detail

}  // namespace deskt5
