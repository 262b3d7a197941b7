// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "deskt5/ops.hpp"
#include "deskt5/rng.hpp"
#include "deskt5/tensor.hpp"

namespace dt = deskt5;
using Td = dt::Tensor<double>;

TEST(Rng, SameSeedSameStream) {
    dt::Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(Rng, UniformRange) {
    dt::Rng r(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}

TEST(Rng, BelowCoversRangeWithoutEscaping) {
    dt::Rng r(3);
    std::vector<int> hits(5, 0);
    for (int i = 0; i < 5000; ++i) {
        const std::uint64_t v = r.below(5);
        ASSERT_LT(v, 5u);
        hits[static_cast<std::size_t>(v)]++;
    }
    for (int h : hits) EXPECT_GT(h, 0);
}

TEST(Rng, ShuffleIsPermutation) {
    dt::Rng r(11);
    std::vector<int> v(257);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    r.shuffle(w);
    EXPECT_NE(v, w);
    std::sort(w.begin(), w.end());
    EXPECT_EQ(v, w);
}

TEST(Rng, SerializeRestoresMidStream) {
    dt::Rng a(99);
    for (int i = 0; i < 37; ++i) a.uniform();
    a.normal();  // leaves a cached Box-Muller spare in flight
    dt::Rng b = dt::Rng::deserialize(a.serialize());
    for (int i = 0; i < 64; ++i) {
        EXPECT_EQ(a.uniform(), b.uniform());
        EXPECT_EQ(a.normal(), b.normal());
        EXPECT_EQ(a.below(1000), b.below(1000));
    }
}

TEST(Rng, MixSeedSeparatesSalts) {
    EXPECT_NE(dt::mix_seed(1, 2), dt::mix_seed(1, 3));
    EXPECT_NE(dt::mix_seed(1, 2), dt::mix_seed(2, 2));
    EXPECT_EQ(dt::mix_seed(5, 9), dt::mix_seed(5, 9));
}

TEST(Rng, TruncatedNormalStaysInsideTwoSigma) {
    dt::Rng r(13);
    for (int i = 0; i < 20000; ++i) {
        const double z = r.truncated_normal(0.0, 0.05);
        EXPECT_LE(std::abs(z), 2.0 * 0.05 + 1e-12);
    }
}

TEST(Tensor, ShapeAndDataLengthMustAgree) {
    EXPECT_THROW(Td({2, 3}, {1.0, 2.0}), dt::DimensionError);
    EXPECT_THROW(Td({-1, 4}), dt::DimensionError);
    Td ok({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(ok.numel(), 4);
    EXPECT_EQ(ok.dim(1), 2);
}

TEST(Tensor, ItemRequiresSingleElement) {
    EXPECT_DOUBLE_EQ(Td::scalar(2.5).item(), 2.5);
    EXPECT_THROW(Td({3}).item(), dt::ValueError);
}

TEST(Tensor, GradBufferLifecycle) {
    Td t({2, 2}, {1, 2, 3, 4});
    EXPECT_FALSE(t.has_grad());
    t.grad()[0] = 7.0;
    EXPECT_TRUE(t.has_grad());
    t.zero_grad();
    EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, RandnDeterministicAndTruncated) {
    dt::Rng r1(21), r2(21);
    Td a = Td::randn({64}, r1, 0.3);
    Td b = Td::randn({64}, r2, 0.3);
    EXPECT_EQ(a.values(), b.values());
    for (double v : a.values()) EXPECT_LE(std::abs(v), 0.6 + 1e-12);
}

TEST(Tensor, AllFiniteDetectsNan) {
    Td t({2}, {1.0, 2.0});
    EXPECT_TRUE(t.all_finite());
    t.values()[1] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(t.all_finite());
}

TEST(Tape, SumBackwardIsAllOnes) {
    dt::Tape<double> tape;
    Td w({2, 3}, {1, -2, 3, 0.5, -0.5, 9});
    w.set_requires_grad(true);
    auto loss = dt::sum(tape, w);
    tape.backward(loss);
    for (double g : w.grad_view()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Tape, QuadraticBackward) {
    dt::Tape<double> tape;
    Td w({2}, {1.0, -2.0});
    w.set_requires_grad(true);
    auto loss = dt::sum(tape, dt::multiply(tape, w, w));
    tape.backward(loss);
    EXPECT_DOUBLE_EQ(w.grad_view()[0], 2.0);
    EXPECT_DOUBLE_EQ(w.grad_view()[1], -4.0);
}

TEST(Tape, BackwardRejectsNonScalarLoss) {
    dt::Tape<double> tape;
    Td w({2}, {1.0, 2.0});
    w.set_requires_grad(true);
    auto y = dt::scale(tape, w, 2.0);
    EXPECT_THROW(tape.backward(y), dt::ValueError);
}

// Micro-batch pattern: fresh forward graph per pass, leaf grads add up.
TEST(Tape, LeafGradsAccumulateAcrossFreshGraphs) {
    dt::Tape<double> tape;
    Td w({2}, {1.0, -2.0});
    w.set_requires_grad(true);
    for (int pass = 0; pass < 2; ++pass) {
        tape.clear();
        auto loss = dt::sum(tape, dt::multiply(tape, w, w));
        tape.backward(loss);
    }
    EXPECT_DOUBLE_EQ(w.grad_view()[0], 4.0);
    EXPECT_DOUBLE_EQ(w.grad_view()[1], -8.0);
    w.zero_grad();
    tape.clear();
    auto loss = dt::sum(tape, dt::multiply(tape, w, w));
    tape.backward(loss);
    EXPECT_DOUBLE_EQ(w.grad_view()[0], 2.0);
}

TEST(Tape, RecordingOffProducesNoNodes) {
    dt::Tape<double> tape;
    tape.set_recording(false);
    Td w({2}, {1.0, 2.0});
    w.set_requires_grad(true);
    auto y = dt::sum(tape, dt::multiply(tape, w, w));
    EXPECT_EQ(tape.size(), 0u);
    EXPECT_DOUBLE_EQ(y.item(), 5.0);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Tape, NoGradInputsRecordNothing) {
    dt::Tape<double> tape;
    Td a({2}, {1.0, 2.0});
    Td b({2}, {3.0, 4.0});
    auto y = dt::add(tape, a, b);
    EXPECT_EQ(tape.size(), 0u);
    EXPECT_FALSE(y.requires_grad());
}

// Identical seeds must reproduce gradients bit for bit.
TEST(Tape, BackwardIsBitwiseDeterministic) {
    auto run = [] {
        dt::Rng rng(1234);
        dt::Tape<double> tape;
        Td w1 = Td::randn({6, 5}, rng, 0.5);
        Td w2 = Td::randn({5, 4}, rng, 0.5);
        Td x = Td::randn({3, 6}, rng, 1.0);
        w1.set_requires_grad(true);
        w2.set_requires_grad(true);
        auto h = dt::gelu(tape, dt::matmul(tape, x, w1));
        auto y = dt::softmax(tape, dt::matmul(tape, h, w2));
        auto loss = dt::sum(tape, dt::multiply(tape, y, y));
        tape.backward(loss);
        std::vector<double> out = w1.grad_view();
        out.insert(out.end(), w2.grad_view().begin(), w2.grad_view().end());
        return out;
    };
    const auto g1 = run();
    const auto g2 = run();
    ASSERT_EQ(g1.size(), g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g1[i], g2[i]);
}
