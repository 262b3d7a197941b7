// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "deskt5/schedule.hpp"

namespace dt = deskt5;

namespace {

dt::ScheduleSpec isr_spec(double base = 1.0, std::int64_t warmup = 10000) {
    dt::ScheduleSpec s;
    s.kind = dt::ScheduleKind::isr;
    s.base_lr = base;
    s.warmup_steps = warmup;
    s.total_steps = 65536;
    return s;
}

dt::ScheduleSpec cosine_spec(double peak, double final, std::int64_t warmup, std::int64_t total) {
    dt::ScheduleSpec s;
    s.kind = dt::ScheduleKind::cosine;
    s.base_lr = peak;
    s.final_lr = final;
    s.warmup_steps = warmup;
    s.total_steps = total;
    return s;
}

}  // namespace

TEST(IsrSchedule, WarmupClampAndBoundary) {
    const auto s = isr_spec();
    EXPECT_DOUBLE_EQ(dt::isr_lr(0, s), 0.01);
    EXPECT_DOUBLE_EQ(dt::isr_lr(9999, s), 0.01);
    EXPECT_DOUBLE_EQ(dt::isr_lr(10000, s), 0.01);
}

TEST(IsrSchedule, ExactPowerOfTwoHorizon) {
    const auto s = isr_spec();
    EXPECT_DOUBLE_EQ(dt::isr_lr(65536, s), 1.0 / 256.0);
    EXPECT_DOUBLE_EQ(dt::isr_lr(65536, s), 0.00390625);
}

TEST(IsrSchedule, ZeroWarmupZeroStepGuard) {
    auto s = isr_spec(1.0, 0);
    EXPECT_THROW(dt::isr_lr(0, s), dt::ValueError);
    EXPECT_DOUBLE_EQ(dt::isr_lr(4, s), 0.5);
    EXPECT_THROW(dt::isr_lr(-1, s), dt::ValueError);
}

TEST(IsrSchedule, MonotoneNonIncreasingAfterWarmup) {
    const auto s = isr_spec();
    double prev = dt::isr_lr(s.warmup_steps, s);
    for (std::int64_t step = s.warmup_steps + 1; step <= s.warmup_steps + 2000; ++step) {
        const double lr = dt::isr_lr(step, s);
        EXPECT_LE(lr, prev);
        prev = lr;
    }
}

TEST(CosineSchedule, AnchorsAndMidpoint) {
    const auto s = cosine_spec(0.02, 0.001, 1000, 9000);
    EXPECT_DOUBLE_EQ(dt::cosine_lr(0, s), 0.0);
    EXPECT_DOUBLE_EQ(dt::cosine_lr(500, s), 0.01);
    EXPECT_DOUBLE_EQ(dt::cosine_lr(1000, s), 0.02);
    EXPECT_DOUBLE_EQ(dt::cosine_lr(9000, s), 0.001);
    EXPECT_NEAR(dt::cosine_lr(5000, s), (0.02 + 0.001) / 2.0, 1e-15);
}

TEST(CosineSchedule, ClampsPastTotal) {
    const auto s = cosine_spec(0.02, 0.001, 1000, 9000);
    EXPECT_DOUBLE_EQ(dt::cosine_lr(9001, s), 0.001);
    EXPECT_DOUBLE_EQ(dt::cosine_lr(1000000, s), 0.001);
}

TEST(CosineSchedule, ContinuityAtWarmupBoundary) {
    const auto s = cosine_spec(0.02, 0.001, 1000, 9000);
    EXPECT_NEAR(dt::cosine_lr(999, s), dt::cosine_lr(1000, s), 0.02 / 1000.0 + 1e-12);
    // the closed forms agree exactly at the boundary
    EXPECT_NEAR(s.base_lr * 1.0, s.final_lr + 0.5 * (s.base_lr - s.final_lr) * 2.0, 1e-12);
}

TEST(CosineSchedule, SymmetricAboutMidpoint) {
    const auto s = cosine_spec(0.02, 0.001, 1000, 9000);
    for (std::int64_t k = 0; k <= 4000; k += 37) {
        const double a = dt::cosine_lr(s.warmup_steps + k, s);
        const double b = dt::cosine_lr(s.total_steps - k, s);
        EXPECT_NEAR(a + b, s.base_lr + s.final_lr, 1e-12);
    }
}

TEST(CosineSchedule, MonotoneNonIncreasingAfterWarmup) {
    const auto s = cosine_spec(0.02, 0.001, 1000, 9000);
    double prev = dt::cosine_lr(s.warmup_steps, s);
    for (std::int64_t step = s.warmup_steps + 1; step <= s.total_steps + 10; ++step) {
        const double lr = dt::cosine_lr(step, s);
        EXPECT_LE(lr, prev + 1e-15);
        prev = lr;
    }
}

TEST(ConstantSchedule, WarmupThenFlat) {
    dt::ScheduleSpec s;
    s.kind = dt::ScheduleKind::constant;
    s.base_lr = 0.5;
    s.warmup_steps = 100;
    s.total_steps = 1000;
    EXPECT_DOUBLE_EQ(dt::constant_lr(0, s), 0.0);
    EXPECT_DOUBLE_EQ(dt::constant_lr(100, s), 0.5);
    EXPECT_DOUBLE_EQ(dt::constant_lr(2000, s), 0.5);
}

TEST(ScheduleSpec, ValidationCatchesBadFields) {
    dt::ScheduleSpec s;
    s.warmup_steps = 10;
    s.total_steps = 5;
    EXPECT_THROW(s.validate(), dt::ConfigError);
    s.total_steps = 20;
    s.base_lr = -1.0;
    EXPECT_THROW(s.validate(), dt::ConfigError);
    s.base_lr = 1.0;
    EXPECT_NO_THROW(s.validate());
}

TEST(ScheduleDispatch, MatchesKind) {
    auto s = cosine_spec(0.02, 0.001, 1000, 9000);
    EXPECT_DOUBLE_EQ(dt::schedule_lr(1000, s), 0.02);
    s.kind = dt::ScheduleKind::isr;
    EXPECT_DOUBLE_EQ(dt::schedule_lr(1000, s), s.base_lr / std::sqrt(1000.0));
    EXPECT_EQ(dt::schedule_kind_from_string("cosine"), dt::ScheduleKind::cosine);
    EXPECT_THROW(dt::schedule_kind_from_string("linear"), dt::ConfigError);
}
