// Copyright (c) 2026, the deskt5 authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "deskt5/error.hpp"

namespace deskt5 {

enum class ScheduleKind { isr, cosine, constant };

inline const char* to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::isr: return "isr";
        case ScheduleKind::cosine: return "cosine";
        case ScheduleKind::constant: return "constant";
    }
    throw InternalError("unknown schedule kind");
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "isr") return ScheduleKind::isr;
    if (s == "cosine") return ScheduleKind::cosine;
    if (s == "constant") return ScheduleKind::constant;
    throw ConfigError("unknown schedule '" + s + "' (expected isr, cosine, or constant)");
}

/// Learning-rate schedule. `base_lr` is the ISR numerator; cosine and
/// constant read it as the post-warmup peak.
struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::isr;
    double base_lr = 1.0;
    double final_lr = 0.0;  // cosine floor
    std::int64_t warmup_steps = 10000;
    std::int64_t total_steps = 65536;

    void validate() const {
        if (base_lr < 0 || final_lr < 0) throw ConfigError("schedule: learning rates must be >= 0");
        if (warmup_steps < 0 || total_steps < 0) throw ConfigError("schedule: step counts must be >= 0");
        if (warmup_steps > total_steps)
            throw ConfigError("schedule: warmup_steps " + std::to_string(warmup_steps) + " exceeds total_steps " +
                              std::to_string(total_steps));
    }
};

/// base_lr / sqrt(max(step, warmup_steps)).
inline double isr_lr(std::int64_t step, const ScheduleSpec& s) {
    if (step < 0) throw ValueError("isr_lr: negative step");
    const std::int64_t floor_step = std::max(step, s.warmup_steps);
    if (floor_step == 0) throw ValueError("isr_lr: step 0 with zero warmup divides by zero");
    return s.base_lr / std::sqrt(static_cast<double>(floor_step));
}

/// Linear warmup to the peak, then a half cosine down to final_lr; steps
/// past total_steps clamp to final_lr.
inline double cosine_lr(std::int64_t step, const ScheduleSpec& s) {
    if (step < 0) throw ValueError("cosine_lr: negative step");
    if (step < s.warmup_steps)
        return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    if (step >= s.total_steps && step > s.warmup_steps) return s.final_lr;
    if (s.total_steps == s.warmup_steps) return s.base_lr;
    const double progress =
        static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
    return s.final_lr + 0.5 * (s.base_lr - s.final_lr) * (1.0 + std::cos(progress * 3.14159265358979323846));
}

/// Linear warmup, then flat at the peak forever.
inline double constant_lr(std::int64_t step, const ScheduleSpec& s) {
    if (step < 0) throw ValueError("constant_lr: negative step");
    if (step < s.warmup_steps)
        return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return s.base_lr;
}

inline double schedule_lr(std::int64_t step, const ScheduleSpec& s) {
    switch (s.kind) {
        case ScheduleKind::isr: return isr_lr(step, s);
        case ScheduleKind::cosine: return cosine_lr(step, s);
        case ScheduleKind::constant: return constant_lr(step, s);
    }
    throw InternalError("unknown schedule kind");
}

}  // namespace deskt5
