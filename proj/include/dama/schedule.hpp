#pragma once

#include <cmath>
#include <cstdint>

#include "dama/errors.hpp"

namespace dama {

// Linear warmup from 0 to base_lr, then cosine decay to 0.
struct LrSchedule {
    double base_lr = 1.5e-4;
    std::int64_t warmup_steps = 0;
    std::int64_t total_steps = 1;
};

inline double lr_at(std::int64_t step, const LrSchedule& s) {
    if (step < 0) throw ContractError("lr_at: negative step");
    if (s.warmup_steps > 0 && step < s.warmup_steps)
        return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    const std::int64_t decay_span = s.total_steps - s.warmup_steps;
    if (decay_span <= 0) return s.base_lr;
    const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(decay_span);
    return s.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, progress)));
}

// EMA coefficient, cosine-scheduled from 0.996 at step 0 to 1.0 at the
// final step: lambda(t) = 1 - (1 - 0.996) * (1 + cos(pi * t / T)) / 2.
inline double lambda_at(std::int64_t step, std::int64_t total_steps) {
    if (step < 0) throw ContractError("lambda_at: negative step");
    constexpr double kBase = 0.996;
    if (total_steps <= 0) return 1.0;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return 1.0 - (1.0 - kBase) * (1.0 + std::cos(3.14159265358979323846 * t)) / 2.0;
}

}  // namespace dama
