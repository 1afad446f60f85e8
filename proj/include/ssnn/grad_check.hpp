#pragma once

#include <functional>

#include "ssnn/tape.hpp"

namespace ssnn {

// Builds a scalar loss on the given tape from the current parameter values.
// Must be deterministic: any randomness has to be frozen by the caller.
using LossBuilder = std::function<ad::Var(ad::Tape&, const ParamStore&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    int worst_entry = -1;
};

// Central finite differences against reverse-mode gradients.
// Relative error per entry: |analytic - fd| / max(1, |fd|).
GradCheckReport grad_check_report(const LossBuilder& loss_fn, ParamStore& params, double step);

inline double grad_check(const LossBuilder& loss_fn, ParamStore& params, double step) {
    return grad_check_report(loss_fn, params, step).max_rel_error;
}

}  // namespace ssnn
