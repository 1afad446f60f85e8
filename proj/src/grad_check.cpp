#include "ssnn/grad_check.hpp"

#include <cmath>

namespace ssnn {

namespace {

double eval_loss(const LossBuilder& loss_fn, const ParamStore& params) {
    ad::Tape tape;
    ad::Var loss = loss_fn(tape, params);
    const Tensor& v = tape.val(loss);
    if (v.numel() != 1) throw contract_error("grad_check: loss is not scalar, shape " + shape_str(v.shape()));
    return v[0];
}

}  // namespace

GradCheckReport grad_check_report(const LossBuilder& loss_fn, ParamStore& params, double step) {
    if (!(step > 0.0)) throw contract_error("grad_check: step must be positive");

    double v1 = eval_loss(loss_fn, params);
    double v2 = eval_loss(loss_fn, params);
    if (v1 != v2)
        throw contract_error("grad_check: loss_fn is not deterministic (" + std::to_string(v1) + " vs " +
                             std::to_string(v2) + ")");

    ad::Tape tape;
    ad::Var loss = loss_fn(tape, params);
    ad::Gradients analytic = tape.gradient(loss, params);

    GradCheckReport report;
    for (int slot = 0; slot < params.size(); ++slot) {
        Tensor saved = params.value(slot);
        Tensor work = saved;
        for (std::int64_t i = 0; i < saved.numel(); ++i) {
            work[i] = saved[i] + step;
            params.set(slot, work);
            double plus = eval_loss(loss_fn, params);
            work[i] = saved[i] - step;
            params.set(slot, work);
            double minus = eval_loss(loss_fn, params);
            work[i] = saved[i];
            params.set(slot, work);

            double fd = (plus - minus) / (2.0 * step);
            double rel = std::abs(analytic[slot][i] - fd) / std::max(1.0, std::abs(fd));
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = params.name(slot);
                report.worst_entry = static_cast<int>(i);
            }
        }
        params.set(slot, saved);
    }
    return report;
}

}  // namespace ssnn
