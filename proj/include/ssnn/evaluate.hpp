#pragma once

#include <optional>

#include "ssnn/checkpoint.hpp"
#include "ssnn/data.hpp"
#include "ssnn/metrics.hpp"

namespace ssnn {

struct EvalOptions {
    int elbo_samples = 64;
    std::uint64_t seed = 0;
    bool require_error = false;   // fail when truth is missing
    bool skip_oracle = false;     // force posterior decoding
    std::optional<Dataset> probe_targets;  // per-frame regression targets
};

struct SequenceEval {
    std::string id;
    bool has_error = false;
    double error_rate = 0.0;
    double elbo_mean = 0.0;
    double elbo_stderr = 0.0;
    bool has_oracle = false;
    double oracle_ll = 0.0;
    bool decoded_by_oracle = false;
};

struct EvalReport {
    int report_version = 1;
    std::vector<SequenceEval> per_sequence;
    int evaluated = 0;
    bool has_error = false;
    double error_mean = 0.0;
    double error_std = 0.0;  // population std over sequences
    double elbo_mean = 0.0;
    bool has_oracle = false;
    double oracle_ll_mean = 0.0;
    std::vector<double> probe_r2;
    double runtime_ms = 0.0;
    int elbo_samples = 0;
};

// Per sequence: MAP decoding via the exact oracle when K*M*T fits the guard
// (greedy zero-noise posterior decoding otherwise), segmentation error against
// truth when present, a sample-mean ELBO, and the oracle log-likelihood when
// feasible. The dataset must already be normalized the way the model was
// trained.
EvalReport evaluate(const GenerativeParams& theta, const InferenceParams& phi, const Dataset& dataset,
                    const EvalOptions& options = {});

// Greedy posterior decoding (zero Gumbel noise).
LatentPath decode_posterior(const Sequence& x, const InferenceParams& phi, bool no_self_transitions = false);

}  // namespace ssnn
