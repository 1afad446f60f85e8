#include "ssnn/evaluate.hpp"

#include <chrono>
#include <cmath>

#include "ssnn/oracle.hpp"
#include "ssnn/training.hpp"

namespace ssnn {

LatentPath decode_posterior(const Sequence& x, const InferenceParams& phi, bool no_self_transitions) {
    Rng rng(0);
    SampleOptions opts;
    opts.zero_noise = true;
    opts.no_self_transitions = no_self_transitions;
    return sample_posterior_path(x, phi, Temperature(1.0), rng, opts).hard;
}

EvalReport evaluate(const GenerativeParams& theta, const InferenceParams& phi, const Dataset& dataset,
                    const EvalOptions& options) {
    if (dataset.empty()) throw contract_error("evaluate: dataset is empty");
    if (dataset.obs_dim() != theta.dims().m)
        throw contract_error("evaluate: dataset obs dim " + std::to_string(dataset.obs_dim()) +
                             " != model m " + std::to_string(theta.dims().m));
    if (options.elbo_samples < 1) throw contract_error("evaluate: elbo_samples must be >= 1");

    auto started = std::chrono::steady_clock::now();
    const ModelDims& dm = theta.dims();

    EvalReport report;
    report.elbo_samples = options.elbo_samples;

    for (const Sequence& seq : dataset.sequences) {
        SequenceEval ev;
        ev.id = seq.id;

        std::int64_t dp_cost = static_cast<std::int64_t>(dm.K) * dm.M * seq.length();
        bool oracle_ok = !options.skip_oracle && dp_cost <= 10'000'000;

        if (seq.truth) {
            LatentPath pred = oracle_ok ? map_segmentation(seq, theta)
                                        : decode_posterior(seq, phi, theta.no_self_transitions());
            ev.decoded_by_oracle = oracle_ok;
            ev.has_error = true;
            ev.error_rate = segmentation_error(pred, *seq.truth);
        } else if (options.require_error) {
            throw std::runtime_error("evaluate: sequence '" + seq.id +
                                     "' has no ground-truth path but an error rate was requested");
        }

        PosteriorTables tables = compute_posterior_tables(seq, phi);
        Rng rng(derive_seed(options.seed, hash_str(seq.id), 0xe7a1));
        SampleOptions sample_opts;
        sample_opts.no_self_transitions = theta.no_self_transitions();
        double sum = 0.0, sum_sq = 0.0;
        for (int s = 0; s < options.elbo_samples; ++s) {
            RelaxedPath path = sample_posterior_path(tables, Temperature(1.0), rng, sample_opts);
            double term = elbo_term(seq, path, theta);
            sum += term;
            sum_sq += term * term;
        }
        int n = options.elbo_samples;
        ev.elbo_mean = sum / n;
        double var = std::max(0.0, sum_sq / n - ev.elbo_mean * ev.elbo_mean);
        ev.elbo_stderr = n > 1 ? std::sqrt(var / n) : 0.0;

        if (oracle_ok) {
            ev.has_oracle = true;
            ev.oracle_ll = exact_log_likelihood(seq, theta);
        }
        report.per_sequence.push_back(std::move(ev));
    }

    report.evaluated = static_cast<int>(report.per_sequence.size());
    int n_err = 0, n_oracle = 0;
    for (const SequenceEval& ev : report.per_sequence) {
        report.elbo_mean += ev.elbo_mean;
        if (ev.has_error) {
            report.error_mean += ev.error_rate;
            ++n_err;
        }
        if (ev.has_oracle) {
            report.oracle_ll_mean += ev.oracle_ll;
            ++n_oracle;
        }
    }
    report.elbo_mean /= report.evaluated;
    if (n_err > 0) {
        report.has_error = true;
        report.error_mean /= n_err;
        for (const SequenceEval& ev : report.per_sequence)
            if (ev.has_error)
                report.error_std += (ev.error_rate - report.error_mean) * (ev.error_rate - report.error_mean);
        report.error_std = std::sqrt(report.error_std / n_err);
    }
    if (n_oracle > 0) {
        report.has_oracle = true;
        report.oracle_ll_mean /= n_oracle;
    }

    if (options.probe_targets) {
        const Dataset& targets = *options.probe_targets;
        std::int64_t total = 0;
        int r = targets.obs_dim();
        for (const Sequence& seq : dataset.sequences) total += seq.length();
        Tensor features(Shape{static_cast<int>(total), 2 * dm.e});
        Tensor target_mat(Shape{static_cast<int>(total), r});
        std::int64_t row = 0;
        for (const Sequence& seq : dataset.sequences) {
            const Sequence* match = nullptr;
            for (const Sequence& cand : targets.sequences)
                if (cand.id == seq.id) {
                    match = &cand;
                    break;
                }
            if (!match || match->length() != seq.length())
                throw schema_error("evaluate: probe targets missing or misaligned for sequence '" + seq.id + "'");
            PosteriorTables tables = compute_posterior_tables(seq, phi);
            for (int t = 0; t < seq.length(); ++t, ++row) {
                for (int j = 0; j < 2 * dm.e; ++j) features.at(static_cast<int>(row), j) = tables.hhat.at(t, j);
                for (int j = 0; j < r; ++j) target_mat.at(static_cast<int>(row), j) = match->x.at(t, j);
            }
        }
        report.probe_r2 = r2_probe(features, target_mat).r2;
    }

    report.runtime_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace ssnn
