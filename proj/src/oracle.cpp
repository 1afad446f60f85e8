#include "ssnn/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace ssnn {

namespace {

constexpr std::int64_t kDpGuard = 10'000'000;
constexpr std::int64_t kEnumGuard = 1'000'000;

void check_dims(const Sequence& x, const GenerativeParams& params, const char* op) {
    if (x.obs_dim() != params.dims().m)
        throw contract_error(std::string(op) + ": observation dim " + std::to_string(x.obs_dim()) +
                             " != m " + std::to_string(params.dims().m));
}

void check_dp_guard(const Sequence& x, const GenerativeParams& params, const char* op) {
    std::int64_t cost = static_cast<std::int64_t>(params.dims().K) * params.dims().M * x.length();
    if (cost > kDpGuard)
        throw resource_error(std::string(op) + ": K*M*T = " + std::to_string(cost) + " exceeds guard " +
                             std::to_string(kDpGuard));
}

// log sum_{delta >= r} p(d = delta | k), r 1-based; -inf when r > M.
Tensor duration_tails(const Tensor& log_dur_rows, int K, int M) {
    Tensor tails(Shape{K, M + 1});
    for (int k = 0; k < K; ++k) {
        double acc = neg_inf();
        tails.at(k, M) = neg_inf();
        for (int r = M; r >= 1; --r) {
            acc = log_add_exp(acc, log_dur_rows.at(k, r - 1));
            tails.at(k, r - 1) = acc;
        }
    }
    return tails;
}

}  // namespace

SegmentScoreTable compute_segment_scores(const Sequence& x, const GenerativeParams& params) {
    check_dims(x, params, "compute_segment_scores");
    const ModelDims& dm = params.dims();
    SegmentScoreTable table;
    table.T = x.length();
    table.M = dm.M;
    table.K = dm.K;
    table.e.assign(static_cast<size_t>(table.T) * table.M * table.K, neg_inf());
    for (int t = 0; t < table.T; ++t) {
        int max_len = std::min(dm.M, table.T - t);
        for (int k = 1; k <= dm.K; ++k) {
            SegmentScorer scorer(x, t, k, params);
            double acc = 0.0;
            for (int len = 1; len <= max_len; ++len) {
                acc += scorer.step();
                table.at(t, len, k) = acc;
            }
        }
    }
    return table;
}

std::int64_t count_valid_paths(int T, int K, int M, std::int64_t cap) {
    // f[s]: paths of the suffix starting with a boundary at s.
    std::vector<std::int64_t> f(static_cast<size_t>(T) + 1, 0);
    for (int s = T - 1; s >= 0; --s) {
        int remaining = T - s;
        std::int64_t total = 0;
        int censored = std::max(0, M - remaining + 1);  // choices of delta >= remaining
        total = censored;
        for (int delta = 1; delta <= std::min(M, remaining - 1); ++delta) {
            total += f[static_cast<size_t>(s + delta)];
            if (total >= cap) break;
        }
        total *= K;
        f[static_cast<size_t>(s)] = std::min(total, cap);
    }
    return f[0];
}

namespace {

void enumerate_paths(int T, int K, int M, int s, LatentPath& path,
                     const std::function<void(const LatentPath&)>& fn) {
    int remaining = T - s;
    for (int k = 1; k <= K; ++k) {
        for (int delta = 1; delta <= M; ++delta) {
            int fill = std::min(delta, remaining);
            for (int i = 0; i < fill; ++i) {
                path.z[static_cast<size_t>(s + i)] = k;
                path.d[static_cast<size_t>(s + i)] = delta - i;
            }
            if (delta < remaining)
                enumerate_paths(T, K, M, s + delta, path, fn);
            else
                fn(path);
        }
    }
}

}  // namespace

void for_each_valid_path(int T, int K, int M, const std::function<void(const LatentPath&)>& fn) {
    LatentPath path;
    path.z.assign(static_cast<size_t>(T), 0);
    path.d.assign(static_cast<size_t>(T), 0);
    enumerate_paths(T, K, M, 0, path, fn);
}

namespace {

// Mass of "a segment starts at s in state k" (init/transition factor folded
// in, this segment's duration and emissions not).
std::vector<double> forward_starts(const GenerativeParams& params, int T,
                                   const std::function<double(int, int, int)>& score,
                                   const Tensor& log_trans, const Tensor& log_dur) {
    int K = params.dims().K, M = params.dims().M;
    Tensor li = params.log_init();
    std::vector<double> A(static_cast<size_t>(T) * K, neg_inf());
    for (int k = 0; k < K; ++k) A[static_cast<size_t>(k)] = li[k];
    std::vector<double> C(static_cast<size_t>(K));
    std::vector<double> terms;
    for (int s = 1; s < T; ++s) {
        // C[k']: mass of a segment ending exactly at s-1 in state k'.
        for (int kp = 0; kp < K; ++kp) {
            terms.clear();
            for (int delta = 1; delta <= std::min(M, s); ++delta) {
                int start = s - delta;
                double a = A[static_cast<size_t>(start) * K + kp];
                if (a == neg_inf()) continue;
                terms.push_back(a + log_dur.at(kp, delta - 1) + score(start, delta, kp + 1));
            }
            C[static_cast<size_t>(kp)] = terms.empty() ? neg_inf() : log_sum_exp(terms);
        }
        for (int k = 0; k < K; ++k) {
            terms.clear();
            for (int kp = 0; kp < K; ++kp)
                if (C[static_cast<size_t>(kp)] != neg_inf())
                    terms.push_back(C[static_cast<size_t>(kp)] + log_trans.at(kp, k));
            A[static_cast<size_t>(s) * K + k] = terms.empty() ? neg_inf() : log_sum_exp(terms);
        }
    }
    return A;
}

double finish_forward(const std::vector<double>& A, const GenerativeParams& params, int T,
                      const std::function<double(int, int, int)>& score, const Tensor& log_dur) {
    int K = params.dims().K, M = params.dims().M;
    Tensor tails = duration_tails(log_dur, K, M);
    std::vector<double> terms;
    for (int s = 0; s < T; ++s) {
        int remaining = T - s;
        if (remaining > M) continue;  // no single segment can cover s..T-1
        for (int k = 0; k < K; ++k) {
            double a = A[static_cast<size_t>(s) * K + k];
            if (a == neg_inf()) continue;
            terms.push_back(a + score(s, remaining, k + 1) + tails.at(k, remaining - 1));
        }
    }
    return terms.empty() ? neg_inf() : log_sum_exp(terms);
}

}  // namespace

double exact_log_likelihood_from_table(const SegmentScoreTable& table, const GenerativeParams& params) {
    Tensor lt = params.log_trans_rows();
    Tensor ld = params.log_dur_rows();
    auto score = [&table](int start, int len, int state) { return table.at(start, len, state); };
    std::vector<double> A = forward_starts(params, table.T, score, lt, ld);
    return finish_forward(A, params, table.T, score, ld);
}

double exact_log_likelihood(const Sequence& x, const GenerativeParams& params, const OracleOptions& opts) {
    check_dims(x, params, "exact_log_likelihood");
    check_dp_guard(x, params, "exact_log_likelihood");
    if (!opts.streaming) {
        SegmentScoreTable table = compute_segment_scores(x, params);
        return exact_log_likelihood_from_table(table, params);
    }
    // Streaming mode: recompute each segment score on demand.
    Tensor lt = params.log_trans_rows();
    Tensor ld = params.log_dur_rows();
    auto score = [&x, &params](int start, int len, int state) {
        return segment_log_prob(x, start, len, state, params);
    };
    std::vector<double> A = forward_starts(params, x.length(), score, lt, ld);
    return finish_forward(A, params, x.length(), score, ld);
}

LatentPath map_segmentation(const Sequence& x, const GenerativeParams& params) {
    check_dims(x, params, "map_segmentation");
    check_dp_guard(x, params, "map_segmentation");
    const ModelDims& dm = params.dims();
    int T = x.length(), K = dm.K, M = dm.M;
    SegmentScoreTable table = compute_segment_scores(x, params);
    Tensor li = params.log_init();
    Tensor lt = params.log_trans_rows();
    Tensor ld = params.log_dur_rows();

    // Amax(s, k): best score of a prefix ending with a boundary into state k
    // at s. back_state / back_dur trace the previous segment.
    std::vector<double> Amax(static_cast<size_t>(T) * K, neg_inf());
    std::vector<int> back_state(static_cast<size_t>(T) * K, -1);
    std::vector<int> back_dur(static_cast<size_t>(T) * K, -1);
    for (int k = 0; k < K; ++k) Amax[static_cast<size_t>(k)] = li[k];

    std::vector<double> C(static_cast<size_t>(K));
    std::vector<int> C_dur(static_cast<size_t>(K));
    for (int s = 1; s < T; ++s) {
        for (int kp = 0; kp < K; ++kp) {
            double best = neg_inf();
            int best_delta = -1;
            for (int delta = 1; delta <= std::min(M, s); ++delta) {
                int start = s - delta;
                double a = Amax[static_cast<size_t>(start) * K + kp];
                if (a == neg_inf()) continue;
                double v = a + ld.at(kp, delta - 1) + table.at(start, delta, kp + 1);
                if (v > best) {
                    best = v;
                    best_delta = delta;
                }
            }
            C[static_cast<size_t>(kp)] = best;
            C_dur[static_cast<size_t>(kp)] = best_delta;
        }
        for (int k = 0; k < K; ++k) {
            double best = neg_inf();
            int best_kp = -1;
            for (int kp = 0; kp < K; ++kp) {
                if (C[static_cast<size_t>(kp)] == neg_inf()) continue;
                double v = C[static_cast<size_t>(kp)] + lt.at(kp, k);
                if (v > best) {
                    best = v;
                    best_kp = kp;
                }
            }
            Amax[static_cast<size_t>(s) * K + k] = best;
            back_state[static_cast<size_t>(s) * K + k] = best_kp;
            back_dur[static_cast<size_t>(s) * K + k] = best_kp >= 0 ? C_dur[static_cast<size_t>(best_kp)] : -1;
        }
    }

    // Final segment: a concrete drawn duration delta >= remaining.
    double best = neg_inf();
    int best_s = -1, best_k = -1, best_delta = -1;
    for (int s = 0; s < T; ++s) {
        int remaining = T - s;
        if (remaining > M) continue;
        for (int k = 0; k < K; ++k) {
            double a = Amax[static_cast<size_t>(s) * K + k];
            if (a == neg_inf()) continue;
            double base = a + table.at(s, remaining, k + 1);
            for (int delta = remaining; delta <= M; ++delta) {
                double v = base + ld.at(k, delta - 1);
                if (v > best) {
                    best = v;
                    best_s = s;
                    best_k = k;
                    best_delta = delta;
                }
            }
        }
    }
    if (best_s < 0) throw contract_error("map_segmentation: no feasible path");

    LatentPath path;
    path.z.assign(static_cast<size_t>(T), 0);
    path.d.assign(static_cast<size_t>(T), 0);
    int s = best_s, k = best_k, delta = best_delta;
    for (int i = s; i < T; ++i) {
        path.z[static_cast<size_t>(i)] = k + 1;
        path.d[static_cast<size_t>(i)] = delta - (i - s);
    }
    while (s > 0) {
        int kp = back_state[static_cast<size_t>(s) * K + k];
        int dl = back_dur[static_cast<size_t>(s) * K + k];
        int start = s - dl;
        for (int i = 0; i < dl; ++i) {
            path.z[static_cast<size_t>(start + i)] = kp + 1;
            path.d[static_cast<size_t>(start + i)] = dl - i;
        }
        s = start;
        k = kp;
    }
    return path;
}

double brute_force_log_likelihood(const Sequence& x, const GenerativeParams& params) {
    check_dims(x, params, "brute_force_log_likelihood");
    const ModelDims& dm = params.dims();
    std::int64_t n = count_valid_paths(x.length(), dm.K, dm.M, kEnumGuard + 1);
    if (n > kEnumGuard)
        throw resource_error("brute_force_log_likelihood: more than " + std::to_string(kEnumGuard) +
                             " valid paths");
    std::vector<double> terms;
    terms.reserve(static_cast<size_t>(n));
    for_each_valid_path(x.length(), dm.K, dm.M,
                        [&](const LatentPath& path) { terms.push_back(joint_log_prob(x, path, params)); });
    return log_sum_exp(terms);
}

}  // namespace ssnn
