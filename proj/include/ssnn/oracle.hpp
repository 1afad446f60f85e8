#pragma once

#include <cstdint>
#include <functional>

#include "ssnn/generative.hpp"

namespace ssnn {

// E(t, l, k): emission log-prob of a segment starting at t (0-based) with
// observed length l in state k (1-based), built with the same SegmentScorer
// as segment_log_prob so the two agree exactly. Entries with l > T - t are
// unused. Memory O(T*M*K).
struct SegmentScoreTable {
    int T = 0, M = 0, K = 0;
    std::vector<double> e;

    double at(int t, int len, int state) const {
        return e[(static_cast<std::int64_t>(t) * M + (len - 1)) * K + (state - 1)];
    }
    double& at(int t, int len, int state) {
        return e[(static_cast<std::int64_t>(t) * M + (len - 1)) * K + (state - 1)];
    }
};

SegmentScoreTable compute_segment_scores(const Sequence& x, const GenerativeParams& params);

// Number of countdown-valid (z, d) paths, saturated at `cap`.
std::int64_t count_valid_paths(int T, int K, int M, std::int64_t cap = INT64_C(1) << 62);

// Visits every countdown-valid path of length T (right-censored finals
// included). The callback receives a reusable path; copy to keep it.
void for_each_valid_path(int T, int K, int M, const std::function<void(const LatentPath&)>& fn);

struct OracleOptions {
    // When true, segment scores are recomputed per boundary instead of being
    // tabulated: O(T*K*M^2) time, O(T*K) memory.
    bool streaming = false;
};

// log p(x) by the boundary-indexed forward recursion over segments, in the
// log domain; right-censored final durations contribute their tail mass.
// Guard: K*M*T <= 1e7.
double exact_log_likelihood(const Sequence& x, const GenerativeParams& params, const OracleOptions& opts = {});

// Forward recursion on a precomputed score table (exposed for tests).
double exact_log_likelihood_from_table(const SegmentScoreTable& table, const GenerativeParams& params);

// argmax_(z,d) log p(x, z, d) via max-product with backpointers. Ties break
// toward the smallest state index, then the smallest duration.
LatentPath map_segmentation(const Sequence& x, const GenerativeParams& params);

// log-sum-exp of joint_log_prob over every valid path. Guard: <= 1e6 paths.
double brute_force_log_likelihood(const Sequence& x, const GenerativeParams& params);

}  // namespace ssnn
